//! Retail transaction CSV ingestion: parsing, cleaning and weekly aggregation.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use chrono::{Datelike, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Required header names, in canonical order.
pub const COLUMNS: [&str; 8] = [
    "InvoiceNo",
    "StockCode",
    "Description",
    "Quantity",
    "InvoiceDate",
    "UnitPrice",
    "CustomerID",
    "Country",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transaction {
    pub invoice_no: String,
    pub stock_code: String,
    pub description: String,
    pub quantity: i64,
    pub invoice_date: NaiveDateTime,
    pub unit_price: f64,
    pub customer_id: Option<String>,
    pub country: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowError {
    /// 1-based line number in the file, header included.
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransactionTable {
    pub rows: Vec<Transaction>,
    pub errors: Vec<RowError>,
}

pub fn load_transactions(path: impl AsRef<Path>) -> Result<TransactionTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_transactions(file)
}

fn parse_date(raw: &str) -> Option<NaiveDateTime> {
    let raw = raw.trim();
    const FORMATS: [&str; 4] = [
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M",
        "%Y-%m-%dT%H:%M",
    ];
    FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(raw, f).ok())
        .or_else(|| {
            NaiveDate::parse_from_str(raw, "%Y-%m-%d")
                .ok()
                .and_then(|d| d.and_hms_opt(0, 0, 0))
        })
}

pub fn read_transactions<R: Read>(reader: R) -> Result<TransactionTable> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut idx = [0usize; 8];
    for (slot, name) in idx.iter_mut().zip(COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.trim_start_matches('\u{feff}') == name)
            .ok_or_else(|| Error::Schema(name.to_string()))?;
    }

    let mut table = TransactionTable::default();
    for record in rdr.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                table.errors.push(RowError {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| record.get(idx[i]).unwrap_or("").trim();
        let fail = |message: String| RowError { line, message };

        let quantity = match field(3).parse::<i64>() {
            Ok(q) => q,
            Err(_) => {
                table.errors.push(fail(format!("unparseable Quantity `{}`", field(3))));
                continue;
            }
        };
        let Some(invoice_date) = parse_date(field(4)) else {
            table.errors.push(fail(format!("unparseable InvoiceDate `{}`", field(4))));
            continue;
        };
        let unit_price = match field(5).parse::<f64>() {
            Ok(p) if p.is_finite() => p,
            _ => {
                table.errors.push(fail(format!("unparseable UnitPrice `{}`", field(5))));
                continue;
            }
        };
        let customer = field(6);
        table.rows.push(Transaction {
            invoice_no: field(0).to_string(),
            stock_code: field(1).to_string(),
            description: field(2).to_string(),
            quantity,
            invoice_date,
            unit_price,
            customer_id: (!customer.is_empty()).then(|| customer.to_string()),
            country: field(7).to_string(),
        });
    }
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RemovalReason {
    NegativeQuantity,
    NonPositivePrice,
    MissingCustomer,
}

impl RemovalReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RemovalReason::NegativeQuantity => "negative-quantity",
            RemovalReason::NonPositivePrice => "non-positive-price",
            RemovalReason::MissingCustomer => "missing-customer",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CleanedTable {
    pub table: TransactionTable,
    /// Rows dropped per reason; a row counts once, under its first failing check.
    pub removed: BTreeMap<RemovalReason, usize>,
}

/// Drops returns/cancellations (Quantity ≤ 0), non-positive prices, and rows
/// without a customer identifier.
pub fn clean_transactions(table: TransactionTable) -> CleanedTable {
    let mut removed = BTreeMap::new();
    let mut rows = Vec::with_capacity(table.rows.len());
    for row in table.rows {
        let reason = if row.quantity <= 0 {
            Some(RemovalReason::NegativeQuantity)
        } else if !(row.unit_price > 0.0) {
            Some(RemovalReason::NonPositivePrice)
        } else if row.customer_id.is_none() {
            Some(RemovalReason::MissingCustomer)
        } else {
            None
        };
        match reason {
            Some(r) => *removed.entry(r).or_insert(0) += 1,
            None => rows.push(row),
        }
    }
    CleanedTable {
        table: TransactionTable {
            rows,
            errors: table.errors,
        },
        removed,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeeklySales {
    pub product: String,
    /// ISO week-numbering year.
    pub year: i32,
    pub week: u32,
    /// Quantity-weighted mean unit price.
    pub mean_price: f64,
    pub total_quantity: f64,
}

/// One record per (product, ISO year-week), sorted by product then week.
pub fn aggregate_weekly(table: &TransactionTable) -> Vec<WeeklySales> {
    let mut acc: BTreeMap<(String, i32, u32), (f64, f64)> = BTreeMap::new();
    for row in &table.rows {
        let iso = row.invoice_date.date().iso_week();
        let e = acc
            .entry((row.stock_code.clone(), iso.year(), iso.week()))
            .or_insert((0.0, 0.0));
        e.0 += row.quantity as f64;
        e.1 += row.quantity as f64 * row.unit_price;
    }
    acc.into_iter()
        .map(|((product, year, week), (qty, spend))| WeeklySales {
            product,
            year,
            week,
            mean_price: if qty != 0.0 { spend / qty } else { 0.0 },
            total_quantity: qty,
        })
        .collect()
}
