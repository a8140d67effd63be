//! Least-squares calibration of [`DemandParams`] from weekly sales records.
//!
//! Fits, per product-week with a recorded previous week,
//!
//! ```text
//! ln Q_t = α_product + ε·ln P_t + h·holiday_t + a_s·sin(week_t) + w_l·ln Q_{t−1}
//! ```
//!
//! The product intercepts absorb the reference level and initial price, so
//! the fitted slopes map one-to-one onto the reference model's parameters.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use chrono::{Datelike, NaiveDate, Weekday};
use log::warn;
use nalgebra::{DMatrix, DVector};

use super::transactions::WeeklySales;
use super::DemandParams;
use crate::error::{Error, Result};
use crate::market::{holiday_flag, WEEKS_PER_YEAR};

/// Minimum number of usable product-weeks.
pub const MIN_RECORDS: usize = 30;

/// Cluster assigned to products without an explicit mapping.
pub const DEFAULT_CLUSTER: i64 = 1;

const RANK_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationFit {
    pub params: DemandParams,
    pub rows_used: usize,
    /// Population std of the log-space residuals.
    pub residual_std: f64,
}

fn week_ordinal(year: i32, week: u32) -> Option<i64> {
    let monday = NaiveDate::from_isoywd_opt(year, week, Weekday::Mon)?;
    Some(monday.num_days_from_ce() as i64 / 7)
}

pub fn calibrate(records: &[WeeklySales], clusters: &BTreeMap<String, i64>) -> Result<DemandParams> {
    calibrate_fit(records, clusters).map(|f| f.params)
}

pub fn calibrate_fit(records: &[WeeklySales], clusters: &BTreeMap<String, i64>) -> Result<CalibrationFit> {
    let mut by_product: BTreeMap<&str, Vec<&WeeklySales>> = BTreeMap::new();
    for r in records {
        if !(r.total_quantity > 0.0 && r.mean_price > 0.0) {
            continue;
        }
        by_product.entry(r.product.as_str()).or_default().push(r);
    }

    struct Row {
        product: usize,
        log_p: f64,
        holiday: f64,
        week_sin: f64,
        lag_log_q: f64,
        log_q: f64,
    }
    let mut rows = Vec::new();
    let products: Vec<&str> = by_product.keys().copied().collect();
    for (pi, product) in products.iter().enumerate() {
        let mut series = by_product[product].clone();
        series.sort_by_key(|r| (r.year, r.week));
        for pair in series.windows(2) {
            let (prev, cur) = (pair[0], pair[1]);
            let (Some(a), Some(b)) = (week_ordinal(prev.year, prev.week), week_ordinal(cur.year, cur.week)) else {
                continue;
            };
            if b - a != 1 {
                continue;
            }
            rows.push(Row {
                product: pi,
                log_p: cur.mean_price.ln(),
                holiday: if holiday_flag(cur.week)? { 1.0 } else { 0.0 },
                week_sin: (2.0 * PI * cur.week as f64 / WEEKS_PER_YEAR as f64).sin(),
                lag_log_q: prev.total_quantity.ln(),
                log_q: cur.total_quantity.ln(),
            });
        }
    }
    if rows.len() < MIN_RECORDS {
        return Err(Error::Calibration(format!(
            "need at least {MIN_RECORDS} consecutive product-weeks, found {}",
            rows.len()
        )));
    }

    let n_prod = products.len();
    let n_cols = n_prod + 4;
    let x = DMatrix::from_fn(rows.len(), n_cols, |i, j| {
        let r = &rows[i];
        match j {
            j if j < n_prod => (r.product == j) as u8 as f64,
            j if j == n_prod => r.log_p,
            j if j == n_prod + 1 => r.holiday,
            j if j == n_prod + 2 => r.week_sin,
            _ => r.lag_log_q,
        }
    });
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.log_q));

    // Column scaling keeps the rank test meaningful regardless of units.
    let norms: Vec<f64> = (0..n_cols).map(|j| x.column(j).norm()).collect();
    if let Some(j) = norms.iter().position(|&n| n == 0.0) {
        return Err(Error::Calibration(format!("design column {j} is identically zero")));
    }
    let scaled = DMatrix::from_fn(rows.len(), n_cols, |i, j| x[(i, j)] / norms[j]);
    let svd = scaled.clone().svd(true, true);
    let s_max = svd.singular_values.max();
    let s_min = svd.singular_values.min();
    if !(s_min > RANK_TOLERANCE * s_max) {
        return Err(Error::Calibration(
            "design matrix is rank deficient (no independent price variation?)".into(),
        ));
    }
    let beta_scaled = svd
        .solve(&y, 0.0)
        .map_err(|e| Error::Calibration(format!("least squares failed: {e}")))?;
    let beta: Vec<f64> = beta_scaled.iter().zip(&norms).map(|(b, n)| b / n).collect();

    let residuals = &y - &x * DVector::from_vec(beta.clone());
    let residual_std = (residuals.norm_squared() / rows.len() as f64).sqrt();

    let mut elasticity = beta[n_prod];
    let mut holiday_uplift = beta[n_prod + 1].exp();
    let mut seasonal_amp = beta[n_prod + 2];
    let mut lag_weight = beta[n_prod + 3];
    if elasticity > 0.0 {
        warn!("fitted elasticity {elasticity} is positive; clamping to 0");
        elasticity = 0.0;
    }
    if holiday_uplift < 1.0 {
        warn!("fitted holiday uplift {holiday_uplift} below 1; clamping");
        holiday_uplift = 1.0;
    }
    if seasonal_amp < 0.0 {
        warn!("fitted seasonal amplitude {seasonal_amp} negative; clamping to 0");
        seasonal_amp = 0.0;
    }
    if !(0.0..1.0).contains(&lag_weight) {
        warn!("fitted lag weight {lag_weight} outside [0, 1); clamping");
        lag_weight = lag_weight.clamp(0.0, 0.99);
    }

    // Cluster multipliers: per-cluster mean weekly demand over the grand mean.
    let mut cluster_sum: BTreeMap<i64, (f64, usize)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.total_quantity > 0.0) {
        let c = clusters.get(&r.product).copied().unwrap_or(DEFAULT_CLUSTER);
        let e = cluster_sum.entry(c).or_insert((0.0, 0));
        e.0 += r.total_quantity;
        e.1 += 1;
    }
    let means: BTreeMap<i64, f64> = cluster_sum.into_iter().map(|(c, (s, n))| (c, s / n as f64)).collect();
    let grand = means.values().sum::<f64>() / means.len() as f64;
    let cluster_base = means.into_iter().map(|(c, m)| (c, m / grand)).collect();

    Ok(CalibrationFit {
        params: DemandParams {
            elasticity,
            holiday_uplift,
            cluster_base,
            seasonal_amp,
            lag_weight,
            noise_sigma: residual_std,
            ..DemandParams::default()
        },
        rows_used: rows.len(),
        residual_std,
    })
}
