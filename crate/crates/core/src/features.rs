//! Engineered temporal and price features used by the demand model and the
//! agents' state encoders.
//!
//! Rolling features return `None` when the history is too short; the
//! simulator then substitutes the product's reference demand for level
//! features and zero for change features (see [`FeatureVector::build`]).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{month_of_week, WEEKS_PER_YEAR};

/// Mean of the last `k` entries.
pub fn qrm(history: &[f64], k: usize) -> Option<f64> {
    if k == 0 || history.len() < k {
        return None;
    }
    let tail = &history[history.len() - k..];
    Some(tail.iter().sum::<f64>() / k as f64)
}

/// `qrm(4) − qrm(2)`: negative when recent demand runs above the longer mean.
pub fn trend(history: &[f64]) -> Option<f64> {
    Some(qrm(history, 4)? - qrm(history, 2)?)
}

/// Last value minus the two-week rolling mean.
pub fn acceleration(history: &[f64]) -> Option<f64> {
    Some(*history.last()? - qrm(history, 2)?)
}

/// Population standard deviation of the last `k` entries.
pub fn rolling_volatility(history: &[f64], k: usize) -> Option<f64> {
    if k < 2 {
        return None;
    }
    let mean = qrm(history, k)?;
    let tail = &history[history.len() - k..];
    let var = tail.iter().map(|q| (q - mean).powi(2)).sum::<f64>() / k as f64;
    Some(var.sqrt())
}

/// Price relative to the mean of its category cluster (own price included).
pub fn pvc_avg(price: f64, cluster_prices: &[f64]) -> Result<f64> {
    if cluster_prices.is_empty() {
        return Err(Error::Domain("empty cluster price list".into()));
    }
    let mean = cluster_prices.iter().sum::<f64>() / cluster_prices.len() as f64;
    if !(mean > 0.0) {
        return Err(Error::Domain(format!("cluster mean price {mean} is not positive")));
    }
    Ok(price / mean)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeasonalEncoding {
    pub week_sin: f64,
    pub week_cos: f64,
    pub month_sin: f64,
    pub month_cos: f64,
}

pub fn seasonal_encoding(week: u32, month: u32) -> Result<SeasonalEncoding> {
    if !(1..=53).contains(&week) {
        return Err(Error::Domain(format!("week {week} outside 1..=53")));
    }
    if !(1..=12).contains(&month) {
        return Err(Error::Domain(format!("month {month} outside 1..=12")));
    }
    let w = 2.0 * PI * week as f64 / WEEKS_PER_YEAR as f64;
    let m = 2.0 * PI * month as f64 / 12.0;
    Ok(SeasonalEncoding {
        week_sin: w.sin(),
        week_cos: w.cos(),
        month_sin: m.sin(),
        month_cos: m.cos(),
    })
}

/// Demand-model inputs for one product in one week.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub qrm2: f64,
    pub qrm4: f64,
    pub trend: f64,
    pub acceleration: f64,
    pub volatility: f64,
    pub pvc_avg: f64,
    pub week_sin: f64,
    pub week_cos: f64,
    pub month_sin: f64,
    pub month_cos: f64,
    pub log_price: f64,
    pub price_sq: f64,
    pub holiday: f64,
    pub lag1_demand: f64,
}

/// Rolling window used for the volatility feature.
pub const VOLATILITY_WINDOW: usize = 4;

impl FeatureVector {
    /// Builds features from a demand history (oldest first), applying the
    /// warm-up substitutions when the history is short.
    pub fn build(
        demand_history: &[f64],
        reference_demand: f64,
        price: f64,
        cluster_prices: &[f64],
        week: u32,
        holiday: bool,
    ) -> Result<Self> {
        if !(price > 0.0) {
            return Err(Error::Domain(format!("price {price} is not positive")));
        }
        let seasonal = seasonal_encoding(week, month_of_week(week))?;
        Ok(Self {
            qrm2: qrm(demand_history, 2).unwrap_or(reference_demand),
            qrm4: qrm(demand_history, 4).unwrap_or(reference_demand),
            trend: trend(demand_history).unwrap_or(0.0),
            acceleration: acceleration(demand_history).unwrap_or(0.0),
            volatility: rolling_volatility(demand_history, VOLATILITY_WINDOW).unwrap_or(0.0),
            pvc_avg: pvc_avg(price, cluster_prices)?,
            week_sin: seasonal.week_sin,
            week_cos: seasonal.week_cos,
            month_sin: seasonal.month_sin,
            month_cos: seasonal.month_cos,
            log_price: price.ln(),
            price_sq: price * price,
            holiday: if holiday { 1.0 } else { 0.0 },
            lag1_demand: demand_history.last().copied().unwrap_or(reference_demand),
        })
    }

    /// Features with every modifier neutral: no history, own price equal to
    /// the cluster mean, a week whose sine is zero, no holiday.
    pub fn neutral(reference_demand: f64, price: f64) -> Self {
        Self::build(&[], reference_demand, price, &[price], WEEKS_PER_YEAR, false)
            .expect("neutral features are always valid")
    }
}
