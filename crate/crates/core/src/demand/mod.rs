//! Demand oracle used by the simulator.
//!
//! The reference model is log-linear in the engineered features:
//!
//! ```text
//! ln Q = ln(B·c) + ε·ln(P/P₀) − w_c·ln(PVC) + a_s·sin(week) + ln(u)·holiday
//!        + w_l·ln(lag1 / (B·c)) + η,     η ~ N(0, σ²)
//! ```
//!
//! where `B` is the product's baseline demand, `c` its cluster multiplier and
//! `P₀` its initial price. `B·c` is the product's *reference demand*: the
//! fixed point of the lag recursion under neutral conditions.

pub mod calibrate;
pub mod transactions;

use std::collections::BTreeMap;

use rand::RngCore;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::market::{ProductSpec, DEFAULT_CLUSTERS};

pub use calibrate::calibrate;
pub use transactions::{aggregate_weekly, clean_transactions, load_transactions};

fn default_elasticity() -> f64 {
    -0.072
}
fn default_uplift() -> f64 {
    1.35
}
fn default_seasonal() -> f64 {
    0.15
}
fn default_lag() -> f64 {
    0.3
}
fn default_sigma() -> f64 {
    0.05
}
fn default_competitor() -> f64 {
    0.5
}
fn default_cluster_base() -> BTreeMap<i64, f64> {
    DEFAULT_CLUSTERS.iter().map(|&c| (c, 1.0)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandParams {
    #[serde(default = "default_elasticity")]
    pub elasticity: f64,
    #[serde(default = "default_uplift")]
    pub holiday_uplift: f64,
    #[serde(default = "default_cluster_base")]
    pub cluster_base: BTreeMap<i64, f64>,
    #[serde(default = "default_seasonal")]
    pub seasonal_amp: f64,
    #[serde(default = "default_lag")]
    pub lag_weight: f64,
    /// Standard deviation of the log-space demand shock.
    #[serde(default = "default_sigma")]
    pub noise_sigma: f64,
    #[serde(default = "default_competitor")]
    pub competitor_weight: f64,
}

impl Default for DemandParams {
    fn default() -> Self {
        Self {
            elasticity: default_elasticity(),
            holiday_uplift: default_uplift(),
            cluster_base: default_cluster_base(),
            seasonal_amp: default_seasonal(),
            lag_weight: default_lag(),
            noise_sigma: default_sigma(),
            competitor_weight: default_competitor(),
        }
    }
}

impl DemandParams {
    pub fn validate(&self, clusters_in_use: &[i64]) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("demand params: {what}")));
        if !(self.elasticity <= 0.0) {
            return bad("elasticity must be <= 0");
        }
        if !(self.holiday_uplift >= 1.0) {
            return bad("holiday_uplift must be >= 1");
        }
        if !(self.seasonal_amp >= 0.0) {
            return bad("seasonal_amp must be >= 0");
        }
        if !(0.0..1.0).contains(&self.lag_weight) {
            return bad("lag_weight must lie in [0, 1)");
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be >= 0");
        }
        if !(self.competitor_weight >= 0.0) {
            return bad("competitor_weight must be >= 0");
        }
        for c in clusters_in_use {
            match self.cluster_base.get(c) {
                Some(&b) if b > 0.0 => {}
                Some(_) => return bad(&format!("cluster_base for cluster {c} must be > 0")),
                None => return bad(&format!("no cluster_base entry for cluster {c}")),
            }
        }
        Ok(())
    }

    pub fn cluster_multiplier(&self, cluster_id: i64) -> Result<f64> {
        self.cluster_base
            .get(&cluster_id)
            .copied()
            .ok_or_else(|| Error::Config(format!("no cluster_base entry for cluster {cluster_id}")))
    }

    /// Copy with the stochastic shock switched off.
    pub fn noiseless(&self) -> Self {
        Self {
            noise_sigma: 0.0,
            ..self.clone()
        }
    }
}

/// Everything the oracle needs to price one product-week.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandQuery {
    pub price: f64,
    pub initial_price: f64,
    pub baseline_demand: f64,
    pub cluster_id: i64,
    pub features: FeatureVector,
}

impl DemandQuery {
    /// Query at the product's initial price with every modifier neutral.
    pub fn neutral(spec: &ProductSpec, reference_demand: f64) -> Self {
        Self {
            price: spec.initial_price,
            initial_price: spec.initial_price,
            baseline_demand: spec.baseline_demand,
            cluster_id: spec.cluster_id,
            features: FeatureVector::neutral(reference_demand, spec.initial_price),
        }
    }

    pub fn with_price(&self, price: f64) -> Self {
        Self {
            price,
            ..self.clone()
        }
    }
}

/// A pluggable demand model.
pub trait DemandOracle: Send + Sync {
    /// Noise-free expected units.
    fn expected_demand(&self, query: &DemandQuery) -> Result<f64>;

    /// One stochastic draw; defaults to the expectation.
    fn sample_demand(&self, query: &DemandQuery, _rng: &mut dyn RngCore) -> Result<f64> {
        self.expected_demand(query)
    }

    /// Demand level used for lag normalisation and warm-up substitution.
    fn reference_demand(&self, spec: &ProductSpec) -> Result<f64> {
        Ok(spec.baseline_demand)
    }
}

/// The closed-form log-linear demand model.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceDemandModel {
    pub params: DemandParams,
}

impl ReferenceDemandModel {
    pub fn new(params: DemandParams) -> Self {
        Self { params }
    }

    fn log_mean(&self, q: &DemandQuery) -> Result<f64> {
        let p = &self.params;
        if !(q.price > 0.0) || !(q.initial_price > 0.0) {
            return Err(Error::Domain(format!("non-positive price {}", q.price)));
        }
        let reference = q.baseline_demand * p.cluster_multiplier(q.cluster_id)?;
        let f = &q.features;
        if !(f.pvc_avg > 0.0) || !(f.lag1_demand > 0.0) || !(reference > 0.0) {
            return Err(Error::Domain("demand inputs must be positive".into()));
        }
        Ok(reference.ln() + p.elasticity * (q.price / q.initial_price).ln()
            - p.competitor_weight * f.pvc_avg.ln()
            + p.seasonal_amp * f.week_sin
            + p.holiday_uplift.ln() * f.holiday
            + p.lag_weight * (f.lag1_demand / reference).ln())
    }
}

impl DemandOracle for ReferenceDemandModel {
    fn expected_demand(&self, query: &DemandQuery) -> Result<f64> {
        predict_demand(query, &self.params, None)
    }

    fn sample_demand(&self, query: &DemandQuery, rng: &mut dyn RngCore) -> Result<f64> {
        predict_demand(query, &self.params, Some(rng))
    }

    fn reference_demand(&self, spec: &ProductSpec) -> Result<f64> {
        Ok(spec.baseline_demand * self.params.cluster_multiplier(spec.cluster_id)?)
    }
}

/// Evaluates the reference model. With `rng = None` or `noise_sigma = 0` the
/// result is deterministic.
pub fn predict_demand(query: &DemandQuery, params: &DemandParams, rng: Option<&mut dyn RngCore>) -> Result<f64> {
    let model = ReferenceDemandModel { params: params.clone() };
    let mut log_q = model.log_mean(query)?;
    if let Some(rng) = rng {
        if params.noise_sigma > 0.0 {
            let normal = Normal::new(0.0, params.noise_sigma)
                .map_err(|e| Error::Config(format!("noise_sigma: {e}")))?;
            log_q += normal.sample(rng);
        }
    }
    let q = log_q.exp();
    Ok(if q.is_finite() { q.max(0.0) } else { f64::MAX })
}

/// Number of points in the default price sweep.
pub const SWEEP_POINTS: usize = 41;
/// Width of the centered smoothing window applied to the sweep.
pub const SMOOTHING_WINDOW: usize = 5;

/// 41 evenly spaced multipliers covering 0.5× to 2.5× the base price.
pub fn default_sweep_grid() -> Vec<f64> {
    (0..SWEEP_POINTS)
        .map(|i| 0.5 + 2.0 * i as f64 / (SWEEP_POINTS - 1) as f64)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub scale: f64,
    pub price: f64,
    pub demand: f64,
}

/// Noise-free demand at each scaled price, all other inputs held fixed.
pub fn price_sweep(oracle: &dyn DemandOracle, base: &DemandQuery, scales: &[f64]) -> Result<Vec<SweepPoint>> {
    scales
        .iter()
        .map(|&scale| {
            if !(scale > 0.0) {
                return Err(Error::Domain(format!("non-positive price multiplier {scale}")));
            }
            let price = base.price * scale;
            let demand = oracle.expected_demand(&base.with_price(price))?;
            Ok(SweepPoint { scale, price, demand })
        })
        .collect()
}

fn centered_rolling_mean(xs: &[f64], window: usize) -> Vec<f64> {
    xs.windows(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect()
}

/// Price elasticity from a counterfactual sweep: the slope of the log-log
/// demand curve after a 5-point centered rolling mean. Smoothing is applied
/// to both log coordinates, so an exact power law keeps its exponent.
pub fn estimate_elasticity(oracle: &dyn DemandOracle, base: &DemandQuery, scales: &[f64]) -> Result<f64> {
    if scales.len() < SMOOTHING_WINDOW {
        return Err(Error::InsufficientData(format!(
            "elasticity sweep needs at least {SMOOTHING_WINDOW} points, got {}",
            scales.len()
        )));
    }
    let curve = price_sweep(oracle, base, scales)?;
    let mut log_p = Vec::with_capacity(curve.len());
    let mut log_q = Vec::with_capacity(curve.len());
    for pt in &curve {
        if !(pt.demand > 0.0) {
            return Err(Error::Domain(format!("zero demand at price {}", pt.price)));
        }
        log_p.push(pt.price.ln());
        log_q.push(pt.demand.ln());
    }
    let xs = centered_rolling_mean(&log_p, SMOOTHING_WINDOW);
    let ys = centered_rolling_mean(&log_q, SMOOTHING_WINDOW);
    ols_slope(&xs, &ys)
}

fn ols_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InsufficientData("price sweep has no price variation".into()));
    }
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::make_default_portfolio;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec() -> ProductSpec {
        make_default_portfolio(1, &[1], 3).unwrap().remove(0)
    }

    fn neutral_params() -> DemandParams {
        DemandParams {
            noise_sigma: 0.0,
            ..DemandParams::default()
        }
    }

    #[test]
    fn neutral_query_returns_reference_demand() {
        let s = spec();
        let mut params = neutral_params();
        params.cluster_base.insert(1, 1.7);
        let model = ReferenceDemandModel::new(params.clone());
        let reference = model.reference_demand(&s).unwrap();
        let q = DemandQuery::neutral(&s, reference);
        let d = predict_demand(&q, &params, None).unwrap();
        assert!((d - s.baseline_demand * 1.7).abs() < 1e-9);
    }

    #[test]
    fn doubling_price_scales_by_power_law() {
        let s = spec();
        let params = neutral_params();
        let q = DemandQuery::neutral(&s, s.baseline_demand);
        let base = predict_demand(&q, &params, None).unwrap();
        let doubled = predict_demand(&q.with_price(2.0 * s.initial_price), &params, None).unwrap();
        assert!((doubled / base - 2f64.powf(-0.072)).abs() < 1e-12);
        assert!((doubled / base - 0.9513).abs() < 1e-4);
    }

    #[test]
    fn holiday_multiplies_by_uplift() {
        let s = spec();
        let params = neutral_params();
        let mut q = DemandQuery::neutral(&s, s.baseline_demand);
        let base = predict_demand(&q, &params, None).unwrap();
        q.features.holiday = 1.0;
        let hol = predict_demand(&q, &params, None).unwrap();
        assert!((hol / base - 1.35).abs() < 1e-12);
    }

    #[test]
    fn non_positive_price_is_a_domain_error() {
        let s = spec();
        let q = DemandQuery::neutral(&s, s.baseline_demand).with_price(0.0);
        assert!(matches!(predict_demand(&q, &neutral_params(), None), Err(Error::Domain(_))));
    }

    #[test]
    fn noise_free_prediction_is_bitwise_deterministic() {
        let s = spec();
        let params = neutral_params();
        let q = DemandQuery::neutral(&s, s.baseline_demand).with_price(7.3);
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(2);
        let a = predict_demand(&q, &params, Some(&mut r1)).unwrap();
        let b = predict_demand(&q, &params, Some(&mut r2)).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn demand_strictly_decreasing_in_price() {
        let s = spec();
        let params = neutral_params();
        let q = DemandQuery::neutral(&s, s.baseline_demand);
        let mut prev = f64::INFINITY;
        for i in 0..100 {
            let price = 0.5 + 0.2 * i as f64;
            let d = predict_demand(&q.with_price(price), &params, None).unwrap();
            assert!(d.is_finite() && d > 0.0);
            assert!(d < prev);
            prev = d;
        }
    }

    #[test]
    fn noisy_demand_is_positive_and_finite() {
        let s = spec();
        let params = DemandParams {
            noise_sigma: 0.5,
            ..DemandParams::default()
        };
        let q = DemandQuery::neutral(&s, s.baseline_demand);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let d = predict_demand(&q, &params, Some(&mut rng)).unwrap();
            assert!(d.is_finite() && d > 0.0);
        }
    }

    #[test]
    fn sweep_grid_has_41_points() {
        let g = default_sweep_grid();
        assert_eq!(g.len(), 41);
        assert!((g[0] - 0.5).abs() < 1e-12 && (g[40] - 2.5).abs() < 1e-12);
    }

    struct Flat;
    impl DemandOracle for Flat {
        fn expected_demand(&self, _: &DemandQuery) -> Result<f64> {
            Ok(42.0)
        }
    }

    struct UnitElastic;
    impl DemandOracle for UnitElastic {
        fn expected_demand(&self, q: &DemandQuery) -> Result<f64> {
            Ok(120.0 / q.price)
        }
    }

    #[test]
    fn elasticity_of_reference_model() {
        let s = spec();
        for eps in [-0.072, -0.5, -1.0] {
            let params = DemandParams {
                elasticity: eps,
                ..neutral_params()
            };
            let model = ReferenceDemandModel::new(params);
            let q = DemandQuery::neutral(&s, s.baseline_demand);
            let est = estimate_elasticity(&model, &q, &default_sweep_grid()).unwrap();
            assert!((est - eps).abs() < 0.005, "eps {eps} estimated {est}");
        }
    }

    #[test]
    fn elasticity_of_flat_and_unit_oracles() {
        let s = spec();
        let q = DemandQuery::neutral(&s, s.baseline_demand);
        let flat = estimate_elasticity(&Flat, &q, &default_sweep_grid()).unwrap();
        assert!(flat.abs() < 1e-9);
        let unit = estimate_elasticity(&UnitElastic, &q, &default_sweep_grid()).unwrap();
        assert!((unit + 1.0).abs() < 1e-6);
    }

    #[test]
    fn elasticity_needs_five_points() {
        let s = spec();
        let q = DemandQuery::neutral(&s, s.baseline_demand);
        let err = estimate_elasticity(&Flat, &q, &[0.5, 1.0, 1.5, 2.0]).unwrap_err();
        assert!(matches!(err, Error::InsufficientData(_)));
    }

    #[test]
    fn params_validation() {
        let p = DemandParams::default();
        p.validate(&DEFAULT_CLUSTERS).unwrap();
        assert!(p.validate(&[4]).is_err());
        let bad = DemandParams {
            lag_weight: 1.0,
            ..DemandParams::default()
        };
        assert!(bad.validate(&[1]).is_err());
        let bad = DemandParams {
            elasticity: 0.1,
            ..DemandParams::default()
        };
        assert!(bad.validate(&[1]).is_err());
    }

    #[test]
    fn params_json_round_trip() {
        let p = DemandParams::default();
        let json = serde_json::to_string(&p).unwrap();
        let back: DemandParams = serde_json::from_str(&json).unwrap();
        assert_eq!(p, back);
    }
}
