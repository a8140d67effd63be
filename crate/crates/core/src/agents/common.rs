//! State encoding, reward shaping and action post-processing shared by the
//! learning agents.

use serde::{Deserialize, Serialize};

use crate::env::AgentPortfolio;
use crate::error::{Error, Result};
use crate::features::{qrm, rolling_volatility, seasonal_encoding, trend, VOLATILITY_WINDOW};
use crate::market::{month_of_week, MarketObservation, ProductState};

/// Number of state slots per product.
pub const SLOTS_PER_PRODUCT: usize = 12;
/// Discrete action bins per product.
pub const N_BINS: usize = 21;
/// Bin that leaves the price unchanged.
pub const HOLD_BIN: usize = N_BINS / 2;

/// Fixed state length for an agent with `n_products` products.
pub fn state_dim(n_products: usize) -> usize {
    SLOTS_PER_PRODUCT * n_products
}

fn last_relative_change(product: &ProductState) -> f64 {
    let h = &product.price_history;
    match h.len() {
        0 => 0.0,
        1 => (h[0] - product.spec.initial_price) / product.spec.initial_price,
        n => (h[n - 1] - h[n - 2]) / h[n - 2],
    }
}

/// Per product: PVC, margin, lag1, qrm2, qrm4, trend, volatility (demand
/// slots divided by reference demand), week sin/cos and holiday of the week
/// being priced, own market share, last relative price change.
pub fn encode_state(portfolio: &AgentPortfolio, observation: &MarketObservation) -> Result<Vec<f64>> {
    let share = observation
        .agent(&portfolio.agent_id)
        .map(|a| a.market_share)
        .ok_or_else(|| Error::Protocol {
            agent: portfolio.agent_id.clone(),
            product: "*".into(),
            reason: "agent missing from observation".into(),
        })?;
    let week = observation.next_week_number;
    let season = seasonal_encoding(week, month_of_week(week))?;
    let holiday = if observation.next_is_holiday { 1.0 } else { 0.0 };
    let mut out = Vec::with_capacity(state_dim(portfolio.products.len()));
    for (product, &reference) in portfolio.products.iter().zip(&portfolio.reference_demand) {
        let pid = &product.spec.product_id;
        let obs = observation
            .product(&portfolio.agent_id, pid)
            .ok_or_else(|| Error::Protocol {
                agent: portfolio.agent_id.clone(),
                product: pid.clone(),
                reason: "product missing from observation".into(),
            })?;
        let d = &product.demand_history;
        let price = product.current_price;
        let pvc = if obs.cluster_avg_price > 0.0 {
            price / obs.cluster_avg_price
        } else {
            1.0
        };
        out.extend_from_slice(&[
            pvc,
            (price - product.spec.unit_cost) / price,
            d.last().copied().unwrap_or(reference) / reference,
            qrm(d, 2).unwrap_or(reference) / reference,
            qrm(d, 4).unwrap_or(reference) / reference,
            trend(d).unwrap_or(0.0) / reference,
            rolling_volatility(d, VOLATILITY_WINDOW).unwrap_or(0.0) / reference,
            season.week_sin,
            season.week_cos,
            holiday,
            share,
            last_relative_change(product),
        ]);
    }
    Ok(out)
}

/// `(revenue − prev_revenue)/max(1, running_mean) − λ·price_change_rel²`.
pub fn compute_reward(prev_revenue: f64, revenue: f64, price_change_rel: f64, lambda: f64, running_mean: f64) -> f64 {
    (revenue - prev_revenue) / running_mean.max(1.0) - lambda * price_change_rel * price_change_rel
}

/// Relative change encoded by a bin at 1% resolution across ±10%.
pub fn discretize_action(bin: usize) -> Result<f64> {
    if bin >= N_BINS {
        return Err(Error::Domain(format!("action bin {bin} outside 0..{N_BINS}")));
    }
    Ok((bin as f64 - HOLD_BIN as f64) / 100.0)
}

/// `clamp(price·(1 + r), floor, price·(1 + max_weekly_change))`.
pub fn apply_action(product: &ProductState, r: f64, min_margin: f64, max_weekly_change: f64) -> f64 {
    let price = product.current_price;
    let floor = product.spec.price_floor(min_margin);
    let upper = (price * (1.0 + max_weekly_change)).max(floor);
    (price * (1.0 + r)).clamp(floor, upper)
}

/// Clamps a proposed price into `[max(floor, cur·(1−m)), cur·(1+m)]`.
pub fn constrain_price(current: f64, proposed: f64, floor: f64, max_weekly_change: f64) -> f64 {
    let lower = floor.max(current * (1.0 - max_weekly_change));
    let upper = lower.max(current * (1.0 + max_weekly_change));
    proposed.clamp(lower, upper)
}

/// Per-agent bookkeeping behind the shaped reward.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardTracker {
    prev_revenue: Option<f64>,
    revenue_sum: f64,
    weeks: u64,
}

impl RewardTracker {
    pub fn reset(&mut self) {
        *self = Self::default();
    }

    pub fn running_mean(&self) -> f64 {
        if self.weeks == 0 {
            0.0
        } else {
            self.revenue_sum / self.weeks as f64
        }
    }

    /// Books this week's revenue and returns the shaped reward. The first
    /// week of an episode has no revenue delta.
    pub fn reward(&mut self, revenue: f64, price_change_rms: f64, lambda: f64) -> f64 {
        self.revenue_sum += revenue;
        self.weeks += 1;
        let prev = self.prev_revenue.replace(revenue).unwrap_or(revenue);
        compute_reward(prev, revenue, price_change_rms, lambda, self.running_mean())
    }
}

/// Root-mean-square relative price change of the portfolio in the week just
/// simulated.
pub fn price_change_rms(portfolio: &AgentPortfolio) -> f64 {
    let n = portfolio.products.len().max(1) as f64;
    let sq: f64 = portfolio
        .products
        .iter()
        .map(|p| last_relative_change(p).powi(2))
        .sum();
    (sq / n).sqrt()
}

/// Lowest-index argmax.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
