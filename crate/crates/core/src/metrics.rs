//! Fairness, welfare, coordination and adaptability metrics.
//!
//! All functions are pure. Degenerate inputs (all-zero revenue, too few
//! weeks) produce a neutral value and are recorded as flags in
//! [`MetricsReport`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::env::WeeklyRecord;
use crate::error::{Error, Result};
use crate::market::MarketConfig;

/// Relative-change threshold for a "significant" price adjustment.
pub const ADJUSTMENT_THRESHOLD: f64 = 0.01;
/// Trailing weeks used by [`nash_proximity`] in reports.
pub const NASH_WINDOW: usize = 12;
/// Final weeks pooled by [`price_convergence`] in reports.
pub const CONVERGENCE_WINDOW: usize = 8;

fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Sum of weekly price × demand over the agent's products.
pub fn revenue_per_agent(records: &[WeeklyRecord], agent_id: &str) -> f64 {
    records
        .iter()
        .flat_map(|r| r.agents.iter().filter(|a| a.agent_id == agent_id))
        .flat_map(|a| a.products.iter())
        .map(|p| p.price * p.demand)
        .sum()
}

fn all_zero(revenues: &[f64]) -> bool {
    revenues.iter().all(|&r| r == 0.0)
}

/// `(ΣR)² / (N·ΣR²)`; 1.0 when every revenue is zero.
pub fn jain_index(revenues: &[f64]) -> f64 {
    if revenues.is_empty() || all_zero(revenues) {
        return 1.0;
    }
    let sum: f64 = revenues.iter().sum();
    let sq: f64 = revenues.iter().map(|r| r * r).sum();
    sum * sum / (revenues.len() as f64 * sq)
}

/// `Σᵢ Σⱼ |Rᵢ − Rⱼ| / (2N·ΣR)`; 0 when every revenue is zero.
pub fn gini(revenues: &[f64]) -> f64 {
    let sum: f64 = revenues.iter().sum();
    if revenues.is_empty() || !(sum > 0.0) {
        return 0.0;
    }
    let pairs: f64 = revenues
        .iter()
        .map(|a| revenues.iter().map(|b| (a - b).abs()).sum::<f64>())
        .sum();
    pairs / (2.0 * revenues.len() as f64 * sum)
}

pub fn social_welfare(revenues: &[f64]) -> f64 {
    revenues.iter().sum::<f64>() * (1.0 - gini(revenues))
}

/// `1 − gini`.
pub fn welfare_fairness(revenues: &[f64]) -> f64 {
    1.0 - gini(revenues)
}

/// Relative changes `(Pₜ − Pₜ₋₁)/Pₜ₋₁` of one price series.
pub fn relative_changes(prices: &[f64]) -> Vec<f64> {
    prices.windows(2).map(|w| (w[1] - w[0]) / w[0]).collect()
}

/// `1 − min(1, 10·ΔP̄)` where ΔP̄ is the mean absolute relative change over
/// the trailing `window` weeks of every series (whole series when `None`).
pub fn nash_proximity(series: &[Vec<f64>], window: Option<usize>) -> f64 {
    let changes: Vec<f64> = series
        .iter()
        .flat_map(|s| {
            let c = relative_changes(s);
            let start = window.map_or(0, |w| c.len().saturating_sub(w));
            c[start..].to_vec()
        })
        .map(f64::abs)
        .collect();
    1.0 - (10.0 * mean(&changes)).min(1.0)
}

/// `(R_max − R)/R_max`; `None` when `R_max` is not positive.
pub fn optimality_gap(revenue: f64, max_revenue: f64) -> Option<f64> {
    if max_revenue > 0.0 {
        Some((max_revenue - revenue) / max_revenue)
    } else {
        None
    }
}

/// Shares per agent per week from `weekly[t][i]` revenues, indexed
/// `[agent][week]`, plus the weeks that had zero total revenue (uniform
/// shares).
pub fn market_share_series(weekly: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<usize>) {
    let n = weekly.first().map_or(0, Vec::len);
    let mut shares = vec![Vec::with_capacity(weekly.len()); n];
    let mut flagged = Vec::new();
    for (t, row) in weekly.iter().enumerate() {
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            for (i, r) in row.iter().enumerate() {
                shares[i].push(r / total);
            }
        } else {
            flagged.push(t);
            for s in &mut shares {
                s.push(1.0 / n as f64);
            }
        }
    }
    (shares, flagged)
}

/// Mean over agents of the population std of their share series, in
/// percentage points. `None` with fewer than two weeks.
pub fn market_share_volatility_pp(shares: &[Vec<f64>]) -> Option<f64> {
    if shares.is_empty() || shares.iter().any(|s| s.len() < 2) {
        return None;
    }
    Some(100.0 * mean(&shares.iter().map(|s| population_std(s)).collect::<Vec<_>>()))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PriceVolatility {
    pub mean_abs_change: f64,
    pub std_change: f64,
    pub max_change: f64,
}

/// Mean absolute, population std and max absolute relative change.
pub fn price_volatility(prices: &[f64]) -> Option<PriceVolatility> {
    if prices.len() < 2 {
        return None;
    }
    Some(volatility_of_changes(&relative_changes(prices)))
}

fn volatility_of_changes(changes: &[f64]) -> PriceVolatility {
    PriceVolatility {
        mean_abs_change: mean(&changes.iter().map(|c| c.abs()).collect::<Vec<_>>()),
        std_change: population_std(changes),
        max_change: changes.iter().fold(0.0, |m, c| m.max(c.abs())),
    }
}

/// `1 − σ_P / max(P)` over pooled prices.
pub fn price_convergence(prices: &[f64]) -> Result<f64> {
    let max = prices.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return Err(Error::Domain("price convergence needs a positive maximum price".into()));
    }
    Ok(1.0 - population_std(prices) / max)
}

/// Mean absolute relative weekly change.
pub fn adjustment_magnitude(prices: &[f64]) -> f64 {
    mean(&relative_changes(prices).iter().map(|c| c.abs()).collect::<Vec<_>>())
}

/// Fraction of weeks whose absolute relative change exceeds `threshold`.
pub fn adjustment_frequency(prices: &[f64], threshold: f64) -> f64 {
    frequency_of_changes(&relative_changes(prices), threshold)
}

fn frequency_of_changes(changes: &[f64], threshold: f64) -> f64 {
    if changes.is_empty() {
        return 0.0;
    }
    changes.iter().filter(|c| c.abs() > threshold).count() as f64 / changes.len() as f64
}

/// `1 − min(1, 10·σ)` of the relative weekly changes.
pub fn price_stability(prices: &[f64]) -> f64 {
    stability_of_changes(&relative_changes(prices))
}

fn stability_of_changes(changes: &[f64]) -> f64 {
    1.0 - (10.0 * population_std(changes)).min(1.0)
}

/// Price series of one agent, one vector per product.
pub fn agent_price_series(records: &[WeeklyRecord], agent_id: &str) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for r in records {
        if let Some(a) = r.agents.iter().find(|a| a.agent_id == agent_id) {
            if out.is_empty() {
                out = vec![Vec::with_capacity(records.len()); a.products.len()];
            }
            for (s, p) in out.iter_mut().zip(&a.products) {
                s.push(p.price);
            }
        }
    }
    out
}

/// Weekly revenue matrix `[week][agent]` in record order.
pub fn weekly_revenues(records: &[WeeklyRecord]) -> Vec<Vec<f64>> {
    records
        .iter()
        .map(|r| r.agents.iter().map(|a| a.total_revenue).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMetrics {
    pub agent_id: String,
    pub kind: String,
    /// Revenue summed over every episode.
    pub total_revenue: f64,
    /// Mean revenue per episode.
    pub mean_return: f64,
    pub final_episode_revenue: f64,
    pub adjustment_magnitude: f64,
    pub adjustment_frequency: f64,
    pub price_stability: f64,
    pub price_volatility: PriceVolatility,
    pub optimality_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub episodes: usize,
    pub weeks_per_episode: usize,
    pub agents: Vec<AgentMetrics>,
    pub jain_index: f64,
    pub gini: f64,
    pub social_welfare: f64,
    pub welfare_fairness: f64,
    pub nash_proximity: f64,
    pub optimality_gap_mean: Option<f64>,
    pub price_convergence: f64,
    pub market_share_series: BTreeMap<String, Vec<f64>>,
    pub market_share_volatility_pp: Option<f64>,
    pub flags: Vec<String>,
}

/// Column names of [`MetricsReport::csv_row`].
pub const REPORT_CSV_COLUMNS: [&str; 14] = [
    "episodes",
    "weeks_per_episode",
    "mean_return",
    "jain_index",
    "gini",
    "social_welfare",
    "welfare_fairness",
    "nash_proximity",
    "optimality_gap_mean",
    "price_convergence",
    "market_share_volatility_pp",
    "adjustment_magnitude",
    "adjustment_frequency",
    "price_stability",
];

impl MetricsReport {
    /// Builds the report. Adaptability metrics pool every episode's weekly
    /// changes; market-level metrics describe the final episode.
    pub fn compute(config: &MarketConfig, episodes: &[Vec<WeeklyRecord>]) -> Result<Self> {
        let last = episodes
            .last()
            .filter(|e| !e.is_empty())
            .ok_or_else(|| Error::Domain("metrics need at least one non-empty episode".into()))?;
        let mut flags = Vec::new();
        let ids: Vec<&str> = config.agent_roster.iter().map(|e| e.agent_id.as_str()).collect();

        let final_revenues: Vec<f64> = ids.iter().map(|id| revenue_per_agent(last, id)).collect();
        if all_zero(&final_revenues) {
            flags.push("final episode revenue is zero for every agent".to_string());
        }
        let max_revenue = final_revenues.iter().copied().fold(f64::NEG_INFINITY, f64::max);

        let mut agents = Vec::with_capacity(ids.len());
        let mut final_series = Vec::new();
        for (entry, &final_rev) in config.agent_roster.iter().zip(&final_revenues) {
            let id = entry.agent_id.as_str();
            let mut changes_per_product: Vec<Vec<f64>> = Vec::new();
            let mut total = 0.0;
            for ep in episodes {
                total += revenue_per_agent(ep, id);
                let series = agent_price_series(ep, id);
                if changes_per_product.is_empty() {
                    changes_per_product = vec![Vec::new(); series.len()];
                }
                for (c, s) in changes_per_product.iter_mut().zip(&series) {
                    c.extend(relative_changes(s));
                }
            }
            final_series.extend(agent_price_series(last, id));
            let per_product = |f: &dyn Fn(&[f64]) -> f64| {
                mean(&changes_per_product.iter().map(|c| f(c)).collect::<Vec<_>>())
            };
            let vols: Vec<PriceVolatility> = changes_per_product.iter().map(|c| volatility_of_changes(c)).collect();
            let gap = optimality_gap(final_rev, max_revenue);
            if gap.is_none() {
                flags.push(format!("optimality gap undefined for {id}"));
            }
            agents.push(AgentMetrics {
                agent_id: id.to_string(),
                kind: entry.kind.label().to_string(),
                total_revenue: total,
                mean_return: total / episodes.len() as f64,
                final_episode_revenue: final_rev,
                adjustment_magnitude: per_product(&|c| mean(&c.iter().map(|x| x.abs()).collect::<Vec<_>>())),
                adjustment_frequency: per_product(&|c| frequency_of_changes(c, ADJUSTMENT_THRESHOLD)),
                price_stability: per_product(&stability_of_changes),
                price_volatility: PriceVolatility {
                    mean_abs_change: mean(&vols.iter().map(|v| v.mean_abs_change).collect::<Vec<_>>()),
                    std_change: mean(&vols.iter().map(|v| v.std_change).collect::<Vec<_>>()),
                    max_change: mean(&vols.iter().map(|v| v.max_change).collect::<Vec<_>>()),
                },
                optimality_gap: gap,
            });
        }

        // Convergence per product category over the final weeks, averaged.
        let mut by_cluster: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
        let window_start = last.len().saturating_sub(CONVERGENCE_WINDOW);
        let specs = config.portfolio()?;
        for rec in &last[window_start..] {
            for a in &rec.agents {
                for (p, spec) in a.products.iter().zip(&specs) {
                    by_cluster.entry(spec.cluster_id).or_default().push(p.price);
                }
            }
        }
        let convergences = by_cluster
            .values()
            .map(|prices| price_convergence(prices))
            .collect::<Result<Vec<_>>>()?;

        let (shares, zero_weeks) = market_share_series(&weekly_revenues(last));
        if !zero_weeks.is_empty() {
            flags.push(format!("{} zero-revenue weeks given uniform shares", zero_weeks.len()));
        }
        let volatility = market_share_volatility_pp(&shares);
        if volatility.is_none() {
            flags.push("market share volatility needs at least two weeks".to_string());
        }
        let gaps: Vec<f64> = agents.iter().filter_map(|a| a.optimality_gap).collect();
        Ok(Self {
            episodes: episodes.len(),
            weeks_per_episode: last.len(),
            jain_index: jain_index(&final_revenues),
            gini: gini(&final_revenues),
            social_welfare: social_welfare(&final_revenues),
            welfare_fairness: welfare_fairness(&final_revenues),
            nash_proximity: nash_proximity(&final_series, Some(NASH_WINDOW)),
            optimality_gap_mean: if gaps.is_empty() { None } else { Some(mean(&gaps)) },
            price_convergence: mean(&convergences),
            market_share_series: ids.iter().map(|s| s.to_string()).zip(shares).collect(),
            market_share_volatility_pp: volatility,
            agents,
            flags,
        })
    }

    pub fn mean_return(&self) -> f64 {
        mean(&self.agents.iter().map(|a| a.mean_return).collect::<Vec<_>>())
    }

    /// Mean of an agent-level metric over agents of the given kind label.
    pub fn mean_by_kind(&self, kind: &str, f: impl Fn(&AgentMetrics) -> f64) -> Option<f64> {
        let v: Vec<f64> = self.agents.iter().filter(|a| a.kind == kind).map(f).collect();
        if v.is_empty() {
            None
        } else {
            Some(mean(&v))
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Flat row aligned with [`REPORT_CSV_COLUMNS`].
    pub fn csv_row(&self) -> Vec<String> {
        let agent_mean = |f: fn(&AgentMetrics) -> f64| mean(&self.agents.iter().map(f).collect::<Vec<_>>());
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.6}"));
        vec![
            self.episodes.to_string(),
            self.weeks_per_episode.to_string(),
            format!("{:.6}", self.mean_return()),
            format!("{:.6}", self.jain_index),
            format!("{:.6}", self.gini),
            format!("{:.6}", self.social_welfare),
            format!("{:.6}", self.welfare_fairness),
            format!("{:.6}", self.nash_proximity),
            opt(self.optimality_gap_mean),
            format!("{:.6}", self.price_convergence),
            opt(self.market_share_volatility_pp),
            format!("{:.6}", agent_mean(|a| a.adjustment_magnitude)),
            format!("{:.6}", agent_mean(|a| a.adjustment_frequency)),
            format!("{:.6}", agent_mean(|a| a.price_stability)),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn jain_examples() {
        assert!(close(jain_index(&[1.0, 1.0, 1.0, 1.0]), 1.0));
        assert!(close(jain_index(&[1.0, 0.0, 0.0, 0.0]), 0.25));
        assert!(close(jain_index(&[3.0, 1.0]), 0.8));
        assert_eq!(jain_index(&[0.0, 0.0]), 1.0);
    }

    #[test]
    fn gini_and_welfare_examples() {
        assert_eq!(gini(&[2.0, 2.0, 2.0]), 0.0);
        assert!(close(gini(&[0.0, 1.0]), 0.5));
        assert!(close(gini(&[1.0, 2.0, 3.0]), 8.0 / 36.0));
        assert!(close(social_welfare(&[1.0, 1.0]), 2.0));
        assert!(close(social_welfare(&[0.0, 1.0]), 0.5));
        assert_eq!(social_welfare(&[0.0, 0.0]), 0.0);
        assert!(close(welfare_fairness(&[1.0, 2.0, 3.0]), 1.0 - 8.0 / 36.0));
    }

    #[test]
    fn nash_examples() {
        assert_eq!(nash_proximity(&[vec![5.0; 10]], None), 1.0);
        assert!(close(nash_proximity(&[vec![100.0, 105.0]], None), 0.5));
        assert_eq!(nash_proximity(&[vec![100.0, 120.0, 100.0]], None), 0.0);
        // Only the trailing change counts with a window of one.
        assert_eq!(nash_proximity(&[vec![100.0, 150.0, 150.0]], Some(1)), 1.0);
    }

    #[test]
    fn gap_examples() {
        assert_eq!(optimality_gap(200.0, 200.0), Some(0.0));
        assert_eq!(optimality_gap(0.0, 200.0), Some(1.0));
        assert_eq!(optimality_gap(150.0, 200.0), Some(0.25));
        assert_eq!(optimality_gap(1.0, 0.0), None);
    }

    #[test]
    fn share_examples() {
        let (s, f) = market_share_series(&[vec![30.0, 70.0]]);
        assert!(close(s[0][0], 0.3) && close(s[1][0], 0.7) && f.is_empty());
        let (s, _) = market_share_series(&[vec![5.0], vec![9.0]]);
        assert_eq!(s[0], vec![1.0, 1.0]);
        let (s, f) = market_share_series(&[vec![0.0; 4]]);
        assert_eq!(f, vec![0]);
        assert!(s.iter().all(|x| x[0] == 0.25));
    }

    #[test]
    fn share_volatility_examples() {
        assert_eq!(market_share_volatility_pp(&[vec![0.5; 6], vec![0.5; 6]]), Some(0.0));
        let v = market_share_volatility_pp(&[vec![0.4, 0.6, 0.4, 0.6], vec![0.6, 0.4, 0.6, 0.4]]).unwrap();
        assert!((v - 10.0).abs() < 1e-9);
        assert_eq!(market_share_volatility_pp(&[vec![1.0]]), None);
    }

    #[test]
    fn volatility_examples() {
        assert_eq!(price_volatility(&[3.0; 5]).unwrap(), PriceVolatility::default());
        assert!(close(price_volatility(&[100.0, 110.0]).unwrap().mean_abs_change, 0.10));
        let v = price_volatility(&[100.0, 110.0, 99.0]).unwrap();
        assert!(close(v.mean_abs_change, 0.10) && close(v.max_change, 0.10));
        assert!(price_volatility(&[1.0]).is_none());
    }

    #[test]
    fn convergence_examples() {
        assert_eq!(price_convergence(&[4.0, 4.0, 4.0]).unwrap(), 1.0);
        assert!(close(price_convergence(&[1.0, 3.0]).unwrap(), 1.0 - 1.0 / 3.0));
        assert!((price_convergence(&[0.0001, 10.0]).unwrap() - 0.5).abs() < 1e-4);
    }

    #[test]
    fn adjustment_examples() {
        assert_eq!(adjustment_magnitude(&[7.0; 4]), 0.0);
        assert!(close(adjustment_magnitude(&[10.0, 10.2, 10.2]), 0.01));
        assert_eq!(adjustment_frequency(&[7.0; 4], 0.01), 0.0);
        assert!(close(frequency_of_changes(&[0.02, 0.005, 0.03], 0.01), 2.0 / 3.0));
        assert_eq!(frequency_of_changes(&[0.01, -0.01, 0.01], 0.01), 0.0);
    }

    #[test]
    fn stability_examples() {
        assert_eq!(price_stability(&[5.0; 4]), 1.0);
        let drift: Vec<f64> = (0..6).map(|i| 100.0 * 1.02f64.powi(i)).collect();
        assert!(close(price_stability(&drift), 1.0));
        assert!(close(stability_of_changes(&[0.1, -0.1, 0.1, -0.1]), 0.0));
    }

    proptest! {
        #[test]
        fn jain_and_gini_bounds(v in prop::collection::vec(0.0f64..100.0, 1..8), c in 0.01f64..100.0) {
            prop_assume!(v.iter().any(|&x| x > 0.0));
            let n = v.len() as f64;
            let j = jain_index(&v);
            let g = gini(&v);
            prop_assert!(j >= 1.0 / n - 1e-12 && j <= 1.0 + 1e-12);
            prop_assert!(g >= -1e-12 && g <= 1.0 - 1.0 / n + 1e-12);
            let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
            prop_assert!((jain_index(&scaled) - j).abs() < 1e-9);
            prop_assert!((gini(&scaled) - g).abs() < 1e-9);
            prop_assert!((social_welfare(&v) - v.iter().sum::<f64>() * welfare_fairness(&v)).abs() < 1e-9);
        }

        #[test]
        fn rescaling_prices_keeps_relative_metrics(
            p in prop::collection::vec(1.0f64..20.0, 2..20),
            c in 0.1f64..10.0,
        ) {
            let q: Vec<f64> = p.iter().map(|x| x * c).collect();
            prop_assert!((nash_proximity(std::slice::from_ref(&p), None) - nash_proximity(std::slice::from_ref(&q), None)).abs() < 1e-9);
            prop_assert!((price_stability(&p) - price_stability(&q)).abs() < 1e-9);
        }

        #[test]
        fn permuting_agents_permutes_shares(v in prop::collection::vec(0.1f64..50.0, 2..6)) {
            let mut rev = v.clone();
            rev.reverse();
            let (a, _) = market_share_series(std::slice::from_ref(&v));
            let (b, _) = market_share_series(&[rev]);
            for i in 0..v.len() {
                prop_assert!((a[i][0] - b[v.len() - 1 - i][0]).abs() < 1e-12);
            }
            prop_assert!((jain_index(&v) - jain_index(&v.iter().rev().copied().collect::<Vec<_>>())).abs() < 1e-12);
        }
    }
}
