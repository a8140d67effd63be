//! Deterministic baseline pricing strategies.

use log::debug;
use serde::{Deserialize, Serialize};

use super::common::constrain_price;
use super::{Controller, MarketView};
use crate::error::{Error, Result};
use crate::market::{ProductSpec, ProductState};

fn default_markup() -> f64 {
    0.5
}
fn default_undercut() -> f64 {
    0.03
}
fn default_anchor_window() -> usize {
    8
}
fn default_response_step() -> f64 {
    0.02
}
fn default_uplift() -> f64 {
    0.10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum RuleStrategy {
    StaticMarkup {
        #[serde(default = "default_markup")]
        markup: f64,
    },
    CompetitorMatch {
        #[serde(default = "default_undercut")]
        undercut_fraction: f64,
        /// Used when no competitor shares the cluster.
        #[serde(default = "default_markup")]
        markup: f64,
    },
    HistoricalAnchor {
        #[serde(default = "default_anchor_window")]
        anchor_window: usize,
    },
    DemandResponsive {
        #[serde(default = "default_response_step")]
        response_step: f64,
    },
    Seasonal {
        #[serde(default = "default_markup")]
        markup: f64,
        #[serde(default = "default_uplift")]
        seasonal_uplift: f64,
    },
}

impl RuleStrategy {
    pub fn static_markup() -> Self {
        RuleStrategy::StaticMarkup { markup: default_markup() }
    }

    pub fn competitor_match() -> Self {
        RuleStrategy::CompetitorMatch {
            undercut_fraction: default_undercut(),
            markup: default_markup(),
        }
    }

    pub fn historical_anchor() -> Self {
        RuleStrategy::HistoricalAnchor {
            anchor_window: default_anchor_window(),
        }
    }

    pub fn demand_responsive() -> Self {
        RuleStrategy::DemandResponsive {
            response_step: default_response_step(),
        }
    }

    pub fn seasonal() -> Self {
        RuleStrategy::Seasonal {
            markup: default_markup(),
            seasonal_uplift: default_uplift(),
        }
    }

    /// The default mixed set for a four-agent rule market.
    pub fn diverse_set() -> [Self; 4] {
        [
            Self::competitor_match(),
            Self::historical_anchor(),
            Self::demand_responsive(),
            Self::seasonal(),
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            RuleStrategy::StaticMarkup { .. } => "static_markup",
            RuleStrategy::CompetitorMatch { .. } => "competitor_match",
            RuleStrategy::HistoricalAnchor { .. } => "historical_anchor",
            RuleStrategy::DemandResponsive { .. } => "demand_responsive",
            RuleStrategy::Seasonal { .. } => "seasonal",
        }
    }

    pub fn validate(&self, max_weekly_change: f64) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("{}: {m}", self.name())));
        match *self {
            RuleStrategy::StaticMarkup { markup } if !(markup >= 0.0) => bad(format!("markup {markup} < 0")),
            RuleStrategy::CompetitorMatch {
                undercut_fraction,
                markup,
            } => {
                if !(0.01..=0.05).contains(&undercut_fraction) {
                    bad(format!("undercut_fraction {undercut_fraction} outside [0.01, 0.05]"))
                } else if !(markup >= 0.0) {
                    bad(format!("markup {markup} < 0"))
                } else {
                    Ok(())
                }
            }
            RuleStrategy::HistoricalAnchor { anchor_window: 0 } => bad("anchor_window must be positive".into()),
            RuleStrategy::DemandResponsive { response_step }
                if !(response_step > 0.0 && response_step <= max_weekly_change) =>
            {
                bad(format!("response_step {response_step} outside (0, {max_weekly_change}]"))
            }
            RuleStrategy::Seasonal {
                markup,
                seasonal_uplift,
            } if !(markup >= 0.0 && seasonal_uplift >= 0.0) => bad("markup and uplift must be nonnegative".into()),
            _ => Ok(()),
        }
    }
}

pub fn static_markup_price(spec: &ProductSpec, markup: f64) -> f64 {
    spec.unit_cost * (1.0 + markup)
}

/// Undercuts the competitors' mean by `undercut`, never below the floor.
/// Falls back to the static markup when the cluster has no competitors.
pub fn competitor_match_price(
    spec: &ProductSpec,
    competitor_prices: &[f64],
    undercut: f64,
    markup: f64,
    min_margin: f64,
) -> f64 {
    if competitor_prices.is_empty() {
        debug!("{}: no competitors in cluster {}, using static markup", spec.product_id, spec.cluster_id);
        return static_markup_price(spec, markup);
    }
    let mean = competitor_prices.iter().sum::<f64>() / competitor_prices.len() as f64;
    (mean * (1.0 - undercut)).max(spec.price_floor(min_margin))
}

/// Mean of the last `window` posted prices; the initial price before any.
pub fn historical_anchor_price(product: &ProductState, window: usize) -> f64 {
    let h = &product.price_history;
    if h.is_empty() || window == 0 {
        return product.spec.initial_price;
    }
    let tail = &h[h.len().saturating_sub(window)..];
    tail.iter().sum::<f64>() / tail.len() as f64
}

/// Steps the price with the direction of the last demand change; holds on a
/// tie or with fewer than two weeks of demand.
pub fn demand_responsive_price(product: &ProductState, step: f64, min_margin: f64, max_weekly_change: f64) -> f64 {
    let d = &product.demand_history;
    let price = product.current_price;
    if d.len() < 2 {
        return price;
    }
    let (prev, last) = (d[d.len() - 2], d[d.len() - 1]);
    let proposed = if last > prev {
        price * (1.0 + step)
    } else if last < prev {
        price * (1.0 - step)
    } else {
        price
    };
    proposed.clamp(product.spec.price_floor(min_margin), price * (1.0 + max_weekly_change))
}

pub fn seasonal_price(spec: &ProductSpec, markup: f64, uplift: f64, holiday: bool) -> f64 {
    let base = static_markup_price(spec, markup);
    if holiday {
        base * (1.0 + uplift)
    } else {
        base
    }
}

/// One rule-driven seller.
pub struct RuleAgent {
    ids: [String; 1],
    strategy: RuleStrategy,
}

impl RuleAgent {
    pub fn new(agent_id: &str, strategy: RuleStrategy) -> Self {
        Self {
            ids: [agent_id.to_string()],
            strategy,
        }
    }

    pub fn strategy(&self) -> &RuleStrategy {
        &self.strategy
    }

    /// Unconstrained proposal for one product.
    pub fn propose(&self, product: &ProductState, view: &MarketView<'_>) -> Result<f64> {
        let cfg = view.config;
        let spec = &product.spec;
        Ok(match self.strategy {
            RuleStrategy::StaticMarkup { markup } => static_markup_price(spec, markup),
            RuleStrategy::CompetitorMatch {
                undercut_fraction,
                markup,
            } => {
                let obs = view
                    .observation
                    .product(&self.ids[0], &spec.product_id)
                    .ok_or_else(|| Error::Protocol {
                        agent: self.ids[0].clone(),
                        product: spec.product_id.clone(),
                        reason: "product missing from observation".into(),
                    })?;
                competitor_match_price(spec, &obs.competitor_prices, undercut_fraction, markup, cfg.min_margin)
            }
            RuleStrategy::HistoricalAnchor { anchor_window } => historical_anchor_price(product, anchor_window),
            RuleStrategy::DemandResponsive { response_step } => {
                demand_responsive_price(product, response_step, cfg.min_margin, cfg.max_weekly_change)
            }
            RuleStrategy::Seasonal {
                markup,
                seasonal_uplift,
            } => seasonal_price(spec, markup, seasonal_uplift, view.observation.next_is_holiday),
        })
    }
}

impl Controller for RuleAgent {
    fn agent_ids(&self) -> &[String] {
        &self.ids
    }

    fn act(&mut self, view: &MarketView<'_>) -> Result<Vec<Vec<f64>>> {
        let portfolio = view.portfolio(&self.ids[0])?;
        let cfg = view.config;
        let prices = portfolio
            .products
            .iter()
            .map(|p| {
                let proposed = self.propose(p, view)?;
                Ok(constrain_price(
                    p.current_price,
                    proposed,
                    p.spec.price_floor(cfg.min_margin),
                    cfg.max_weekly_change,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(vec![prices])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(price: f64, cost: f64) -> ProductSpec {
        ProductSpec {
            product_id: "P1".into(),
            cluster_id: 1,
            initial_price: price,
            unit_cost: cost,
            baseline_demand: 100.0,
        }
    }

    fn state(price: f64, prices: &[f64], demands: &[f64]) -> ProductState {
        let mut p = ProductState::new(spec(price, 6.0));
        p.price_history = prices.to_vec();
        p.demand_history = demands.to_vec();
        p.revenue_history = prices.iter().zip(demands).map(|(a, b)| a * b).collect();
        p.current_price = price;
        p
    }

    #[test]
    fn static_markup_examples() {
        assert_eq!(static_markup_price(&spec(10.0, 6.0), 0.5), 9.0);
        assert_eq!(static_markup_price(&spec(10.0, 6.0), 0.0), 6.0);
        assert!((constrain_price(6.3, 6.0, 6.3, 0.1) - 6.3).abs() < 1e-12);
    }

    #[test]
    fn competitor_match_examples() {
        let s = spec(10.0, 6.0);
        assert!((competitor_match_price(&s, &[9.0, 11.0], 0.03, 0.5, 0.05) - 9.7).abs() < 1e-12);
        assert!((competitor_match_price(&s, &[1.0], 0.03, 0.5, 0.05) - 6.3).abs() < 1e-12);
        assert_eq!(competitor_match_price(&s, &[], 0.03, 0.5, 0.05), 9.0);
    }

    #[test]
    fn historical_anchor_examples() {
        assert_eq!(historical_anchor_price(&state(7.0, &[7.0; 5], &[1.0; 5]), 8), 7.0);
        assert_eq!(
            historical_anchor_price(&state(14.0, &[10.0, 10.0, 10.0, 14.0], &[1.0; 4]), 4),
            11.0
        );
        assert_eq!(historical_anchor_price(&state(10.0, &[], &[]), 8), 10.0);
    }

    #[test]
    fn demand_responsive_examples() {
        let up = state(10.0, &[10.0, 10.0], &[10.0, 12.0]);
        assert!((demand_responsive_price(&up, 0.02, 0.05, 0.1) - 10.2).abs() < 1e-12);
        let down = state(10.0, &[10.0, 10.0], &[12.0, 10.0]);
        assert!((demand_responsive_price(&down, 0.02, 0.05, 0.1) - 9.8).abs() < 1e-12);
        let flat = state(10.0, &[10.0, 10.0], &[10.0, 10.0]);
        assert_eq!(demand_responsive_price(&flat, 0.02, 0.05, 0.1), 10.0);
    }

    #[test]
    fn seasonal_examples() {
        let s = spec(10.0, 6.0);
        assert!((seasonal_price(&s, 0.5, 0.10, true) - 9.9).abs() < 1e-12);
        assert_eq!(seasonal_price(&s, 0.5, 0.10, false), 9.0);
        assert_eq!(seasonal_price(&s, 0.5, 0.0, true), 9.0);
    }

    #[test]
    fn parameter_validation() {
        let bad = RuleStrategy::CompetitorMatch {
            undercut_fraction: 0.2,
            markup: 0.5,
        };
        assert!(bad.validate(0.1).is_err());
        assert!(RuleStrategy::DemandResponsive { response_step: 0.2 }.validate(0.1).is_err());
        for s in RuleStrategy::diverse_set() {
            s.validate(0.1).unwrap();
        }
    }

    #[test]
    fn json_round_trip() {
        let json = r#"{"strategy":"competitor_match","undercut_fraction":0.02}"#;
        let s: RuleStrategy = serde_json::from_str(json).unwrap();
        assert_eq!(
            s,
            RuleStrategy::CompetitorMatch {
                undercut_fraction: 0.02,
                markup: 0.5
            }
        );
    }
}
