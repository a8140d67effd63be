//! The weekly-stepped market simulation.
//!
//! Each step is a simultaneous move: every agent posts prices for week `t`,
//! then demand is drawn for every (agent, product), revenue and profit are
//! booked, histories are appended and a fresh [`MarketObservation`] is
//! broadcast.

use std::collections::BTreeMap;
use std::io::Write;

use log::debug;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{Controller, MarketView};
use crate::demand::{DemandOracle, DemandQuery};
use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::market::{
    holiday_flag, AgentObservation, MarketConfig, MarketObservation, ProductObservation, ProductState,
    WEEKS_PER_YEAR,
};

/// Prices posted for one week: agent → product → price.
pub type SubmittedPrices = BTreeMap<String, BTreeMap<String, f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentPortfolio {
    pub agent_id: String,
    pub products: Vec<ProductState>,
    /// Reference demand per product, aligned with `products`.
    pub reference_demand: Vec<f64>,
}

impl AgentPortfolio {
    pub fn total_revenue_last_week(&self) -> f64 {
        self.products.iter().filter_map(|p| p.revenue_history.last()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductWeek {
    pub product_id: String,
    pub price: f64,
    pub demand: f64,
    pub revenue: f64,
    pub profit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentWeek {
    pub agent_id: String,
    pub products: Vec<ProductWeek>,
    pub total_revenue: f64,
    pub market_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeeklyRecord {
    pub week_index: usize,
    pub year: i32,
    pub week_number: u32,
    pub agents: Vec<AgentWeek>,
    /// Set when total revenue was zero and shares were defaulted to uniform.
    pub zero_revenue: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClampEvent {
    pub week_index: usize,
    pub agent_id: String,
    pub product_id: String,
    pub submitted: f64,
    pub floor: f64,
}

pub struct SimulationState {
    pub config: MarketConfig,
    pub current_week_index: usize,
    pub year: i32,
    pub week_number: u32,
    pub portfolios: Vec<AgentPortfolio>,
    pub history_log: Vec<WeeklyRecord>,
    pub clamp_log: Vec<ClampEvent>,
    oracle: Box<dyn DemandOracle>,
    seed: u64,
    episode: usize,
}

fn fnv1a(bytes: &[u8], mut h: u64) -> u64 {
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

/// Stable 64-bit key for named random streams.
pub fn stream_key(parts: &[&str]) -> u64 {
    parts
        .iter()
        .fold(0xcbf2_9ce4_8422_2325, |h, p| fnv1a(&[0xff], fnv1a(p.as_bytes(), h)))
}

impl SimulationState {
    pub fn new(config: MarketConfig, oracle: Box<dyn DemandOracle>) -> Result<Self> {
        config.validate()?;
        let specs = config.portfolio()?;
        let reference_demand = specs
            .iter()
            .map(|s| oracle.reference_demand(s))
            .collect::<Result<Vec<_>>>()?;
        let portfolios = config
            .agent_roster
            .iter()
            .map(|entry| AgentPortfolio {
                agent_id: entry.agent_id.clone(),
                products: specs.iter().cloned().map(ProductState::new).collect(),
                reference_demand: reference_demand.clone(),
            })
            .collect();
        let seed = config.seed;
        Ok(Self {
            config,
            current_week_index: 0,
            year: 1,
            week_number: 1,
            portfolios,
            history_log: Vec::new(),
            clamp_log: Vec::new(),
            oracle,
            seed,
            episode: 0,
        })
    }

    /// Resets calendar and product histories for a new episode.
    pub fn reset(&mut self, episode: usize) {
        self.episode = episode;
        self.current_week_index = 0;
        self.year = 1;
        self.week_number = 1;
        self.history_log.clear();
        self.clamp_log.clear();
        for p in &mut self.portfolios {
            p.products.iter_mut().for_each(ProductState::reset);
        }
    }

    pub fn oracle(&self) -> &dyn DemandOracle {
        self.oracle.as_ref()
    }

    fn next_calendar(&self) -> (i32, u32) {
        if self.week_number >= WEEKS_PER_YEAR {
            (self.year + 1, 1)
        } else {
            (self.year, self.week_number + 1)
        }
    }

    /// Snapshot before the first week: current (initial) prices, reference
    /// demand as last demand, no revenue and uniform shares.
    pub fn initial_observation(&self) -> Result<MarketObservation> {
        let prices: Vec<Vec<f64>> = self
            .portfolios
            .iter()
            .map(|p| p.products.iter().map(|s| s.current_price).collect())
            .collect();
        let demands: Vec<Vec<f64>> = self.portfolios.iter().map(|p| p.reference_demand.clone()).collect();
        let uniform = 1.0 / self.portfolios.len() as f64;
        let per_agent = self
            .portfolios
            .iter()
            .map(|p| {
                (
                    p.agent_id.clone(),
                    AgentObservation {
                        revenue_last_week: 0.0,
                        market_share: uniform,
                    },
                )
            })
            .collect();
        Ok(MarketObservation {
            week_number: WEEKS_PER_YEAR,
            year: self.year - 1,
            is_holiday: holiday_flag(WEEKS_PER_YEAR)?,
            next_week_number: self.week_number,
            next_year: self.year,
            next_is_holiday: holiday_flag(self.week_number)?,
            per_product: self.product_observations(&prices, &demands),
            per_agent,
        })
    }

    fn product_observations(&self, prices: &[Vec<f64>], demands: &[Vec<f64>]) -> Vec<ProductObservation> {
        let mut out = Vec::new();
        for (ai, portfolio) in self.portfolios.iter().enumerate() {
            for (pi, product) in portfolio.products.iter().enumerate() {
                let cluster = product.spec.cluster_id;
                let mut competitors = Vec::new();
                let mut cluster_sum = 0.0;
                let mut cluster_n = 0usize;
                for (aj, other) in self.portfolios.iter().enumerate() {
                    for (pj, op) in other.products.iter().enumerate() {
                        if op.spec.cluster_id != cluster {
                            continue;
                        }
                        cluster_sum += prices[aj][pj];
                        cluster_n += 1;
                        if aj != ai {
                            competitors.push(prices[aj][pj]);
                        }
                    }
                }
                out.push(ProductObservation {
                    agent_id: portfolio.agent_id.clone(),
                    product_id: product.spec.product_id.clone(),
                    price: prices[ai][pi],
                    cluster_id: cluster,
                    competitor_prices: competitors,
                    cluster_avg_price: cluster_sum / cluster_n as f64,
                    last_demand: demands[ai][pi],
                });
            }
        }
        out
    }

    fn noise_rng(&self, agent_id: &str, product_id: &str) -> ChaCha8Rng {
        let key = stream_key(&[
            "demand",
            agent_id,
            product_id,
            &self.episode.to_string(),
            &self.current_week_index.to_string(),
        ]);
        ChaCha8Rng::seed_from_u64(self.seed ^ key)
    }

    /// Advances the market by one week.
    pub fn step(&mut self, submitted: &SubmittedPrices) -> Result<(WeeklyRecord, MarketObservation)> {
        let min_margin = self.config.min_margin;
        // Collect and floor-clamp every price before any demand is computed.
        let mut prices: Vec<Vec<f64>> = Vec::with_capacity(self.portfolios.len());
        for portfolio in &self.portfolios {
            let agent_prices = submitted.get(&portfolio.agent_id).ok_or_else(|| Error::Protocol {
                agent: portfolio.agent_id.clone(),
                product: "*".into(),
                reason: "no prices submitted".into(),
            })?;
            let mut row = Vec::with_capacity(portfolio.products.len());
            for product in &portfolio.products {
                let pid = &product.spec.product_id;
                let &price = agent_prices.get(pid).ok_or_else(|| Error::Protocol {
                    agent: portfolio.agent_id.clone(),
                    product: pid.clone(),
                    reason: "missing price".into(),
                })?;
                if !price.is_finite() {
                    return Err(Error::Protocol {
                        agent: portfolio.agent_id.clone(),
                        product: pid.clone(),
                        reason: format!("non-finite price {price}"),
                    });
                }
                let floor = product.spec.price_floor(min_margin);
                if price < floor {
                    debug!(
                        "week {}: clamping {}/{} price {price} up to floor {floor}",
                        self.current_week_index, portfolio.agent_id, pid
                    );
                    self.clamp_log.push(ClampEvent {
                        week_index: self.current_week_index,
                        agent_id: portfolio.agent_id.clone(),
                        product_id: pid.clone(),
                        submitted: price,
                        floor,
                    });
                    row.push(floor);
                } else {
                    row.push(price);
                }
            }
            prices.push(row);
        }

        // Cluster price lists from the posted prices.
        let mut cluster_prices: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
        for (portfolio, row) in self.portfolios.iter().zip(&prices) {
            for (product, &p) in portfolio.products.iter().zip(row) {
                cluster_prices.entry(product.spec.cluster_id).or_default().push(p);
            }
        }

        let holiday = holiday_flag(self.week_number)?;
        let mut demands: Vec<Vec<f64>> = Vec::with_capacity(self.portfolios.len());
        for (portfolio, row) in self.portfolios.iter().zip(&prices) {
            let mut drow = Vec::with_capacity(row.len());
            for ((product, &price), &reference) in portfolio.products.iter().zip(row).zip(&portfolio.reference_demand) {
                let features = FeatureVector::build(
                    &product.demand_history,
                    reference,
                    price,
                    &cluster_prices[&product.spec.cluster_id],
                    self.week_number,
                    holiday,
                )?;
                let query = DemandQuery {
                    price,
                    initial_price: product.spec.initial_price,
                    baseline_demand: product.spec.baseline_demand,
                    cluster_id: product.spec.cluster_id,
                    features,
                };
                let mut rng = self.noise_rng(&portfolio.agent_id, &product.spec.product_id);
                drow.push(self.oracle.sample_demand(&query, &mut rng)?);
            }
            demands.push(drow);
        }

        // Book outcomes.
        let mut agents = Vec::with_capacity(self.portfolios.len());
        for ((portfolio, row), drow) in self.portfolios.iter_mut().zip(&prices).zip(&demands) {
            let mut products = Vec::with_capacity(row.len());
            for ((product, &price), &demand) in portfolio.products.iter_mut().zip(row).zip(drow) {
                product.record(price, demand);
                products.push(ProductWeek {
                    product_id: product.spec.product_id.clone(),
                    price,
                    demand,
                    revenue: price * demand,
                    profit: (price - product.spec.unit_cost) * demand,
                });
            }
            let total_revenue = products.iter().map(|p| p.revenue).sum();
            agents.push(AgentWeek {
                agent_id: portfolio.agent_id.clone(),
                products,
                total_revenue,
                market_share: 0.0,
            });
        }
        let market_total: f64 = agents.iter().map(|a| a.total_revenue).sum();
        let zero_revenue = !(market_total > 0.0);
        let n_agents = agents.len() as f64;
        for a in &mut agents {
            a.market_share = if zero_revenue {
                1.0 / n_agents
            } else {
                a.total_revenue / market_total
            };
        }

        let record = WeeklyRecord {
            week_index: self.current_week_index,
            year: self.year,
            week_number: self.week_number,
            agents,
            zero_revenue,
        };

        let (next_year, next_week) = self.next_calendar();
        let per_agent = record
            .agents
            .iter()
            .map(|a| {
                (
                    a.agent_id.clone(),
                    AgentObservation {
                        revenue_last_week: a.total_revenue,
                        market_share: a.market_share,
                    },
                )
            })
            .collect();
        let observation = MarketObservation {
            week_number: self.week_number,
            year: self.year,
            is_holiday: holiday,
            next_week_number: next_week,
            next_year,
            next_is_holiday: holiday_flag(next_week)?,
            per_product: self.product_observations(&prices, &demands),
            per_agent,
        };

        self.history_log.push(record.clone());
        self.current_week_index += 1;
        self.year = next_year;
        self.week_number = next_week;
        Ok((record, observation))
    }
}

/// Runs one episode: `weeks_per_episode` act → step → observe cycles.
/// Controllers are invoked in roster order of their first agent.
pub fn run_episode(
    state: &mut SimulationState,
    controllers: &mut [Box<dyn Controller>],
    episode: usize,
) -> Result<Vec<WeeklyRecord>> {
    state.reset(episode);
    for c in controllers.iter_mut() {
        c.begin_episode(episode)?;
    }
    let weeks = state.config.weeks_per_episode;
    let mut observation = state.initial_observation()?;
    for week in 0..weeks {
        let mut submitted = SubmittedPrices::new();
        {
            let view = MarketView {
                observation: &observation,
                portfolios: &state.portfolios,
                config: &state.config,
                episode,
                week_index: week,
            };
            for c in controllers.iter_mut() {
                let prices = c.act(&view)?;
                let ids = c.agent_ids().to_vec();
                if prices.len() != ids.len() {
                    return Err(Error::Protocol {
                        agent: ids.join(","),
                        product: "*".into(),
                        reason: format!("controller returned {} price vectors", prices.len()),
                    });
                }
                for (agent_id, row) in ids.into_iter().zip(prices) {
                    let portfolio = state
                        .portfolios
                        .iter()
                        .find(|p| p.agent_id == agent_id)
                        .ok_or_else(|| Error::Config(format!("controller drives unknown agent `{agent_id}`")))?;
                    let map = portfolio
                        .products
                        .iter()
                        .zip(row)
                        .map(|(p, price)| (p.spec.product_id.clone(), price))
                        .collect();
                    submitted.insert(agent_id, map);
                }
            }
        }
        let (_, next) = state.step(&submitted)?;
        observation = next;
        let view = MarketView {
            observation: &observation,
            portfolios: &state.portfolios,
            config: &state.config,
            episode,
            week_index: week + 1,
        };
        let done = week + 1 == weeks;
        for c in controllers.iter_mut() {
            c.observe(&view, done)?;
        }
    }
    Ok(state.history_log.clone())
}

/// Column header of the history CSV.
pub const HISTORY_COLUMNS: [&str; 9] = [
    "episode",
    "week",
    "agent_id",
    "product_id",
    "price",
    "demand",
    "revenue",
    "profit",
    "market_share",
];

pub fn write_history_header<W: Write>(w: &mut csv::Writer<W>) -> Result<()> {
    w.write_record(HISTORY_COLUMNS)?;
    Ok(())
}

/// One row per (episode, week, agent, product); floats with 6 decimals.
pub fn write_history_rows<W: Write>(w: &mut csv::Writer<W>, episode: usize, records: &[WeeklyRecord]) -> Result<()> {
    for rec in records {
        for a in &rec.agents {
            for p in &a.products {
                w.write_record([
                    episode.to_string(),
                    rec.week_index.to_string(),
                    a.agent_id.clone(),
                    p.product_id.clone(),
                    format!("{:.6}", p.price),
                    format!("{:.6}", p.demand),
                    format!("{:.6}", p.revenue),
                    format!("{:.6}", p.profit),
                    format!("{:.6}", a.market_share),
                ])?;
            }
        }
    }
    Ok(())
}
