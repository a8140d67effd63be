//! Domain types shared across the simulator: products, weekly observations
//! and the run configuration.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::maddpg::MaddpgParams;
use crate::agents::madqn::DqnParams;
use crate::agents::qmix::QmixParams;
use crate::agents::rule::RuleStrategy;
use crate::demand::DemandParams;
use crate::error::{Error, Result};

/// Default category clusters of the benchmark portfolio.
pub const DEFAULT_CLUSTERS: [i64; 5] = [1, 2, 3, 5, 10];

/// Unit cost as a fraction of the initial price.
pub const DEFAULT_COST_RATIO: f64 = 0.6;

/// Simulated years have exactly 52 weeks.
pub const WEEKS_PER_YEAR: u32 = 52;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductSpec {
    pub product_id: String,
    pub cluster_id: i64,
    pub initial_price: f64,
    pub unit_cost: f64,
    /// Expected units per week under neutral conditions.
    pub baseline_demand: f64,
}

impl ProductSpec {
    pub fn validate(&self, clusters: &BTreeSet<i64>) -> Result<()> {
        if !(self.initial_price > 0.0) || !(self.baseline_demand > 0.0) || self.unit_cost < 0.0 {
            return Err(Error::Config(format!(
                "product {}: price and baseline demand must be positive, cost nonnegative",
                self.product_id
            )));
        }
        if self.initial_price <= self.unit_cost {
            return Err(Error::Config(format!(
                "product {}: initial price {} does not exceed unit cost {}",
                self.product_id, self.initial_price, self.unit_cost
            )));
        }
        if !clusters.contains(&self.cluster_id) {
            return Err(Error::Config(format!(
                "product {}: cluster {} is not configured",
                self.product_id, self.cluster_id
            )));
        }
        Ok(())
    }

    /// Lowest admissible price, `unit_cost × (1 + min_margin)`.
    pub fn price_floor(&self, min_margin: f64) -> f64 {
        self.unit_cost * (1.0 + min_margin)
    }
}

/// One product inside the simulation. All three histories grow by one entry
/// per completed week.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductState {
    pub spec: ProductSpec,
    pub current_price: f64,
    pub price_history: Vec<f64>,
    pub demand_history: Vec<f64>,
    pub revenue_history: Vec<f64>,
}

impl ProductState {
    pub fn new(spec: ProductSpec) -> Self {
        Self {
            current_price: spec.initial_price,
            spec,
            price_history: Vec::new(),
            demand_history: Vec::new(),
            revenue_history: Vec::new(),
        }
    }

    pub fn reset(&mut self) {
        self.current_price = self.spec.initial_price;
        self.price_history.clear();
        self.demand_history.clear();
        self.revenue_history.clear();
    }

    pub fn weeks(&self) -> usize {
        self.price_history.len()
    }

    pub fn record(&mut self, price: f64, demand: f64) {
        self.current_price = price;
        self.price_history.push(price);
        self.demand_history.push(demand);
        self.revenue_history.push(price * demand);
    }
}

/// True for the holiday season, calendar weeks 47 through 52.
pub fn holiday_flag(week_number: u32) -> Result<bool> {
    if !(1..=53).contains(&week_number) {
        return Err(Error::Domain(format!("week number {week_number} outside 1..=53")));
    }
    Ok((47..=52).contains(&week_number))
}

/// Calendar month containing a week, mapping 52 weeks evenly onto 12 months.
pub fn month_of_week(week_number: u32) -> u32 {
    let w = week_number.clamp(1, 53) - 1;
    (w * 12 / WEEKS_PER_YEAR + 1).min(12)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductObservation {
    pub agent_id: String,
    pub product_id: String,
    pub price: f64,
    pub cluster_id: i64,
    /// Posted prices of other agents' products in the same cluster.
    pub competitor_prices: Vec<f64>,
    /// Mean posted price of the cluster, own product included.
    pub cluster_avg_price: f64,
    pub last_demand: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentObservation {
    pub revenue_last_week: f64,
    pub market_share: f64,
}

/// Shared market snapshot broadcast to every agent after a week completes.
///
/// `week_number`/`year`/`is_holiday` describe the week that was just
/// simulated; the `next_*` fields describe the week agents are pricing for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketObservation {
    pub week_number: u32,
    pub year: i32,
    pub is_holiday: bool,
    pub next_week_number: u32,
    pub next_year: i32,
    pub next_is_holiday: bool,
    /// Ordered by roster, then by portfolio position.
    pub per_product: Vec<ProductObservation>,
    pub per_agent: BTreeMap<String, AgentObservation>,
}

impl MarketObservation {
    pub fn product(&self, agent_id: &str, product_id: &str) -> Option<&ProductObservation> {
        self.per_product
            .iter()
            .find(|p| p.agent_id == agent_id && p.product_id == product_id)
    }

    pub fn agent(&self, agent_id: &str) -> Option<&AgentObservation> {
        self.per_agent.get(agent_id)
    }
}

/// What drives one roster slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentKind {
    Rule { strategy: RuleStrategy },
    Madqn { params: DqnParams },
    Maddpg { params: MaddpgParams },
    Qmix { params: QmixParams },
}

impl AgentKind {
    pub fn label(&self) -> &'static str {
        match self {
            AgentKind::Rule { .. } => "Rule",
            AgentKind::Madqn { .. } => "MADQN",
            AgentKind::Maddpg { .. } => "MADDPG",
            AgentKind::Qmix { .. } => "QMIX",
        }
    }

    pub fn is_learning(&self) -> bool {
        !matches!(self, AgentKind::Rule { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RosterEntry {
    pub agent_id: String,
    #[serde(flatten)]
    pub kind: AgentKind,
}

impl RosterEntry {
    pub fn new(agent_id: impl Into<String>, kind: AgentKind) -> Self {
        Self {
            agent_id: agent_id.into(),
            kind,
        }
    }
}

fn default_products_per_agent() -> usize {
    DEFAULT_CLUSTERS.len()
}
fn default_clusters() -> Vec<i64> {
    DEFAULT_CLUSTERS.to_vec()
}
fn default_cost_ratio() -> f64 {
    DEFAULT_COST_RATIO
}
fn default_weeks() -> usize {
    104
}
fn default_episodes() -> usize {
    30
}
fn default_min_margin() -> f64 {
    0.05
}
fn default_max_weekly_change() -> f64 {
    0.10
}
fn default_lambda() -> f64 {
    1.0
}

/// Full description of one experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketConfig {
    pub agent_roster: Vec<RosterEntry>,
    #[serde(default = "default_products_per_agent")]
    pub products_per_agent: usize,
    #[serde(default = "default_clusters")]
    pub clusters: Vec<i64>,
    /// Per-cluster starting price overrides; clusters absent here start at `5 + c`.
    #[serde(default)]
    pub initial_prices: BTreeMap<i64, f64>,
    #[serde(default = "default_cost_ratio")]
    pub cost_ratio: f64,
    #[serde(default = "default_weeks")]
    pub weeks_per_episode: usize,
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_min_margin")]
    pub min_margin: f64,
    #[serde(default = "default_max_weekly_change")]
    pub max_weekly_change: f64,
    #[serde(default = "default_lambda")]
    pub reward_penalty_lambda: f64,
    #[serde(default)]
    pub demand_params: DemandParams,
}

impl MarketConfig {
    pub fn new(agent_roster: Vec<RosterEntry>) -> Self {
        Self {
            agent_roster,
            products_per_agent: default_products_per_agent(),
            clusters: default_clusters(),
            initial_prices: BTreeMap::new(),
            cost_ratio: DEFAULT_COST_RATIO,
            weeks_per_episode: default_weeks(),
            episodes: default_episodes(),
            seed: 0,
            min_margin: default_min_margin(),
            max_weekly_change: default_max_weekly_change(),
            reward_penalty_lambda: default_lambda(),
            demand_params: DemandParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.agent_roster.is_empty() {
            return Err(Error::Config("agent roster is empty".into()));
        }
        let mut seen = BTreeSet::new();
        for entry in &self.agent_roster {
            if !seen.insert(entry.agent_id.as_str()) {
                return Err(Error::Config(format!("duplicate agent id `{}`", entry.agent_id)));
            }
            if let AgentKind::Rule { strategy } = &entry.kind {
                strategy.validate(self.max_weekly_change)?;
            }
        }
        if !(self.max_weekly_change > 0.0 && self.max_weekly_change <= 1.0) {
            return Err(Error::Config(format!(
                "max_weekly_change {} outside (0, 1]",
                self.max_weekly_change
            )));
        }
        if self.weeks_per_episode < 2 {
            return Err(Error::Config(format!(
                "weeks_per_episode {} must be at least 2",
                self.weeks_per_episode
            )));
        }
        if self.episodes == 0 {
            return Err(Error::Config("episodes must be at least 1".into()));
        }
        if self.min_margin < 0.0 {
            return Err(Error::Config("min_margin must be nonnegative".into()));
        }
        if self.reward_penalty_lambda < 0.0 {
            return Err(Error::Config("reward_penalty_lambda must be nonnegative".into()));
        }
        if !(self.cost_ratio >= 0.0 && self.cost_ratio < 1.0) {
            return Err(Error::Config(format!("cost_ratio {} outside [0, 1)", self.cost_ratio)));
        }
        if self.products_per_agent != self.clusters.len() {
            return Err(Error::Config(format!(
                "products_per_agent {} does not match {} configured clusters",
                self.products_per_agent,
                self.clusters.len()
            )));
        }
        self.demand_params.validate(&self.clusters)?;
        let clusters: BTreeSet<i64> = self.clusters.iter().copied().collect();
        for spec in self.portfolio()? {
            spec.validate(&clusters)?;
        }
        Ok(())
    }

    /// The portfolio every agent starts with.
    pub fn portfolio(&self) -> Result<Vec<ProductSpec>> {
        let mut specs = make_default_portfolio(self.products_per_agent, &self.clusters, self.seed)?;
        for spec in &mut specs {
            if let Some(&price) = self.initial_prices.get(&spec.cluster_id) {
                spec.initial_price = price;
            }
            spec.unit_cost = spec.initial_price * self.cost_ratio;
        }
        Ok(specs)
    }

    /// Stable fingerprint of the configuration's canonical JSON.
    pub fn config_hash(&self) -> Result<String> {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(self)?;
        Ok(hex::encode(Sha256::digest(&json)))
    }
}

/// Builds the shared starting portfolio: one product per cluster, priced at
/// `5 + cluster`, costed at [`DEFAULT_COST_RATIO`] of the price, with a
/// seeded baseline demand in `[50, 150)` units per week.
pub fn make_default_portfolio(n_products: usize, clusters: &[i64], seed: u64) -> Result<Vec<ProductSpec>> {
    if clusters.is_empty() {
        return Err(Error::Config("cluster list is empty".into()));
    }
    if n_products != clusters.len() {
        return Err(Error::Config(format!(
            "n_products {} does not match {} clusters",
            n_products,
            clusters.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(clusters
        .iter()
        .enumerate()
        .map(|(i, &cluster_id)| {
            let initial_price = 5.0 + cluster_id as f64;
            ProductSpec {
                product_id: format!("P{}", i + 1),
                cluster_id,
                initial_price,
                unit_cost: initial_price * DEFAULT_COST_RATIO,
                baseline_demand: rng.random_range(50.0..150.0),
            }
        })
        .collect())
}
