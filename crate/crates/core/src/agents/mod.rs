//! Pricing agents and the controller interface the simulation loop drives.
//!
//! Rule agents and MADQN agents are independent controllers. MADDPG and QMIX
//! agents are grouped under one coordinator per algorithm, which owns their
//! joint replay buffer and performs the centralized updates.

pub mod common;
pub mod maddpg;
pub mod madqn;
pub mod qmix;
pub mod rule;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::env::{stream_key, AgentPortfolio};
use crate::error::{Error, Result};
use crate::learn::NetSnapshot;
use crate::market::{AgentKind, MarketConfig, MarketObservation};

/// Read-only view handed to controllers each week.
pub struct MarketView<'a> {
    pub observation: &'a MarketObservation,
    pub portfolios: &'a [AgentPortfolio],
    pub config: &'a MarketConfig,
    pub episode: usize,
    /// Weeks completed so far in this episode.
    pub week_index: usize,
}

impl MarketView<'_> {
    pub fn portfolio(&self, agent_id: &str) -> Result<&AgentPortfolio> {
        self.portfolios
            .iter()
            .find(|p| p.agent_id == agent_id)
            .ok_or_else(|| Error::Config(format!("unknown agent `{agent_id}`")))
    }
}

pub trait Controller: Send {
    /// Agents this controller prices for, in roster order.
    fn agent_ids(&self) -> &[String];

    fn begin_episode(&mut self, _episode: usize) -> Result<()> {
        Ok(())
    }

    /// Next-week prices, one vector per agent in [`Controller::agent_ids`]
    /// order, aligned with each portfolio.
    fn act(&mut self, view: &MarketView<'_>) -> Result<Vec<Vec<f64>>>;

    /// Called after the week has been simulated: compute rewards, store
    /// transitions, learn.
    fn observe(&mut self, _view: &MarketView<'_>, _done: bool) -> Result<()> {
        Ok(())
    }

    /// Named network snapshots per agent for checkpointing.
    fn snapshots(&self) -> Vec<(String, String, NetSnapshot)> {
        Vec::new()
    }
}

/// Deterministic per-agent RNG derived from the run seed.
pub fn agent_rng(seed: u64, agent_id: &str, purpose: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ stream_key(&["agent", purpose, agent_id]))
}

/// Keeps track of which coordinator owns each agent.
#[derive(Debug, Default)]
pub struct CoordinatorRegistry {
    owner: BTreeMap<String, String>,
}

impl CoordinatorRegistry {
    pub fn register(&mut self, agent_id: &str, coordinator: &str) -> Result<()> {
        if let Some(existing) = self.owner.get(agent_id) {
            return Err(Error::Config(format!(
                "agent `{agent_id}` already registered with coordinator `{existing}`, cannot join `{coordinator}`"
            )));
        }
        self.owner.insert(agent_id.to_string(), coordinator.to_string());
        Ok(())
    }
}

/// Builds the controllers for a roster, ordered by each controller's first
/// roster position.
pub fn build_controllers(config: &MarketConfig) -> Result<Vec<Box<dyn Controller>>> {
    config.validate()?;
    let n_products = config.products_per_agent;
    let mut registry = CoordinatorRegistry::default();
    let mut slots: Vec<(usize, Box<dyn Controller>)> = Vec::new();
    let mut maddpg_members = Vec::new();
    let mut qmix_members = Vec::new();
    for (pos, entry) in config.agent_roster.iter().enumerate() {
        match &entry.kind {
            AgentKind::Rule { strategy } => {
                slots.push((pos, Box::new(rule::RuleAgent::new(&entry.agent_id, strategy.clone()))));
            }
            AgentKind::Madqn { params } => {
                let mut rng = agent_rng(config.seed, &entry.agent_id, "madqn");
                slots.push((
                    pos,
                    Box::new(madqn::MadqnAgent::new(&entry.agent_id, n_products, params.clone(), &mut rng)?),
                ));
            }
            AgentKind::Maddpg { params } => {
                registry.register(&entry.agent_id, "maddpg")?;
                maddpg_members.push((pos, entry.agent_id.clone(), params.clone()));
            }
            AgentKind::Qmix { params } => {
                registry.register(&entry.agent_id, "qmix")?;
                qmix_members.push((pos, entry.agent_id.clone(), params.clone()));
            }
        }
    }
    if let Some((pos, _, params)) = maddpg_members.first().cloned() {
        ensure_shared("MADDPG", maddpg_members.iter().map(|m| &m.2))?;
        let ids: Vec<String> = maddpg_members.into_iter().map(|m| m.1).collect();
        let mut rng = agent_rng(config.seed, &ids.join(","), "maddpg");
        let coordinator = maddpg::MaddpgCoordinator::new(ids, n_products, params, &mut rng)?;
        slots.push((pos, Box::new(coordinator)));
    }
    if let Some((pos, _, params)) = qmix_members.first().cloned() {
        ensure_shared("QMIX", qmix_members.iter().map(|m| &m.2))?;
        let ids: Vec<String> = qmix_members.into_iter().map(|m| m.1).collect();
        let mut rng = agent_rng(config.seed, &ids.join(","), "qmix");
        let coordinator = qmix::QmixCoordinator::new(ids, n_products, params, &mut rng)?;
        slots.push((pos, Box::new(coordinator)));
    }
    slots.sort_by_key(|(pos, _)| *pos);
    Ok(slots.into_iter().map(|(_, c)| c).collect())
}

fn ensure_shared<'a, T: PartialEq + 'a>(label: &str, mut params: impl Iterator<Item = &'a T>) -> Result<()> {
    if let Some(first) = params.next() {
        if params.any(|p| p != first) {
            return Err(Error::Config(format!(
                "{label} agents share one coordinator and must use identical hyperparameters"
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn double_registration_is_rejected() {
        let mut reg = CoordinatorRegistry::default();
        reg.register("a", "qmix").unwrap();
        assert!(matches!(reg.register("a", "maddpg"), Err(Error::Config(_))));
    }
}
