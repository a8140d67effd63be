//! Multi-agent dynamic-pricing market simulator.
//!
//! A weekly-stepped market in which competing sellers post prices for an
//! identical product portfolio, demand is drawn from an elasticity-calibrated
//! log-linear model, and pricing is driven by rule-based strategies or by
//! multi-agent reinforcement-learning agents (independent DQN, MADDPG with
//! centralized critics, and QMIX value factorization).
//!
//! Module map:
//!
//! - [`market`]: products, observations and run configuration
//! - [`features`]: rolling demand/price features
//! - [`demand`]: reference demand model, elasticity sweep, transaction calibration
//! - [`env`]: the simulation loop and history log
//! - [`agents`]: rule strategies and learning agents
//! - [`learn`]: dense networks, optimizers, replay buffers, exploration schedules
//! - [`metrics`]: fairness, stability and coordination metrics
//! - [`harness`]: experiment runner, statistics and report emission

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod agents;
pub mod demand;
pub mod env;
pub mod error;
pub mod features;
pub mod harness;
pub mod learn;
pub mod market;
pub mod metrics;

pub use error::{Error, Result};
pub use market::{AgentKind, MarketConfig, MarketObservation, ProductSpec, ProductState};
