//! MADDPG: deterministic tanh actors on local states, one centralized critic
//! per agent over the joint states and actions of all coordinator members.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::common::{apply_action, encode_state, price_change_rms, state_dim, RewardTracker};
use super::madqn::{default_batch, default_capacity, default_gamma, default_recency, default_warmup};
use super::{Controller, MarketView};
use crate::error::{Error, Result};
use crate::learn::{
    soft_update, Activation, DenseNet, ExplorationSchedule, NetSnapshot, Optimizer, OptimizerKind, ReplayBuffer,
};

fn default_actor_lr() -> f64 {
    1e-4
}
fn default_critic_lr() -> f64 {
    1e-5
}
fn default_tau() -> f64 {
    0.001
}
fn default_actor_hidden() -> Vec<usize> {
    vec![64, 64]
}
fn default_critic_hidden() -> Vec<usize> {
    vec![128, 64]
}
fn default_noise() -> ExplorationSchedule {
    ExplorationSchedule::maddpg_noise()
}
fn default_smoothing() -> f64 {
    0.5
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaddpgParams {
    #[serde(default = "default_actor_lr")]
    pub actor_lr: f64,
    #[serde(default = "default_critic_lr")]
    pub critic_lr: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_actor_hidden")]
    pub actor_hidden: Vec<usize>,
    #[serde(default = "default_critic_hidden")]
    pub critic_hidden: Vec<usize>,
    #[serde(default = "default_noise")]
    pub noise: ExplorationSchedule,
    /// Gaussian noise is added to the actor's normalized output in `[−1, 1]`
    /// before scaling by `max_weekly_change`; when false it is added to the
    /// scaled relative change.
    #[serde(default = "default_true")]
    pub noise_in_policy_space: bool,
    /// Weight of the previous change in the applied-change average.
    #[serde(default = "default_smoothing")]
    pub smoothing: f64,
    #[serde(default = "default_capacity")]
    pub replay_capacity: usize,
    #[serde(default = "default_recency")]
    pub recency_decay: f64,
    #[serde(default = "default_warmup")]
    pub warmup: usize,
    #[serde(default)]
    pub optimizer: OptimizerKind,
}

impl Default for MaddpgParams {
    fn default() -> Self {
        Self {
            actor_lr: default_actor_lr(),
            critic_lr: default_critic_lr(),
            gamma: default_gamma(),
            batch_size: default_batch(),
            tau: default_tau(),
            actor_hidden: default_actor_hidden(),
            critic_hidden: default_critic_hidden(),
            noise: default_noise(),
            noise_in_policy_space: true,
            smoothing: default_smoothing(),
            replay_capacity: default_capacity(),
            recency_decay: default_recency(),
            warmup: default_warmup(),
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl MaddpgParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config("gamma and tau must lie in [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(Error::Config(format!("smoothing {} outside [0, 1)", self.smoothing)));
        }
        if self.batch_size == 0 || !(self.actor_lr > 0.0) || !(self.critic_lr > 0.0) {
            return Err(Error::Config("batch size and learning rates must be positive".into()));
        }
        Ok(())
    }
}

/// One aligned step of every coordinator member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointTransition {
    pub states: Vec<Vec<f64>>,
    /// Normalized actions in `[−1, 1]`.
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub next_states: Vec<Vec<f64>>,
    pub done: bool,
}

fn mlp_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut s = vec![input];
    s.extend_from_slice(hidden);
    s.push(output);
    s
}

/// Concatenates joint states then joint actions.
pub fn critic_input(states: &[Vec<f64>], actions: &[Vec<f64>]) -> Vec<f64> {
    states.iter().chain(actions).flatten().copied().collect()
}

/// Actors, centralized critics, their targets and the joint replay buffer.
#[derive(Debug, Clone)]
pub struct MaddpgLearner {
    pub params: MaddpgParams,
    pub n_agents: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    pub actors: Vec<DenseNet>,
    pub critics: Vec<DenseNet>,
    pub target_actors: Vec<DenseNet>,
    pub target_critics: Vec<DenseNet>,
    actor_opt: Vec<Optimizer>,
    critic_opt: Vec<Optimizer>,
    pub replay: ReplayBuffer<JointTransition>,
}

impl MaddpgLearner {
    pub fn new<R: Rng + ?Sized>(
        n_agents: usize,
        state_dim: usize,
        action_dim: usize,
        params: MaddpgParams,
        rng: &mut R,
    ) -> Result<Self> {
        params.validate()?;
        if n_agents == 0 {
            return Err(Error::Config("MADDPG coordinator has no agents".into()));
        }
        let actor_sizes = mlp_sizes(state_dim, &params.actor_hidden, action_dim);
        let critic_sizes = mlp_sizes(n_agents * (state_dim + action_dim), &params.critic_hidden, 1);
        let mut actors = Vec::new();
        let mut critics = Vec::new();
        for _ in 0..n_agents {
            actors.push(DenseNet::mlp(&actor_sizes, Activation::Relu, Activation::Tanh, rng)?);
            critics.push(DenseNet::mlp(&critic_sizes, Activation::Relu, Activation::Linear, rng)?);
        }
        let actor_opt = actors
            .iter()
            .map(|a| Optimizer::new(params.optimizer, a.parameter_count()))
            .collect();
        let critic_opt = critics
            .iter()
            .map(|c| Optimizer::new(params.optimizer, c.parameter_count()))
            .collect();
        let replay = ReplayBuffer::new(params.replay_capacity, params.recency_decay)?;
        Ok(Self {
            target_actors: actors.clone(),
            target_critics: critics.clone(),
            params,
            n_agents,
            state_dim,
            action_dim,
            actors,
            critics,
            actor_opt,
            critic_opt,
            replay,
        })
    }

    pub fn policy(&self, agent: usize, state: &[f64]) -> Result<Vec<f64>> {
        self.actors[agent].forward(state)
    }

    pub fn q_value(&self, agent: usize, states: &[Vec<f64>], actions: &[Vec<f64>]) -> Result<f64> {
        Ok(self.critics[agent].forward(&critic_input(states, actions))?[0])
    }

    fn check(&self, t: &JointTransition) -> Result<()> {
        let n = self.n_agents;
        let aligned = t.states.len() == n
            && t.next_states.len() == n
            && t.actions.len() == n
            && t.rewards.len() == n
            && t.states.iter().chain(&t.next_states).all(|s| s.len() == self.state_dim)
            && t.actions.iter().all(|a| a.len() == self.action_dim);
        if aligned {
            Ok(())
        } else {
            Err(Error::Protocol {
                agent: "maddpg".into(),
                product: "*".into(),
                reason: "misaligned joint transition".into(),
            })
        }
    }

    /// Critic then actor step for every agent, then Polyak target updates.
    /// Returns per-agent (critic loss, actor loss).
    pub fn learn_batch(&mut self, batch: &[&JointTransition]) -> Result<(Vec<f64>, Vec<f64>)> {
        for t in batch {
            self.check(t)?;
        }
        let b = batch.len().max(1) as f64;
        let gamma = self.params.gamma;
        // Target joint actions for every next state, shared by all critics.
        let next_actions: Vec<Vec<Vec<f64>>> = batch
            .iter()
            .map(|t| {
                t.next_states
                    .iter()
                    .zip(&self.target_actors)
                    .map(|(s, a)| a.forward(s))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        let mut critic_losses = Vec::with_capacity(self.n_agents);
        let mut actor_losses = Vec::with_capacity(self.n_agents);
        for i in 0..self.n_agents {
            let mut grads = vec![0.0; self.critics[i].parameter_count()];
            let mut loss = 0.0;
            for (t, na) in batch.iter().zip(&next_actions) {
                let y = if t.done || gamma == 0.0 {
                    t.rewards[i]
                } else {
                    t.rewards[i] + gamma * self.target_critics[i].forward(&critic_input(&t.next_states, na))?[0]
                };
                let trace = self.critics[i].forward_trace(&critic_input(&t.states, &t.actions))?;
                let err = trace.output()[0] - y;
                loss += err * err / b;
                self.critics[i].backward_into(&trace, &[2.0 * err / b], &mut grads)?;
            }
            if !loss.is_finite() {
                return Err(Error::Training(format!("non-finite critic loss for agent {i}")));
            }
            self.critic_opt[i].step(self.critics[i].params_mut(), &grads, self.params.critic_lr)?;
            critic_losses.push(loss);

            let mut actor_grads = vec![0.0; self.actors[i].parameter_count()];
            let mut scratch = vec![0.0; self.critics[i].parameter_count()];
            let mut actor_loss = 0.0;
            let offset = self.n_agents * self.state_dim + i * self.action_dim;
            for t in batch {
                let actor_trace = self.actors[i].forward_trace(&t.states[i])?;
                let mut actions = t.actions.clone();
                actions[i] = actor_trace.output().to_vec();
                let critic_trace = self.critics[i].forward_trace(&critic_input(&t.states, &actions))?;
                actor_loss -= critic_trace.output()[0] / b;
                let dinput = self.critics[i].backward_into(&critic_trace, &[-1.0 / b], &mut scratch)?;
                self.actors[i].backward_into(
                    &actor_trace,
                    &dinput[offset..offset + self.action_dim],
                    &mut actor_grads,
                )?;
            }
            self.actor_opt[i].step(self.actors[i].params_mut(), &actor_grads, self.params.actor_lr)?;
            actor_losses.push(actor_loss);
        }
        let tau = self.params.tau;
        for i in 0..self.n_agents {
            soft_update(&mut self.target_actors[i], &self.actors[i], tau)?;
            soft_update(&mut self.target_critics[i], &self.critics[i], tau)?;
        }
        Ok((critic_losses, actor_losses))
    }

    pub fn learn<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
        if self.replay.len() < self.params.warmup.max(1) {
            return Ok(None);
        }
        let batch: Vec<JointTransition> = match self.replay.sample_batch(self.params.batch_size, rng) {
            Some(b) => b.into_iter().cloned().collect(),
            None => return Ok(None),
        };
        let refs: Vec<&JointTransition> = batch.iter().collect();
        self.learn_batch(&refs).map(Some)
    }
}

/// Raw exploratory change for one product, clamped to `±max_weekly_change`.
/// Returns (normalized action, relative change).
pub fn noisy_change<R: Rng + ?Sized>(
    policy_output: f64,
    sigma: f64,
    max_weekly_change: f64,
    in_policy_space: bool,
    rng: &mut R,
) -> (f64, f64) {
    let noise = if sigma > 0.0 {
        Normal::new(0.0, sigma).map(|n| n.sample(rng)).unwrap_or(0.0)
    } else {
        0.0
    };
    let change = if in_policy_space {
        (policy_output + noise).clamp(-1.0, 1.0) * max_weekly_change
    } else {
        (policy_output * max_weekly_change + noise).clamp(-max_weekly_change, max_weekly_change)
    };
    (change / max_weekly_change, change)
}

/// `smoothing·previous + (1 − smoothing)·raw`.
pub fn smooth_change(previous: f64, raw: f64, smoothing: f64) -> f64 {
    smoothing * previous + (1.0 - smoothing) * raw
}

/// Drives every MADDPG seller in a market.
pub struct MaddpgCoordinator {
    ids: Vec<String>,
    learner: MaddpgLearner,
    rng: ChaCha8Rng,
    trackers: Vec<RewardTracker>,
    previous_change: Vec<Vec<f64>>,
    sigma: f64,
    pending: Option<(Vec<Vec<f64>>, Vec<Vec<f64>>)>,
}

impl MaddpgCoordinator {
    pub fn new(ids: Vec<String>, n_products: usize, params: MaddpgParams, rng: &mut ChaCha8Rng) -> Result<Self> {
        let learner = MaddpgLearner::new(ids.len(), state_dim(n_products), n_products, params, rng)?;
        let sigma = learner.params.noise.value(0);
        Ok(Self {
            trackers: vec![RewardTracker::default(); ids.len()],
            previous_change: vec![vec![0.0; n_products]; ids.len()],
            ids,
            learner,
            rng: ChaCha8Rng::seed_from_u64(rng.random()),
            sigma,
            pending: None,
        })
    }

    pub fn learner(&self) -> &MaddpgLearner {
        &self.learner
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

impl Controller for MaddpgCoordinator {
    fn agent_ids(&self) -> &[String] {
        &self.ids
    }

    fn begin_episode(&mut self, episode: usize) -> Result<()> {
        self.sigma = self.learner.params.noise.value(episode as u64);
        self.trackers.iter_mut().for_each(RewardTracker::reset);
        self.previous_change.iter_mut().for_each(|v| v.fill(0.0));
        self.pending = None;
        Ok(())
    }

    fn act(&mut self, view: &MarketView<'_>) -> Result<Vec<Vec<f64>>> {
        let cfg = view.config;
        let mwc = cfg.max_weekly_change;
        let smoothing = self.learner.params.smoothing;
        let in_policy_space = self.learner.params.noise_in_policy_space;
        let mut states = Vec::with_capacity(self.ids.len());
        let mut actions = Vec::with_capacity(self.ids.len());
        let mut prices = Vec::with_capacity(self.ids.len());
        for (i, id) in self.ids.iter().enumerate() {
            let portfolio = view.portfolio(id)?;
            let state = encode_state(portfolio, view.observation)?;
            let policy = self.learner.policy(i, &state)?;
            let mut action = Vec::with_capacity(policy.len());
            let mut row = Vec::with_capacity(policy.len());
            for ((product, &out), prev) in portfolio.products.iter().zip(&policy).zip(&mut self.previous_change[i]) {
                let (normalized, change) = noisy_change(out, self.sigma, mwc, in_policy_space, &mut self.rng);
                let applied = smooth_change(*prev, change, smoothing);
                *prev = applied;
                action.push(normalized);
                row.push(apply_action(product, applied, cfg.min_margin, mwc));
            }
            states.push(state);
            actions.push(action);
            prices.push(row);
        }
        self.pending = Some((states, actions));
        Ok(prices)
    }

    fn observe(&mut self, view: &MarketView<'_>, done: bool) -> Result<()> {
        let Some((states, actions)) = self.pending.take() else {
            return Ok(());
        };
        let mut rewards = Vec::with_capacity(self.ids.len());
        let mut next_states = Vec::with_capacity(self.ids.len());
        for (id, tracker) in self.ids.iter().zip(&mut self.trackers) {
            let portfolio = view.portfolio(id)?;
            rewards.push(tracker.reward(
                portfolio.total_revenue_last_week(),
                price_change_rms(portfolio),
                view.config.reward_penalty_lambda,
            ));
            next_states.push(encode_state(portfolio, view.observation)?);
        }
        self.learner.replay.push(JointTransition {
            states,
            actions,
            rewards,
            next_states,
            done,
        });
        self.learner.learn(&mut self.rng)?;
        Ok(())
    }

    fn snapshots(&self) -> Vec<(String, String, NetSnapshot)> {
        self.ids
            .iter()
            .enumerate()
            .flat_map(|(i, id)| {
                [
                    (id.clone(), "actor".to_string(), self.learner.actors[i].to_snapshot()),
                    (id.clone(), "critic".to_string(), self.learner.critics[i].to_snapshot()),
                ]
            })
            .collect()
    }
}
