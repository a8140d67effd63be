//! Independent deep Q-learning agents.
//!
//! The Q-network has one head of `n_actions` outputs per product; each
//! product's bin is chosen and bootstrapped independently from the shared
//! torso.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::common::{
    apply_action, argmax, discretize_action, encode_state, price_change_rms, state_dim, RewardTracker, N_BINS,
};
use super::{Controller, MarketView};
use crate::error::{Error, Result};
use crate::learn::{
    soft_update, Action, Activation, DenseNet, ExplorationSchedule, NetSnapshot, Optimizer, OptimizerKind,
    ReplayBuffer, Transition,
};
use crate::learn::replay::{DEFAULT_CAPACITY, DEFAULT_RECENCY_DECAY};

pub(crate) fn default_gamma() -> f64 {
    0.95
}
pub(crate) fn default_batch() -> usize {
    64
}
pub(crate) fn default_target_every() -> usize {
    5
}
pub(crate) fn default_q_hidden() -> Vec<usize> {
    vec![128, 64, 32]
}
pub(crate) fn default_capacity() -> usize {
    DEFAULT_CAPACITY
}
pub(crate) fn default_recency() -> f64 {
    DEFAULT_RECENCY_DECAY
}
pub(crate) fn default_warmup() -> usize {
    200
}
pub(crate) fn default_epsilon() -> ExplorationSchedule {
    ExplorationSchedule::epsilon_greedy()
}
fn default_lr() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DqnParams {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Hard target copy every this many learn calls.
    #[serde(default = "default_target_every")]
    pub target_update_every: usize,
    /// When set, Polyak-average the target after every learn call instead.
    #[serde(default)]
    pub target_tau: Option<f64>,
    #[serde(default = "default_q_hidden")]
    pub hidden_layers: Vec<usize>,
    #[serde(default = "default_capacity")]
    pub replay_capacity: usize,
    #[serde(default = "default_recency")]
    pub recency_decay: f64,
    /// Transitions stored before learning starts.
    #[serde(default = "default_warmup")]
    pub warmup: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: ExplorationSchedule,
    #[serde(default)]
    pub optimizer: OptimizerKind,
}

impl Default for DqnParams {
    fn default() -> Self {
        Self {
            learning_rate: default_lr(),
            gamma: default_gamma(),
            batch_size: default_batch(),
            target_update_every: default_target_every(),
            target_tau: None,
            hidden_layers: default_q_hidden(),
            replay_capacity: default_capacity(),
            recency_decay: default_recency(),
            warmup: default_warmup(),
            epsilon: default_epsilon(),
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl DqnParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        if self.batch_size == 0 || self.target_update_every == 0 {
            return Err(Error::Config("batch_size and target_update_every must be positive".into()));
        }
        if let Some(tau) = self.target_tau {
            if !(0.0..=1.0).contains(&tau) {
                return Err(Error::Config(format!("target_tau {tau} outside [0, 1]")));
            }
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Layer sizes `[input, hidden.., heads·actions]`.
pub fn q_layer_sizes(input: usize, hidden: &[usize], heads: usize, actions: usize) -> Vec<usize> {
    let mut sizes = vec![input];
    sizes.extend_from_slice(hidden);
    sizes.push(heads * actions);
    sizes
}

/// Greedy bin per head; ties go to the lowest bin.
pub fn greedy_bins(q: &[f64], actions: usize) -> Vec<usize> {
    q.chunks(actions).map(argmax).collect()
}

/// Per-head ε-greedy selection.
pub fn epsilon_greedy<R: Rng + ?Sized>(q: &[f64], actions: usize, epsilon: f64, rng: &mut R) -> Vec<usize> {
    q.chunks(actions)
        .map(|head| {
            if rng.random::<f64>() < epsilon {
                rng.random_range(0..actions)
            } else {
                argmax(head)
            }
        })
        .collect()
}

/// DQN core with factorized per-head outputs, usable on any state/action size.
#[derive(Debug, Clone)]
pub struct QLearner {
    pub params: DqnParams,
    pub heads: usize,
    pub actions: usize,
    pub online: DenseNet,
    pub target: DenseNet,
    optimizer: Optimizer,
    pub replay: ReplayBuffer<Transition>,
    learn_calls: u64,
}

impl QLearner {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        heads: usize,
        actions: usize,
        params: DqnParams,
        rng: &mut R,
    ) -> Result<Self> {
        params.validate()?;
        let sizes = q_layer_sizes(state_dim, &params.hidden_layers, heads, actions);
        let online = DenseNet::mlp(&sizes, Activation::Relu, Activation::Linear, rng)?;
        let target = online.clone();
        let optimizer = Optimizer::new(params.optimizer, online.parameter_count());
        let replay = ReplayBuffer::new(params.replay_capacity, params.recency_decay)?;
        Ok(Self {
            params,
            heads,
            actions,
            online,
            target,
            optimizer,
            replay,
            learn_calls: 0,
        })
    }

    pub fn q_values(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.online.forward(state)
    }

    pub fn greedy(&self, state: &[f64]) -> Result<Vec<usize>> {
        Ok(greedy_bins(&self.q_values(state)?, self.actions))
    }

    pub fn act<R: Rng + ?Sized>(&self, state: &[f64], epsilon: f64, rng: &mut R) -> Result<Vec<usize>> {
        if epsilon >= 1.0 {
            return Ok((0..self.heads).map(|_| rng.random_range(0..self.actions)).collect());
        }
        Ok(epsilon_greedy(&self.q_values(state)?, self.actions, epsilon, rng))
    }

    pub fn learn_calls(&self) -> u64 {
        self.learn_calls
    }

    /// Bootstrapped targets per head.
    pub fn td_targets(&self, t: &Transition) -> Result<Vec<f64>> {
        if t.done || self.params.gamma == 0.0 {
            return Ok(vec![t.reward; self.heads]);
        }
        let next = self.target.forward(&t.next_state)?;
        Ok(next
            .chunks(self.actions)
            .map(|h| t.reward + self.params.gamma * h.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect())
    }

    /// One gradient step on the mean squared TD error of `batch`; returns
    /// the loss before the step.
    pub fn learn_batch(&mut self, batch: &[&Transition]) -> Result<f64> {
        if batch.is_empty() {
            return Ok(0.0);
        }
        let scale = 1.0 / (batch.len() * self.heads) as f64;
        let mut grads = vec![0.0; self.online.parameter_count()];
        let mut loss = 0.0;
        for t in batch {
            let bins = match &t.action {
                Action::Discrete(b) if b.len() == self.heads => b,
                _ => {
                    return Err(Error::Shape {
                        expected: self.heads,
                        got: match &t.action {
                            Action::Discrete(b) => b.len(),
                            Action::Continuous(c) => c.len(),
                        },
                    })
                }
            };
            let y = self.td_targets(t)?;
            let trace = self.online.forward_trace(&t.state)?;
            let q = trace.output();
            let mut upstream = vec![0.0; q.len()];
            for (h, (&bin, &target)) in bins.iter().zip(&y).enumerate() {
                let idx = h * self.actions + bin;
                let err = q[idx] - target;
                loss += err * err * scale;
                upstream[idx] = 2.0 * err * scale;
            }
            self.online.backward_into(&trace, &upstream, &mut grads)?;
        }
        if !loss.is_finite() {
            let rewards: Vec<f64> = batch.iter().map(|t| t.reward).collect();
            return Err(Error::Training(format!("non-finite TD loss; batch rewards {rewards:?}")));
        }
        self.optimizer
            .step(self.online.params_mut(), &grads, self.params.learning_rate)?;
        self.learn_calls += 1;
        match self.params.target_tau {
            Some(tau) => soft_update(&mut self.target, &self.online, tau)?,
            None => {
                if self.learn_calls.is_multiple_of(self.params.target_update_every as u64) {
                    self.target.copy_from(&self.online)?;
                }
            }
        }
        Ok(loss)
    }

    /// Samples a batch and learns once the warm-up is complete.
    pub fn learn<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Option<f64>> {
        if self.replay.len() < self.params.warmup.max(1) {
            return Ok(None);
        }
        let batch: Vec<Transition> = match self.replay.sample_batch(self.params.batch_size, rng) {
            Some(b) => b.into_iter().cloned().collect(),
            None => return Ok(None),
        };
        let refs: Vec<&Transition> = batch.iter().collect();
        self.learn_batch(&refs).map(Some)
    }
}

/// One independent MADQN seller.
pub struct MadqnAgent {
    ids: [String; 1],
    learner: QLearner,
    rng: ChaCha8Rng,
    tracker: RewardTracker,
    epsilon: f64,
    pending: Option<(Vec<f64>, Vec<usize>)>,
}

impl MadqnAgent {
    pub fn new(
        agent_id: &str,
        n_products: usize,
        params: DqnParams,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let learner = QLearner::new(state_dim(n_products), n_products, N_BINS, params, rng)?;
        let epsilon = learner.params.epsilon.value(0);
        Ok(Self {
            ids: [agent_id.to_string()],
            learner,
            rng: ChaCha8Rng::seed_from_u64(rng.random()),
            tracker: RewardTracker::default(),
            epsilon,
            pending: None,
        })
    }

    pub fn learner(&self) -> &QLearner {
        &self.learner
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

impl Controller for MadqnAgent {
    fn agent_ids(&self) -> &[String] {
        &self.ids
    }

    fn begin_episode(&mut self, episode: usize) -> Result<()> {
        self.epsilon = self.learner.params.epsilon.value(episode as u64);
        self.tracker.reset();
        self.pending = None;
        Ok(())
    }

    fn act(&mut self, view: &MarketView<'_>) -> Result<Vec<Vec<f64>>> {
        let portfolio = view.portfolio(&self.ids[0])?;
        let state = encode_state(portfolio, view.observation)?;
        let bins = self.learner.act(&state, self.epsilon, &mut self.rng)?;
        let cfg = view.config;
        let prices = portfolio
            .products
            .iter()
            .zip(&bins)
            .map(|(p, &b)| Ok(apply_action(p, discretize_action(b)?, cfg.min_margin, cfg.max_weekly_change)))
            .collect::<Result<Vec<_>>>()?;
        self.pending = Some((state, bins));
        Ok(vec![prices])
    }

    fn observe(&mut self, view: &MarketView<'_>, done: bool) -> Result<()> {
        let Some((state, bins)) = self.pending.take() else {
            return Ok(());
        };
        let portfolio = view.portfolio(&self.ids[0])?;
        let reward = self.tracker.reward(
            portfolio.total_revenue_last_week(),
            price_change_rms(portfolio),
            view.config.reward_penalty_lambda,
        );
        let next = encode_state(portfolio, view.observation)?;
        self.learner
            .replay
            .push(Transition::new(state, Action::Discrete(bins), reward, next, done)?);
        self.learner.learn(&mut self.rng)?;
        Ok(())
    }

    fn snapshots(&self) -> Vec<(String, String, NetSnapshot)> {
        vec![(self.ids[0].clone(), "q".into(), self.learner.online.to_snapshot())]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_params() -> DqnParams {
        DqnParams {
            hidden_layers: vec![8],
            warmup: 1,
            batch_size: 4,
            ..DqnParams::default()
        }
    }

    #[test]
    fn greedy_with_zero_epsilon_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = QLearner::new(3, 2, 5, small_params(), &mut rng).unwrap();
        let s = [0.1, -0.2, 0.3];
        let a = l.act(&s, 0.0, &mut rng).unwrap();
        for _ in 0..10 {
            assert_eq!(l.act(&s, 0.0, &mut rng).unwrap(), a);
        }
        assert_eq!(a, l.greedy(&s).unwrap());
    }

    #[test]
    fn full_exploration_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let l = QLearner::new(2, 1, N_BINS, small_params(), &mut rng).unwrap();
        let draws = 100_000;
        let mut counts = [0usize; N_BINS];
        for _ in 0..draws {
            counts[l.act(&[0.0, 0.0], 1.0, &mut rng).unwrap()[0]] += 1;
        }
        let expected = draws as f64 / N_BINS as f64;
        for c in counts {
            assert!((c as f64 - expected).abs() < 0.02 * expected + 60.0, "{c}");
        }
    }

    #[test]
    fn all_equal_q_picks_bin_zero() {
        assert_eq!(greedy_bins(&[0.5; 21], 21), vec![0]);
    }

    #[test]
    fn argmax_invariant_to_constant_shift() {
        let q = [0.3, -1.0, 2.0, 2.0, 0.0, 1.5];
        let shifted: Vec<f64> = q.iter().map(|v| v + 7.25).collect();
        assert_eq!(greedy_bins(&q, 3), greedy_bins(&shifted, 3));
    }

    #[test]
    fn terminal_and_myopic_targets_equal_reward() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l = QLearner::new(2, 2, 3, small_params(), &mut rng).unwrap();
        let t = Transition::new(vec![1.0, 0.0], Action::Discrete(vec![0, 1]), 0.7, vec![0.0, 1.0], true).unwrap();
        assert_eq!(l.td_targets(&t).unwrap(), vec![0.7, 0.7]);
        let mut myopic = small_params();
        myopic.gamma = 0.0;
        let l = QLearner::new(2, 2, 3, myopic, &mut rng).unwrap();
        let t = Transition { done: false, ..t };
        assert_eq!(l.td_targets(&t).unwrap(), vec![0.7, 0.7]);
    }

    #[test]
    fn hard_copy_every_five_learn_calls() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut l = QLearner::new(2, 1, 2, small_params(), &mut rng).unwrap();
        let t = Transition::new(vec![1.0, 0.0], Action::Discrete(vec![1]), 1.0, vec![0.0, 1.0], false).unwrap();
        for i in 1..=5 {
            l.learn_batch(&[&t]).unwrap();
            assert_eq!(l.target == l.online, i == 5, "call {i}");
        }
    }

    #[test]
    fn fixed_batch_loss_decreases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = small_params();
        params.gamma = 0.0;
        let mut l = QLearner::new(2, 1, 2, params, &mut rng).unwrap();
        let batch = [
            Transition::new(vec![1.0, 0.0], Action::Discrete(vec![0]), 1.0, vec![0.0, 1.0], false).unwrap(),
            Transition::new(vec![0.0, 1.0], Action::Discrete(vec![1]), -0.5, vec![1.0, 0.0], false).unwrap(),
        ];
        let refs: Vec<&Transition> = batch.iter().collect();
        let first = l.learn_batch(&refs).unwrap();
        let mut last = first;
        for _ in 0..2000 {
            last = l.learn_batch(&refs).unwrap();
        }
        assert!(last < 1e-3 && last < first, "{first} -> {last}");
    }
}
