//! QMIX: per-agent Q-networks combined by a monotonic mixing network whose
//! weights are generated from the global state by hypernetworks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::common::{apply_action, discretize_action, encode_state, price_change_rms, state_dim, RewardTracker, N_BINS};
use super::madqn::{
    default_batch, default_capacity, default_epsilon, default_gamma, default_q_hidden, default_recency,
    default_target_every, default_warmup, epsilon_greedy, greedy_bins, q_layer_sizes,
};
use super::{Controller, MarketView};
use crate::error::{Error, Result};
use crate::learn::{
    Activation, DenseNet, ExplorationSchedule, NetSnapshot, Optimizer, OptimizerKind, ReplayBuffer, Trace,
};

fn default_lr() -> f64 {
    1e-3
}
fn default_mixer_hidden() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QmixParams {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_target_every")]
    pub target_update_every: usize,
    #[serde(default = "default_q_hidden")]
    pub hidden_layers: Vec<usize>,
    #[serde(default = "default_mixer_hidden")]
    pub mixer_hidden: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: ExplorationSchedule,
    #[serde(default = "default_capacity")]
    pub replay_capacity: usize,
    #[serde(default = "default_recency")]
    pub recency_decay: f64,
    #[serde(default = "default_warmup")]
    pub warmup: usize,
    #[serde(default)]
    pub optimizer: OptimizerKind,
}

impl Default for QmixParams {
    fn default() -> Self {
        Self {
            learning_rate: default_lr(),
            gamma: default_gamma(),
            batch_size: default_batch(),
            target_update_every: default_target_every(),
            hidden_layers: default_q_hidden(),
            mixer_hidden: default_mixer_hidden(),
            epsilon: default_epsilon(),
            replay_capacity: default_capacity(),
            recency_decay: default_recency(),
            warmup: default_warmup(),
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl QmixParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        if self.batch_size == 0 || self.target_update_every == 0 || self.mixer_hidden == 0 {
            return Err(Error::Config("batch size, target interval and mixer width must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

#[inline]
fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

#[inline]
fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// Forward intermediates of one mixing pass.
#[derive(Debug, Clone)]
pub struct MixerTrace {
    traces: [Trace; 4],
    pre: Vec<f64>,
    q: Vec<f64>,
    pub q_tot: f64,
}

/// `Q_tot = |w2(s)|·elu(|W1(s)|ᵀq + b1(s)) + b2(s)` with single-layer linear
/// hypernetworks for `W1`, `b1`, `w2`, `b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct QmixMixer {
    pub n_agents: usize,
    pub state_dim: usize,
    pub hidden: usize,
    /// Hypernetworks in order `W1`, `b1`, `w2`, `b2`.
    pub hyper: [DenseNet; 4],
}

impl QmixMixer {
    pub fn new<R: Rng + ?Sized>(n_agents: usize, state_dim: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        let lin = [Activation::Linear];
        Ok(Self {
            n_agents,
            state_dim,
            hidden,
            hyper: [
                DenseNet::new(&[state_dim, n_agents * hidden], &lin, rng)?,
                DenseNet::new(&[state_dim, hidden], &lin, rng)?,
                DenseNet::new(&[state_dim, hidden], &lin, rng)?,
                DenseNet::new(&[state_dim, 1], &lin, rng)?,
            ],
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.hyper.iter().map(DenseNet::parameter_count).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.hyper.iter().flat_map(|h| h.params().iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.parameter_count() {
            return Err(Error::Shape {
                expected: self.parameter_count(),
                got: flat.len(),
            });
        }
        let mut offset = 0;
        for h in &mut self.hyper {
            let n = h.parameter_count();
            h.params_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn forward_trace(&self, q: &[f64], state: &[f64]) -> Result<MixerTrace> {
        if q.len() != self.n_agents {
            return Err(Error::Shape {
                expected: self.n_agents,
                got: q.len(),
            });
        }
        let traces = [
            self.hyper[0].forward_trace(state)?,
            self.hyper[1].forward_trace(state)?,
            self.hyper[2].forward_trace(state)?,
            self.hyper[3].forward_trace(state)?,
        ];
        let (w1, b1, w2, b2) = (
            traces[0].output(),
            traces[1].output(),
            traces[2].output(),
            traces[3].output()[0],
        );
        let h = self.hidden;
        let pre: Vec<f64> = (0..h)
            .map(|k| b1[k] + (0..self.n_agents).map(|i| w1[i * h + k].abs() * q[i]).sum::<f64>())
            .collect();
        let q_tot = b2 + pre.iter().zip(w2).map(|(&z, w)| w.abs() * elu(z)).sum::<f64>();
        Ok(MixerTrace {
            traces,
            pre,
            q: q.to_vec(),
            q_tot,
        })
    }

    pub fn forward(&self, q: &[f64], state: &[f64]) -> Result<f64> {
        Ok(self.forward_trace(q, state)?.q_tot)
    }

    /// Accumulates `upstream·∂Q_tot/∂θ` into per-hypernetwork gradient buffers
    /// and returns `upstream·∂Q_tot/∂q`.
    pub fn backward_into(&self, trace: &MixerTrace, upstream: f64, grads: &mut [Vec<f64>; 4]) -> Result<Vec<f64>> {
        let h = self.hidden;
        let w1 = trace.traces[0].output();
        let w2 = trace.traces[2].output();
        let mut g_w1 = vec![0.0; self.n_agents * h];
        let mut g_b1 = vec![0.0; h];
        let mut g_w2 = vec![0.0; h];
        let mut dq = vec![0.0; self.n_agents];
        for k in 0..h {
            let z = trace.pre[k];
            g_w2[k] = upstream * w2[k].signum() * elu(z);
            let dz = upstream * w2[k].abs() * elu_grad(z);
            g_b1[k] = dz;
            for i in 0..self.n_agents {
                let w = w1[i * h + k];
                g_w1[i * h + k] = dz * w.signum() * trace.q[i];
                dq[i] += dz * w.abs();
            }
        }
        let ups = [g_w1, g_b1, g_w2, vec![upstream]];
        for ((net, t), (u, g)) in self.hyper.iter().zip(&trace.traces).zip(ups.iter().zip(grads.iter_mut())) {
            net.backward_into(t, u, g)?;
        }
        Ok(dq)
    }

    /// Gradient of `Q_tot` with respect to the flat parameters and to `q`.
    pub fn gradient(&self, q: &[f64], state: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let trace = self.forward_trace(q, state)?;
        let mut grads = self.zero_grads();
        let dq = self.backward_into(&trace, 1.0, &mut grads)?;
        Ok((grads.concat(), dq))
    }

    fn zero_grads(&self) -> [Vec<f64>; 4] {
        [
            vec![0.0; self.hyper[0].parameter_count()],
            vec![0.0; self.hyper[1].parameter_count()],
            vec![0.0; self.hyper[2].parameter_count()],
            vec![0.0; self.hyper[3].parameter_count()],
        ]
    }

    fn copy_from(&mut self, other: &QmixMixer) -> Result<()> {
        for (t, o) in self.hyper.iter_mut().zip(&other.hyper) {
            t.copy_from(o)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QmixTransition {
    pub states: Vec<Vec<f64>>,
    pub bins: Vec<Vec<usize>>,
    /// Shared reward: mean of the members' shaped rewards.
    pub reward: f64,
    pub next_states: Vec<Vec<f64>>,
    pub done: bool,
}

/// Agent utility: mean over heads of the chosen-bin Q-values.
pub fn chosen_utility(q: &[f64], bins: &[usize], actions: usize) -> f64 {
    bins.iter().enumerate().map(|(j, &b)| q[j * actions + b]).sum::<f64>() / bins.len() as f64
}

/// Greedy utility: mean over heads of the max Q-value.
pub fn greedy_utility(q: &[f64], actions: usize) -> f64 {
    let heads = q.len() / actions;
    q.chunks(actions)
        .map(|h| h.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / heads as f64
}

#[derive(Debug, Clone)]
pub struct QmixLearner {
    pub params: QmixParams,
    pub n_agents: usize,
    pub state_dim: usize,
    pub heads: usize,
    pub actions: usize,
    pub agents: Vec<DenseNet>,
    pub target_agents: Vec<DenseNet>,
    pub mixer: QmixMixer,
    pub target_mixer: QmixMixer,
    agent_opt: Vec<Optimizer>,
    mixer_opt: Vec<Optimizer>,
    pub replay: ReplayBuffer<QmixTransition>,
    learn_calls: u64,
}

impl QmixLearner {
    pub fn new<R: Rng + ?Sized>(
        n_agents: usize,
        state_dim: usize,
        heads: usize,
        actions: usize,
        params: QmixParams,
        rng: &mut R,
    ) -> Result<Self> {
        params.validate()?;
        if n_agents == 0 {
            return Err(Error::Config("QMIX coordinator has no agents".into()));
        }
        let sizes = q_layer_sizes(state_dim, &params.hidden_layers, heads, actions);
        let agents = (0..n_agents)
            .map(|_| DenseNet::mlp(&sizes, Activation::Relu, Activation::Linear, rng))
            .collect::<Result<Vec<_>>>()?;
        let mixer = QmixMixer::new(n_agents, n_agents * state_dim, params.mixer_hidden, rng)?;
        let agent_opt = agents
            .iter()
            .map(|a| Optimizer::new(params.optimizer, a.parameter_count()))
            .collect();
        let mixer_opt = mixer
            .hyper
            .iter()
            .map(|h| Optimizer::new(params.optimizer, h.parameter_count()))
            .collect();
        let replay = ReplayBuffer::new(params.replay_capacity, params.recency_decay)?;
        Ok(Self {
            target_agents: agents.clone(),
            target_mixer: mixer.clone(),
            params,
            n_agents,
            state_dim,
            heads,
            actions,
            agents,
            mixer,
            agent_opt,
            mixer_opt,
            replay,
            learn_calls: 0,
        })
    }

    pub fn q_values(&self, agent: usize, state: &[f64]) -> Result<Vec<f64>> {
        self.agents[agent].forward(state)
    }

    pub fn greedy(&self, agent: usize, state: &[f64]) -> Result<Vec<usize>> {
        Ok(greedy_bins(&self.q_values(agent, state)?, self.actions))
    }

    pub fn act<R: Rng + ?Sized>(&self, agent: usize, state: &[f64], epsilon: f64, rng: &mut R) -> Result<Vec<usize>> {
        if epsilon >= 1.0 {
            return Ok((0..self.heads).map(|_| rng.random_range(0..self.actions)).collect());
        }
        Ok(epsilon_greedy(&self.q_values(agent, state)?, self.actions, epsilon, rng))
    }

    /// Joint value of the given bins.
    pub fn q_total(&self, states: &[Vec<f64>], bins: &[Vec<usize>]) -> Result<f64> {
        let q = states
            .iter()
            .zip(bins)
            .enumerate()
            .map(|(i, (s, b))| Ok(chosen_utility(&self.q_values(i, s)?, b, self.actions)))
            .collect::<Result<Vec<_>>>()?;
        self.mixer.forward(&q, &states.concat())
    }

    pub fn learn_calls(&self) -> u64 {
        self.learn_calls
    }

    fn check(&self, t: &QmixTransition) -> Result<()> {
        let n = self.n_agents;
        let ok = t.states.len() == n
            && t.next_states.len() == n
            && t.bins.len() == n
            && t.states.iter().chain(&t.next_states).all(|s| s.len() == self.state_dim)
            && t.bins.iter().all(|b| b.len() == self.heads && b.iter().all(|&x| x < self.actions));
        if ok {
            Ok(())
        } else {
            Err(Error::Protocol {
                agent: "qmix".into(),
                product: "*".into(),
                reason: "misaligned joint transition".into(),
            })
        }
    }

    pub fn td_target(&self, t: &QmixTransition) -> Result<f64> {
        if t.done || self.params.gamma == 0.0 {
            return Ok(t.reward);
        }
        let q_next = t
            .next_states
            .iter()
            .zip(&self.target_agents)
            .map(|(s, net)| Ok(greedy_utility(&net.forward(s)?, self.actions)))
            .collect::<Result<Vec<_>>>()?;
        Ok(t.reward + self.params.gamma * self.target_mixer.forward(&q_next, &t.next_states.concat())?)
    }

    /// One joint step on the mean squared error of `Q_tot`; returns the loss.
    pub fn learn_batch(&mut self, batch: &[&QmixTransition]) -> Result<f64> {
        if batch.is_empty() {
            return Ok(0.0);
        }
        let b = batch.len() as f64;
        let mut agent_grads: Vec<Vec<f64>> = self.agents.iter().map(|a| vec![0.0; a.parameter_count()]).collect();
        let mut mixer_grads = self.mixer.zero_grads();
        let mut loss = 0.0;
        for t in batch {
            self.check(t)?;
            let y = self.td_target(t)?;
            let traces = t
                .states
                .iter()
                .zip(&self.agents)
                .map(|(s, net)| net.forward_trace(s))
                .collect::<Result<Vec<_>>>()?;
            let q: Vec<f64> = traces
                .iter()
                .zip(&t.bins)
                .map(|(tr, bins)| chosen_utility(tr.output(), bins, self.actions))
                .collect();
            let mix = self.mixer.forward_trace(&q, &t.states.concat())?;
            let err = mix.q_tot - y;
            loss += err * err / b;
            let dq = self.mixer.backward_into(&mix, 2.0 * err / b, &mut mixer_grads)?;
            for (i, (trace, bins)) in traces.iter().zip(&t.bins).enumerate() {
                let mut upstream = vec![0.0; self.heads * self.actions];
                for (j, &bin) in bins.iter().enumerate() {
                    upstream[j * self.actions + bin] = dq[i] / self.heads as f64;
                }
                self.agents[i].backward_into(trace, &upstream, &mut agent_grads[i])?;
            }
        }
        if !loss.is_finite() {
            return Err(Error::Training("non-finite QMIX loss".into()));
        }
        let lr = self.params.learning_rate;
        for ((net, opt), g) in self.agents.iter_mut().zip(&mut self.agent_opt).zip(&agent_grads) {
            opt.step(net.params_mut(), g, lr)?;
        }
        for ((net, opt), g) in self.mixer.hyper.iter_mut().zip(&mut self.mixer_opt).zip(&mixer_grads) {
            opt.step(net.params_mut(), g, lr)?;
        }
        self.learn_calls += 1;
        if self.learn_calls.is_multiple_of(self.params.target_update_every as u64) {
            for (t, o) in self.target_agents.iter_mut().zip(&self.agents) {
                t.copy_from(o)?;
            }
            self.target_mixer.copy_from(&self.mixer)?;
        }
        Ok(loss)
    }

    pub fn learn<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Option<f64>> {
        if self.replay.len() < self.params.warmup.max(1) {
            return Ok(None);
        }
        let batch: Vec<QmixTransition> = match self.replay.sample_batch(self.params.batch_size, rng) {
            Some(b) => b.into_iter().cloned().collect(),
            None => return Ok(None),
        };
        let refs: Vec<&QmixTransition> = batch.iter().collect();
        self.learn_batch(&refs).map(Some)
    }
}

/// Drives every QMIX seller in a market.
pub struct QmixCoordinator {
    ids: Vec<String>,
    learner: QmixLearner,
    rng: ChaCha8Rng,
    trackers: Vec<RewardTracker>,
    epsilon: f64,
    pending: Option<(Vec<Vec<f64>>, Vec<Vec<usize>>)>,
}

impl QmixCoordinator {
    pub fn new(ids: Vec<String>, n_products: usize, params: QmixParams, rng: &mut ChaCha8Rng) -> Result<Self> {
        let learner = QmixLearner::new(ids.len(), state_dim(n_products), n_products, N_BINS, params, rng)?;
        let epsilon = learner.params.epsilon.value(0);
        Ok(Self {
            trackers: vec![RewardTracker::default(); ids.len()],
            ids,
            learner,
            rng: ChaCha8Rng::seed_from_u64(rng.random()),
            epsilon,
            pending: None,
        })
    }

    pub fn learner(&self) -> &QmixLearner {
        &self.learner
    }
}

impl Controller for QmixCoordinator {
    fn agent_ids(&self) -> &[String] {
        &self.ids
    }

    fn begin_episode(&mut self, episode: usize) -> Result<()> {
        self.epsilon = self.learner.params.epsilon.value(episode as u64);
        self.trackers.iter_mut().for_each(RewardTracker::reset);
        self.pending = None;
        Ok(())
    }

    fn act(&mut self, view: &MarketView<'_>) -> Result<Vec<Vec<f64>>> {
        let cfg = view.config;
        let mut states = Vec::with_capacity(self.ids.len());
        let mut all_bins = Vec::with_capacity(self.ids.len());
        let mut prices = Vec::with_capacity(self.ids.len());
        for (i, id) in self.ids.iter().enumerate() {
            let portfolio = view.portfolio(id)?;
            let state = encode_state(portfolio, view.observation)?;
            let bins = self.learner.act(i, &state, self.epsilon, &mut self.rng)?;
            let row = portfolio
                .products
                .iter()
                .zip(&bins)
                .map(|(p, &b)| Ok(apply_action(p, discretize_action(b)?, cfg.min_margin, cfg.max_weekly_change)))
                .collect::<Result<Vec<_>>>()?;
            states.push(state);
            all_bins.push(bins);
            prices.push(row);
        }
        self.pending = Some((states, all_bins));
        Ok(prices)
    }

    fn observe(&mut self, view: &MarketView<'_>, done: bool) -> Result<()> {
        let Some((states, bins)) = self.pending.take() else {
            return Ok(());
        };
        let mut reward = 0.0;
        let mut next_states = Vec::with_capacity(self.ids.len());
        for (id, tracker) in self.ids.iter().zip(&mut self.trackers) {
            let portfolio = view.portfolio(id)?;
            reward += tracker.reward(
                portfolio.total_revenue_last_week(),
                price_change_rms(portfolio),
                view.config.reward_penalty_lambda,
            );
            next_states.push(encode_state(portfolio, view.observation)?);
        }
        reward /= self.ids.len() as f64;
        self.learner.replay.push(QmixTransition {
            states,
            bins,
            reward,
            next_states,
            done,
        });
        self.learner.learn(&mut self.rng)?;
        Ok(())
    }

    fn snapshots(&self) -> Vec<(String, String, NetSnapshot)> {
        let mut out: Vec<(String, String, NetSnapshot)> = self
            .ids
            .iter()
            .zip(&self.learner.agents)
            .map(|(id, net)| (id.clone(), "q".to_string(), net.to_snapshot()))
            .collect();
        for (name, net) in ["hyper_w1", "hyper_b1", "hyper_w2", "hyper_b2"]
            .iter()
            .zip(&self.learner.mixer.hyper)
        {
            out.push((self.ids[0].clone(), name.to_string(), net.to_snapshot()));
        }
        out
    }
}
