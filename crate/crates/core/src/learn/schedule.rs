use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    GaussianNoise,
    EpsilonGreedy,
}

/// Per-episode multiplicative decay with a floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplorationSchedule {
    pub kind: ScheduleKind,
    pub start: f64,
    pub decay: f64,
    pub floor: f64,
}

impl ExplorationSchedule {
    /// Gaussian action noise for MADDPG actors.
    pub fn maddpg_noise() -> Self {
        Self {
            kind: ScheduleKind::GaussianNoise,
            start: 0.2,
            decay: 0.9995,
            floor: 0.05,
        }
    }

    /// ε-greedy for MADQN and QMIX.
    pub fn epsilon_greedy() -> Self {
        Self {
            kind: ScheduleKind::EpsilonGreedy,
            start: 1.0,
            decay: 0.995,
            floor: 0.05,
        }
    }

    pub fn value(&self, episode: u64) -> f64 {
        (self.start * self.decay.powf(episode as f64)).max(self.floor)
    }
}
