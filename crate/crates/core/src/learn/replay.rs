//! Bounded replay memory with geometric recency-biased sampling.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_CAPACITY: usize = 50_000;
pub const DEFAULT_RECENCY_DECAY: f64 = 0.999;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Action {
    /// One bin index per product.
    Discrete(Vec<usize>),
    /// One continuous value per product.
    Continuous(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Action,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

impl Transition {
    pub fn new(state: Vec<f64>, action: Action, reward: f64, next_state: Vec<f64>, done: bool) -> Result<Self> {
        if state.len() != next_state.len() {
            return Err(Error::Shape {
                expected: state.len(),
                got: next_state.len(),
            });
        }
        Ok(Self {
            state,
            action,
            reward,
            next_state,
            done,
        })
    }
}

/// FIFO ring; entry of age `k` (0 = newest) is drawn with probability
/// proportional to `recency_decay^k`.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    recency_decay: f64,
    entries: VecDeque<T>,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize, recency_decay: f64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        if !(recency_decay > 0.0 && recency_decay <= 1.0) {
            return Err(Error::Config(format!("recency decay {recency_decay} outside (0, 1]")));
        }
        Ok(Self {
            capacity,
            recency_decay,
            entries: VecDeque::with_capacity(capacity.min(4096)),
        })
    }

    pub fn push(&mut self, item: T) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(item);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.entries.iter()
    }

    /// Analytic sampling probability of each stored entry, oldest first.
    pub fn probabilities(&self) -> Vec<f64> {
        let n = self.entries.len();
        let weights: Vec<f64> = (0..n).map(|i| self.recency_decay.powi((n - 1 - i) as i32)).collect();
        let total: f64 = weights.iter().sum();
        weights.into_iter().map(|w| w / total).collect()
    }

    /// Draws an entry age by inverting the truncated geometric CDF.
    fn sample_age<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let n = self.entries.len();
        let u: f64 = rng.random();
        if self.recency_decay >= 1.0 {
            return ((u * n as f64) as usize).min(n - 1);
        }
        let ln_d = self.recency_decay.ln();
        // 1 − d^n, computed without cancellation.
        let mass = -(n as f64 * ln_d).exp_m1();
        let k = ((-u * mass).ln_1p() / ln_d).floor();
        (k.max(0.0) as usize).min(n - 1)
    }

    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<usize> {
        if self.entries.is_empty() {
            return None;
        }
        Some(self.entries.len() - 1 - self.sample_age(rng))
    }

    /// `batch_size` draws with replacement; `None` when the buffer is empty.
    pub fn sample_batch<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Option<Vec<&T>> {
        if self.entries.is_empty() {
            return None;
        }
        Some(
            (0..batch_size)
                .map(|_| &self.entries[self.entries.len() - 1 - self.sample_age(rng)])
                .collect(),
        )
    }
}
