use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n_params: usize) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        check(params, grads, self.m.len())?;
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powf(self.t as f64);
        let bc2 = 1.0 - ADAM_BETA2.powf(self.t as f64);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
        Ok(())
    }
}

fn check(params: &[f64], grads: &[f64], expected: usize) -> Result<()> {
    if params.len() != expected || grads.len() != expected {
        return Err(Error::Shape {
            expected,
            got: grads.len(),
        });
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        let finite = grads.iter().filter(|g| g.is_finite()).count();
        return Err(Error::Training(format!(
            "non-finite gradient {} at parameter {i} ({finite}/{} finite)",
            grads[i],
            grads.len()
        )));
    }
    Ok(())
}

/// Per-network optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Adam(Adam),
    Sgd { n_params: usize },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, n_params: usize) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(n_params)),
            OptimizerKind::Sgd => Optimizer::Sgd { n_params },
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        match self {
            Optimizer::Adam(adam) => adam.step(params, grads, lr),
            Optimizer::Sgd { n_params } => {
                check(params, grads, *n_params)?;
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= lr * g;
                }
                Ok(())
            }
        }
    }
}
