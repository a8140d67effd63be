//! Fully-connected networks with exact reverse-mode gradients.
//!
//! Parameters live in one flat vector (per layer: row-major weights, then
//! biases) so optimizers, Polyak averaging and checkpointing operate on plain
//! slices.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Linear,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Linear => x,
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Linear => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layer {
    input: usize,
    output: usize,
    activation: Activation,
    w_offset: usize,
    b_offset: usize,
}

/// Cached layer outputs from one forward pass; `outputs[0]` is the input.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    outputs: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.outputs.last().expect("trace always holds the input")
    }

    pub fn input(&self) -> &[f64] {
        &self.outputs[0]
    }
}

#[derive(Debug, Clone)]
pub struct DenseNet {
    layer_sizes: Vec<usize>,
    activations: Vec<Activation>,
    layers: Vec<Layer>,
    params: Vec<f64>,
    cached: Option<Trace>,
}

impl PartialEq for DenseNet {
    fn eq(&self, other: &Self) -> bool {
        self.layer_sizes == other.layer_sizes && self.activations == other.activations && self.params == other.params
    }
}

impl DenseNet {
    /// Zero-initialised network. `activations[i]` applies to layer `i`'s output.
    pub fn zeros(layer_sizes: &[usize], activations: &[Activation]) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {layer_sizes:?}")));
        }
        if activations.len() != layer_sizes.len() - 1 {
            return Err(Error::Shape {
                expected: layer_sizes.len() - 1,
                got: activations.len(),
            });
        }
        let mut layers = Vec::with_capacity(activations.len());
        let mut offset = 0;
        for (i, &activation) in activations.iter().enumerate() {
            let (input, output) = (layer_sizes[i], layer_sizes[i + 1]);
            layers.push(Layer {
                input,
                output,
                activation,
                w_offset: offset,
                b_offset: offset + input * output,
            });
            offset += input * output + output;
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            activations: activations.to_vec(),
            layers,
            params: vec![0.0; offset],
            cached: None,
        })
    }

    /// Weights and biases drawn uniformly from ±1/√fan_in.
    pub fn new<R: Rng + ?Sized>(layer_sizes: &[usize], activations: &[Activation], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes, activations)?;
        for layer in net.layers.clone() {
            let bound = 1.0 / (layer.input as f64).sqrt();
            let end = layer.b_offset + layer.output;
            for p in &mut net.params[layer.w_offset..end] {
                *p = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    /// Hidden layers use `hidden`, the output layer uses `output`.
    pub fn mlp<R: Rng + ?Sized>(
        layer_sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let n = layer_sizes.len().saturating_sub(1);
        let mut acts = vec![hidden; n];
        if let Some(last) = acts.last_mut() {
            *last = output;
        }
        Self::new(layer_sizes, &acts, rng)
    }

    /// Re-draws the output layer uniformly from ±`bound`.
    pub fn scale_output_layer<R: Rng + ?Sized>(&mut self, bound: f64, rng: &mut R) {
        let layer = *self.layers.last().expect("at least one layer");
        for p in &mut self.params[layer.w_offset..layer.b_offset + layer.output] {
            *p = rng.random_range(-bound..bound);
        }
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Mutable access to layer `i`'s (weights, biases).
    pub fn layer_params_mut(&mut self, i: usize) -> (&mut [f64], &mut [f64]) {
        let l = self.layers[i];
        let (w, rest) = self.params[l.w_offset..].split_at_mut(l.input * l.output);
        (w, &mut rest[..l.output])
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        Ok(())
    }

    fn layer_forward(&self, layer: &Layer, x: &[f64]) -> Vec<f64> {
        let w = &self.params[layer.w_offset..layer.b_offset];
        let b = &self.params[layer.b_offset..layer.b_offset + layer.output];
        (0..layer.output)
            .map(|o| {
                let row = &w[o * layer.input..(o + 1) * layer.input];
                let z = b[o] + row.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>();
                layer.activation.apply(z)
            })
            .collect()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        for layer in &self.layers {
            x = self.layer_forward(layer, &x);
        }
        Ok(x)
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<Trace> {
        self.check_input(input)?;
        let mut outputs = Vec::with_capacity(self.layers.len() + 1);
        outputs.push(input.to_vec());
        for layer in &self.layers {
            let next = self.layer_forward(layer, outputs.last().unwrap());
            outputs.push(next);
        }
        Ok(Trace { outputs })
    }

    /// Accumulates `∂(output·upstream)/∂θ` into `grads` and returns the
    /// gradient with respect to the input.
    pub fn backward_into(&self, trace: &Trace, upstream: &[f64], grads: &mut [f64]) -> Result<Vec<f64>> {
        if trace.outputs.len() != self.layers.len() + 1 || trace.input().len() != self.input_dim() {
            return Err(Error::Shape {
                expected: self.layers.len() + 1,
                got: trace.outputs.len(),
            });
        }
        if upstream.len() != self.output_dim() {
            return Err(Error::Shape {
                expected: self.output_dim(),
                got: upstream.len(),
            });
        }
        if grads.len() != self.params.len() {
            return Err(Error::Shape {
                expected: self.params.len(),
                got: grads.len(),
            });
        }
        let mut delta_out = upstream.to_vec();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let x = &trace.outputs[li];
            let y = &trace.outputs[li + 1];
            let delta: Vec<f64> = delta_out
                .iter()
                .zip(y)
                .map(|(g, &yo)| g * layer.activation.derivative_from_output(yo))
                .collect();
            let w = &self.params[layer.w_offset..layer.b_offset];
            let mut delta_in = vec![0.0; layer.input];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let gw = &mut grads[layer.w_offset + o * layer.input..layer.w_offset + (o + 1) * layer.input];
                for (g, xi) in gw.iter_mut().zip(x) {
                    *g += d * xi;
                }
                grads[layer.b_offset + o] += d;
                let row = &w[o * layer.input..(o + 1) * layer.input];
                for (di, wi) in delta_in.iter_mut().zip(row) {
                    *di += d * wi;
                }
            }
            delta_out = delta_in;
        }
        Ok(delta_out)
    }

    /// Returns (parameter gradients, input gradient).
    pub fn backward(&self, trace: &Trace, upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut grads = vec![0.0; self.params.len()];
        let input_grad = self.backward_into(trace, upstream, &mut grads)?;
        Ok((grads, input_grad))
    }

    /// Forward pass that keeps its trace for [`DenseNet::backward_cached`].
    pub fn forward_train(&mut self, input: &[f64]) -> Result<Vec<f64>> {
        let trace = self.forward_trace(input)?;
        let out = trace.output().to_vec();
        self.cached = Some(trace);
        Ok(out)
    }

    /// Backward through the trace stored by the last [`DenseNet::forward_train`].
    pub fn backward_cached(&mut self, upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let trace = self.cached.take().ok_or(Error::NoForwardCache)?;
        self.backward(&trace, upstream)
    }

    fn check_same_shape(&self, other: &DenseNet) -> Result<()> {
        if self.layer_sizes != other.layer_sizes || self.activations != other.activations {
            return Err(Error::Shape {
                expected: self.params.len(),
                got: other.params.len(),
            });
        }
        Ok(())
    }

    pub fn copy_from(&mut self, online: &DenseNet) -> Result<()> {
        self.check_same_shape(online)?;
        self.params.copy_from_slice(&online.params);
        Ok(())
    }

    pub fn to_snapshot(&self) -> NetSnapshot {
        NetSnapshot {
            format: NetSnapshot::FORMAT.to_string(),
            version: NetSnapshot::VERSION,
            layer_sizes: self.layer_sizes.clone(),
            activations: self.activations.clone(),
            params: self.params.clone(),
        }
    }

    pub fn from_snapshot(snapshot: &NetSnapshot) -> Result<Self> {
        if snapshot.format != NetSnapshot::FORMAT || snapshot.version != NetSnapshot::VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint {} v{}",
                snapshot.format, snapshot.version
            )));
        }
        let mut net = Self::zeros(&snapshot.layer_sizes, &snapshot.activations)?;
        if snapshot.params.len() != net.params.len() {
            return Err(Error::Shape {
                expected: net.params.len(),
                got: snapshot.params.len(),
            });
        }
        net.params.copy_from_slice(&snapshot.params);
        Ok(net)
    }
}

/// Polyak averaging: `target ← (1 − τ)·target + τ·online`.
pub fn soft_update(target: &mut DenseNet, online: &DenseNet, tau: f64) -> Result<()> {
    target.check_same_shape(online)?;
    for (t, o) in target.params.iter_mut().zip(&online.params) {
        *t = (1.0 - tau) * *t + tau * o;
    }
    Ok(())
}

/// Versioned JSON checkpoint of a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSnapshot {
    pub format: String,
    pub version: u32,
    pub layer_sizes: Vec<usize>,
    pub activations: Vec<Activation>,
    pub params: Vec<f64>,
}

impl NetSnapshot {
    pub const FORMAT: &'static str = "dense-net";
    pub const VERSION: u32 = 1;
}
