//! Pairwise Q-networks: a plain MLP over `[observation, merged action]` with
//! one output per own action.
//!
//! Layer weights are row-major `(out_dim, in_dim)`. The first layer's input
//! columns are the observation features followed by the merged-action
//! coordinates, which lets counterfactual batches share the observation part
//! of the first affine map (see [`QNetwork::q_values_shared_obs`]).

use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::{add_row_bias, gemm, gemm_leading_block_t, DenseMatrix, Op};
use crate::error::{ensure_len, Error, Result};

/// Input and output sizes of a Q-network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSpec {
    pub obs_len: usize,
    /// Length of the merged-action simplex vector.
    pub merged_len: usize,
    /// One Q-value per own action.
    pub n_actions: usize,
}

impl InputSpec {
    #[inline]
    pub fn input_len(&self) -> usize {
        self.obs_len + self.merged_len
    }
}

/// Hidden-layer nonlinearity. The output layer is always affine.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, xs: &mut [f32]) {
        if self == Activation::Relu {
            for x in xs {
                *x = x.max(0.0);
            }
        }
    }
}

/// One affine layer; also used as the shape of its gradient and of optimizer
/// moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weights: DenseMatrix,
    pub bias: Vec<f32>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weights: DenseMatrix::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.in_dim(), self.out_dim())
    }

    fn same_shape(&self, other: &Dense) -> bool {
        self.in_dim() == other.in_dim() && self.out_dim() == other.out_dim()
    }
}

pub(crate) fn same_shapes(a: &[Dense], b: &[Dense]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.same_shape(y))
}

/// Gradient of the loss with respect to every layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn max_abs(&self) -> f32 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.as_slice().iter().chain(&l.bias))
            .fold(0.0, |m, g| m.max(g.abs()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawNetwork")]
pub struct QNetwork {
    spec: InputSpec,
    activation: Activation,
    layers: Vec<Dense>,
}

#[derive(Deserialize)]
struct RawNetwork {
    spec: InputSpec,
    activation: Activation,
    layers: Vec<Dense>,
}

impl TryFrom<RawNetwork> for QNetwork {
    type Error = Error;

    fn try_from(raw: RawNetwork) -> Result<Self> {
        QNetwork::from_layers(raw.spec, raw.activation, raw.layers)
    }
}

impl QNetwork {
    /// Fan-in scaled uniform initialisation, zero biases.
    pub fn new<R: Rng + ?Sized>(
        spec: InputSpec,
        hidden: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Self::zeros(spec, hidden, activation)?;
        for layer in &mut net.layers {
            let limit = 1.0 / (layer.in_dim() as f32).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit);
            for w in layer.weights.as_mut_slice() {
                *w = dist.sample(rng);
            }
        }
        Ok(net)
    }

    pub fn zeros(spec: InputSpec, hidden: &[usize], activation: Activation) -> Result<Self> {
        if spec.input_len() == 0 || spec.n_actions == 0 {
            return Err(Error::config("network", "input and output sizes must be > 0"));
        }
        if hidden.contains(&0) {
            return Err(Error::config("network.hidden", "hidden widths must be > 0"));
        }
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(spec.input_len());
        dims.extend_from_slice(hidden);
        dims.push(spec.n_actions);
        let layers = dims.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        Ok(Self {
            spec,
            activation,
            layers,
        })
    }

    pub fn from_layers(spec: InputSpec, activation: Activation, layers: Vec<Dense>) -> Result<Self> {
        let Some(first) = layers.first() else {
            return Err(Error::config("network.layers", "at least one layer required"));
        };
        ensure_len("first layer input", spec.input_len(), first.in_dim())?;
        ensure_len(
            "last layer output",
            spec.n_actions,
            layers[layers.len() - 1].out_dim(),
        )?;
        for (i, layer) in layers.iter().enumerate() {
            ensure_len("layer bias", layer.out_dim(), layer.bias.len())?;
            if i + 1 < layers.len() {
                ensure_len("layer chaining", layer.out_dim(), layers[i + 1].in_dim())?;
            }
            if !layer.weights.is_finite() || layer.bias.iter().any(|b| !b.is_finite()) {
                return Err(Error::config("network.layers", "non-finite parameter"));
            }
        }
        Ok(Self {
            spec,
            activation,
            layers,
        })
    }

    #[inline]
    pub fn spec(&self) -> InputSpec {
        self.spec
    }

    #[inline]
    pub fn activation(&self) -> Activation {
        self.activation
    }

    #[inline]
    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    #[inline]
    pub(crate) fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(Dense::out_dim)
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.as_slice().len() + l.bias.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }

    /// Bitwise parameter equality.
    pub fn same_params(&self, other: &QNetwork) -> bool {
        same_shapes(&self.layers, &other.layers)
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                let bits = |xs: &[f32]| xs.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
                bits(a.weights.as_slice()) == bits(b.weights.as_slice())
                    && bits(&a.bias) == bits(&b.bias)
            })
    }

    /// Concatenate an observation and a merged action into one input row.
    pub fn input_row(&self, obs: &[f32], merged: &[f64]) -> Result<Vec<f32>> {
        ensure_len("observation", self.spec.obs_len, obs.len())?;
        ensure_len("merged action", self.spec.merged_len, merged.len())?;
        let mut row = Vec::with_capacity(self.spec.input_len());
        row.extend_from_slice(obs);
        row.extend(merged.iter().map(|&m| m as f32));
        Ok(row)
    }

    /// Q-values of every own action for one observation and merged action.
    pub fn forward_q(&self, obs: &[f32], merged: &[f64]) -> Result<Vec<f32>> {
        let row = self.input_row(obs, merged)?;
        let input = DenseMatrix::from_vec(1, row.len(), row)?;
        Ok(self.forward_batch(&input)?.as_slice().to_vec())
    }

    /// Forward pass over a batch of concatenated input rows.
    pub fn forward_batch(&self, inputs: &DenseMatrix) -> Result<DenseMatrix> {
        ensure_len("network input", self.spec.input_len(), inputs.cols())?;
        let mut x = inputs.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = DenseMatrix::zeros(x.rows(), layer.out_dim());
            gemm(1.0, &x, Op::N, &layer.weights, Op::T, 0.0, &mut z)?;
            add_row_bias(&mut z, &layer.bias);
            if i < last {
                self.activation.apply(z.as_mut_slice());
            }
            x = z;
        }
        Ok(x)
    }

    /// Q-values for one observation under several merged-action inputs.
    ///
    /// The observation's contribution to the first layer is computed once and
    /// shared by every row, so `V` variants cost one observation projection
    /// plus `V` passes through the remaining (small) layers.
    pub fn q_values_shared_obs(&self, obs: &[f32], merged: &[&[f64]]) -> Result<DenseMatrix> {
        ensure_len("observation", self.spec.obs_len, obs.len())?;
        for m in merged {
            ensure_len("merged action", self.spec.merged_len, m.len())?;
        }
        let base = self.project_obs(obs);
        let mut h = DenseMatrix::zeros(merged.len(), self.layers[0].out_dim());
        for (v, m) in merged.iter().enumerate() {
            self.add_merged_projection(&base, m, h.row_mut(v));
        }
        self.finish_from_first(h)
    }

    /// `W_obs · obs + b` for the first layer.
    pub(crate) fn project_obs(&self, obs: &[f32]) -> Vec<f32> {
        let row = DenseMatrix::from_vec(1, obs.len(), obs.to_vec()).expect("one row");
        self.project_obs_batch(&row).expect("caller checked obs length").as_slice().to_vec()
    }

    /// First-layer observation projections for a batch of observation rows.
    pub fn project_obs_batch(&self, obs: &DenseMatrix) -> Result<DenseMatrix> {
        ensure_len("observation", self.spec.obs_len, obs.cols())?;
        let first = &self.layers[0];
        let mut out = DenseMatrix::zeros(obs.rows(), first.out_dim());
        gemm_leading_block_t(obs, &first.weights, &mut out)?;
        add_row_bias(&mut out, &first.bias);
        Ok(out)
    }

    /// `out = base + W_merged · merged`, skipping zero coordinates.
    pub(crate) fn add_merged_projection(&self, base: &[f32], merged: &[f64], out: &mut [f32]) {
        let first = &self.layers[0];
        let obs_len = self.spec.obs_len;
        out.copy_from_slice(base);
        for (j, &mj) in merged.iter().enumerate() {
            if mj == 0.0 {
                continue;
            }
            let mj = mj as f32;
            for (o, v) in out.iter_mut().enumerate() {
                *v += first.weights.get(o, obs_len + j) * mj;
            }
        }
    }

    /// Runs the remaining layers given first-layer pre-activations.
    pub(crate) fn finish_from_first(&self, mut h: DenseMatrix) -> Result<DenseMatrix> {
        let last = self.layers.len() - 1;
        if last == 0 {
            return Ok(h);
        }
        self.activation.apply(h.as_mut_slice());
        for (i, layer) in self.layers.iter().enumerate().skip(1) {
            let mut z = DenseMatrix::zeros(h.rows(), layer.out_dim());
            gemm(1.0, &h, Op::N, &layer.weights, Op::T, 0.0, &mut z)?;
            add_row_bias(&mut z, &layer.bias);
            if i < last {
                self.activation.apply(z.as_mut_slice());
            }
            h = z;
        }
        Ok(h)
    }

    /// Mean squared error between the Q-value of each sample's taken action
    /// and its target, with gradients for every parameter.
    pub fn backward(
        &self,
        inputs: &DenseMatrix,
        actions: &[usize],
        targets: &[f32],
    ) -> Result<(Gradients, f64)> {
        let batch = inputs.rows();
        if batch == 0 {
            return Err(Error::config("batch", "empty batch"));
        }
        ensure_len("network input", self.spec.input_len(), inputs.cols())?;
        ensure_len("batch actions", batch, actions.len())?;
        ensure_len("batch targets", batch, targets.len())?;
        if let Some(&a) = actions.iter().find(|&&a| a >= self.spec.n_actions) {
            return Err(Error::Shape {
                context: "batch action index",
                expected: self.spec.n_actions,
                actual: a,
            });
        }

        // Forward, keeping every layer's post-activation output.
        let last = self.layers.len() - 1;
        let mut acts: Vec<DenseMatrix> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let x = if i == 0 { inputs } else { &acts[i - 1] };
            let mut z = DenseMatrix::zeros(batch, layer.out_dim());
            gemm(1.0, x, Op::N, &layer.weights, Op::T, 0.0, &mut z)?;
            add_row_bias(&mut z, &layer.bias);
            if i < last {
                self.activation.apply(z.as_mut_slice());
            }
            acts.push(z);
        }

        let q = &acts[last];
        let mut loss = 0.0f64;
        let mut dz = DenseMatrix::zeros(batch, self.spec.n_actions);
        let scale = 2.0 / batch as f64;
        for b in 0..batch {
            let err = q.get(b, actions[b]) as f64 - targets[b] as f64;
            loss += err * err;
            dz.set(b, actions[b], (scale * err) as f32);
        }
        loss /= batch as f64;
        if !loss.is_finite() {
            let max_target = targets.iter().fold(0.0f64, |m, t| m.max(t.abs() as f64));
            let max_q = q.as_slice().iter().fold(0.0f64, |m, t| m.max(t.abs() as f64));
            return Err(Error::Divergence {
                batch,
                max_target,
                max_q,
            });
        }

        let mut grads: Vec<Dense> = self.layers.iter().map(Dense::zeros_like).collect();
        for i in (0..self.layers.len()).rev() {
            let x = if i == 0 { inputs } else { &acts[i - 1] };
            gemm(1.0, &dz, Op::T, x, Op::N, 0.0, &mut grads[i].weights)?;
            for row in dz.as_slice().chunks_exact(dz.cols()) {
                for (g, d) in grads[i].bias.iter_mut().zip(row) {
                    *g += d;
                }
            }
            if i > 0 {
                let mut dx = DenseMatrix::zeros(batch, self.layers[i].in_dim());
                gemm(1.0, &dz, Op::N, &self.layers[i].weights, Op::N, 0.0, &mut dx)?;
                if self.activation == Activation::Relu {
                    for (d, a) in dx.as_mut_slice().iter_mut().zip(acts[i - 1].as_slice()) {
                        if *a <= 0.0 {
                            *d = 0.0;
                        }
                    }
                }
                dz = dx;
            }
        }
        Ok((Gradients { layers: grads }, loss))
    }
}

/// A frozen copy of a [`QNetwork`] used for bootstrapped targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetNetwork {
    net: QNetwork,
    updates_since_sync: u64,
}

impl TargetNetwork {
    pub fn new(source: &QNetwork) -> Self {
        Self {
            net: source.clone(),
            updates_since_sync: 0,
        }
    }

    pub fn network(&self) -> &QNetwork {
        &self.net
    }

    pub fn updates_since_sync(&self) -> u64 {
        self.updates_since_sync
    }

    /// Counts one update of `source`; re-syncs after every `period` updates.
    /// Returns whether a sync happened.
    pub fn record_update(&mut self, source: &QNetwork, period: u64) -> Result<bool> {
        self.updates_since_sync += 1;
        if self.updates_since_sync >= period.max(1) {
            sync_target(source, self)?;
            Ok(true)
        } else {
            Ok(false)
        }
    }
}

/// Copies `net`'s parameters into `target` and resets its counter.
pub fn sync_target(net: &QNetwork, target: &mut TargetNetwork) -> Result<()> {
    if net.spec != target.net.spec || !same_shapes(&net.layers, &target.net.layers) {
        return Err(Error::Incompatible(
            "target network shape differs from source".into(),
        ));
    }
    target.net.layers.clone_from(&net.layers);
    target.updates_since_sync = 0;
    Ok(())
}
