//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use super::network::{same_shapes, Dense, Gradients, QNetwork};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub config: AdamConfig,
    first: Vec<Dense>,
    second: Vec<Dense>,
    step: u64,
}

impl OptimizerState {
    pub fn new(net: &QNetwork, config: AdamConfig) -> Self {
        let zeros: Vec<Dense> = net.layers().iter().map(Dense::zeros_like).collect();
        Self {
            config,
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Dense] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Dense] {
        &self.second
    }

    pub fn matches(&self, net: &QNetwork) -> bool {
        same_shapes(&self.first, net.layers()) && same_shapes(&self.second, net.layers())
    }
}

/// One bias-corrected Adam update of `net` in place.
pub fn optimizer_step(net: &mut QNetwork, state: &mut OptimizerState, grads: &Gradients) -> Result<()> {
    if !state.matches(net) || !same_shapes(&grads.layers, net.layers()) {
        return Err(Error::Incompatible(
            "optimizer state or gradients do not match network shape".into(),
        ));
    }
    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);

    let update = |p: &mut [f32], g: &[f32], m: &mut [f32], v: &mut [f32]| {
        for i in 0..p.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    };

    for (((layer, g), m), v) in net
        .layers_mut()
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut state.first)
        .zip(&mut state.second)
    {
        update(
            layer.weights.as_mut_slice(),
            g.weights.as_slice(),
            m.weights.as_mut_slice(),
            v.weights.as_mut_slice(),
        );
        update(&mut layer.bias, &g.bias, &mut m.bias, &mut v.bias);
    }
    Ok(())
}
