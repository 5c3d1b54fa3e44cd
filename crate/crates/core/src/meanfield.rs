//! Mean actions and the Boltzmann policy over pairwise Q-values.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `sum = 1` for probability vectors.
pub const SIMPLEX_TOL: f64 = 1e-9;

fn check_simplex(context: &'static str, p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::NotSimplex {
            context,
            message: "empty vector".into(),
        });
    }
    if let Some(v) = p.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::NotSimplex {
            context,
            message: format!("entry {v} is negative or not finite"),
        });
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::NotSimplex {
            context,
            message: format!("entries sum to {s}"),
        });
    }
    Ok(())
}

fn out_of_range(action: usize, len: usize) -> Error {
    Error::NotSimplex {
        context: "one-hot action",
        message: format!("action {action} outside 0..{len}"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionDistribution {
    probs: Vec<f64>,
}

impl ActionDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        check_simplex("action distribution", &probs)?;
        Ok(Self { probs })
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Index of the largest probability; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    /// Inverse-CDF sample from one uniform draw in `[0, 1)`.
    pub fn sample_with(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (i, &p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        // u landed in the rounding gap above the accumulated sum
        self.probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }

    pub fn max_abs_diff(&self, other: &ActionDistribution) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// A point in the action simplex summarising neighbour behaviour.
///
/// An empty neighbourhood is represented by the uniform distribution, which
/// keeps the Q-network input on the simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MergedAction {
    values: Vec<f64>,
}

impl MergedAction {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_simplex("merged action", &values)?;
        Ok(Self { values })
    }

    /// Sentinel used when there are no neighbours, and as the constant
    /// merged input of independent learners.
    pub fn empty_neighborhood(len: usize) -> Self {
        Self {
            values: vec![1.0 / len as f64; len],
        }
    }

    pub fn one_hot(len: usize, action: usize) -> Result<Self> {
        if action >= len {
            return Err(out_of_range(action, len));
        }
        let mut values = vec![0.0; len];
        values[action] = 1.0;
        Ok(Self { values })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_abs_diff(&self, other: &MergedAction) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Accumulates `Σ_k w_k e_{a_k}` in neighbour order. Plain means go
    /// through here too, so equal weights reproduce them bit for bit.
    pub(crate) fn from_weighted_actions(len: usize, actions: &[usize], weights: &[f64]) -> Result<Self> {
        let mut values = vec![0.0; len];
        for (&a, &w) in actions.iter().zip(weights) {
            if a >= len {
                return Err(out_of_range(a, len));
            }
            values[a] += w;
        }
        Ok(Self { values })
    }
}

/// Average of the neighbours' one-hot last actions, or the empty-neighbourhood
/// sentinel when there are none.
pub fn mean_action(neighbor_actions: &[usize], len: usize) -> Result<MergedAction> {
    if neighbor_actions.is_empty() {
        return Ok(MergedAction::empty_neighborhood(len));
    }
    let w = vec![1.0 / neighbor_actions.len() as f64; neighbor_actions.len()];
    MergedAction::from_weighted_actions(len, neighbor_actions, &w)
}

/// Softmax of `beta * q` with max subtraction.
pub fn boltzmann_policy(q: &[f64], beta: f64) -> Result<ActionDistribution> {
    if q.is_empty() {
        return Err(Error::NotSimplex {
            context: "boltzmann policy",
            message: "no q-values".into(),
        });
    }
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(Error::config("beta", format!("{beta} is not a finite value >= 0")));
    }
    if let Some(v) = q.iter().find(|v| !v.is_finite()) {
        return Err(Error::NotSimplex {
            context: "boltzmann policy",
            message: format!("q-value {v} is not finite"),
        });
    }
    let m = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = q.iter().map(|&v| (beta * (v - m)).exp()).collect();
    let z: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= z;
    }
    Ok(ActionDistribution { probs })
}

/// ε-greedy over a Boltzmann policy. Always consumes exactly two uniform
/// draws from `rng`, so runs that differ only in their policies keep their
/// random streams aligned.
pub fn sample_action<R: Rng + ?Sized>(policy: &ActionDistribution, explore: f64, rng: &mut R) -> usize {
    let gate: f64 = rng.gen();
    let u: f64 = rng.gen();
    if gate < explore {
        ((u * policy.len() as f64) as usize).min(policy.len() - 1)
    } else {
        policy.sample_with(u)
    }
}

/// Samples an action for one agent from the network's Boltzmann policy at
/// `(obs, merged)`, exploring uniformly with probability `explore`.
pub fn act<R: Rng + ?Sized>(
    net: &crate::numerics::QNetwork,
    obs: &[f32],
    merged: &MergedAction,
    beta: f64,
    explore: f64,
    rng: &mut R,
) -> Result<usize> {
    let q: Vec<f64> = net.forward_q(obs, merged.as_slice())?.into_iter().map(f64::from).collect();
    let policy = boltzmann_policy(&q, beta)?;
    Ok(sample_action(&policy, explore, rng))
}
