//! Replay, the TD update, and self-play training for every learner variant.

pub mod checkpoint;
pub mod metrics;
pub mod replay;
pub mod trainer;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::causal::{cmfq_policy, random_weighted_policy, CausalParams, CausalWeights, EffectMeasure, QFunction};
use crate::error::{Error, Result};
use crate::meanfield::{boltzmann_policy, mean_action, ActionDistribution, MergedAction};
use crate::numerics::QNetwork;

pub use checkpoint::{Checkpoint, CHECKPOINT_SCHEMA_VERSION};
pub use metrics::{read_metrics, write_metrics, EpisodeMetrics};
pub use replay::{ReplayBuffer, Transition};
pub use trainer::{role_spec, self_play_train, td_target, train_update, TrainOutcome, TrainTrace, Trainer, UpdateStatus};

/// Which merged action a learner conditions on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Independent learners; the merged input is held at a constant.
    Iql,
    /// Plain mean of neighbour actions.
    Mfq,
    /// Causally weighted mean of neighbour actions.
    #[default]
    Cmfq,
    /// Weighted mean with random weights.
    Random,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Iql => "iql",
            Algorithm::Mfq => "mfq",
            Algorithm::Cmfq => "cmfq",
            Algorithm::Random => "random",
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub algorithm: Algorithm,
    pub episodes: usize,
    pub gamma: f64,
    /// Gradient updates between target-network syncs.
    pub target_sync: u64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Transitions required before the first update; defaults to the batch
    /// size.
    pub warmup: Option<usize>,
    /// Environment steps per gradient update.
    pub train_every: usize,
    pub lr: f32,
    pub beta: f64,
    /// Smoothing of the causal weights.
    pub epsilon: f64,
    pub measure: EffectMeasure,
    pub explore_start: f64,
    pub explore_end: f64,
    /// Fraction of episodes over which exploration decays linearly.
    pub explore_fraction: f64,
    pub hidden: Vec<usize>,
    pub seed: u64,
    /// Write a checkpoint every this many episodes; 0 writes only the last.
    pub checkpoint_every: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Cmfq,
            episodes: 2000,
            gamma: 0.95,
            target_sync: 200,
            batch_size: 256,
            buffer_capacity: 1 << 16,
            warmup: None,
            train_every: 1,
            lr: 1e-4,
            beta: 1.0,
            epsilon: 0.01,
            measure: EffectMeasure::Kl,
            explore_start: 1.0,
            explore_end: 0.05,
            explore_fraction: 0.5,
            hidden: vec![64, 64],
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainerConfig {
    pub fn causal_params(&self) -> CausalParams {
        CausalParams {
            beta: self.beta,
            epsilon: self.epsilon,
            measure: self.measure,
        }
    }

    pub fn warmup(&self) -> usize {
        self.warmup.unwrap_or(self.batch_size).max(self.batch_size)
    }

    /// Exploration rate for a given episode.
    pub fn explore_at(&self, episode: usize) -> f64 {
        let horizon = self.explore_fraction * self.episodes as f64;
        if horizon <= 0.0 {
            return self.explore_end;
        }
        let frac = (episode as f64 / horizon).min(1.0);
        self.explore_start + (self.explore_end - self.explore_start) * frac
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::config("gamma", format!("{} is outside [0, 1]", self.gamma)));
        }
        if self.target_sync == 0 {
            return Err(Error::config("target_sync", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be >= 1"));
        }
        if self.buffer_capacity < self.batch_size {
            return Err(Error::config("buffer_capacity", "must be at least batch_size"));
        }
        if self.warmup() > self.buffer_capacity {
            return Err(Error::config("warmup", "must not exceed buffer_capacity"));
        }
        if self.train_every == 0 {
            return Err(Error::config("train_every", "must be >= 1"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::config("lr", "must be finite and > 0"));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::config("beta", "must be finite and >= 0"));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::config("epsilon", "must be finite and > 0"));
        }
        for (name, v) in [("explore_start", self.explore_start), ("explore_end", self.explore_end)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(name, format!("{v} is outside [0, 1]")));
            }
        }
        if !(0.0..=1.0).contains(&self.explore_fraction) {
            return Err(Error::config("explore_fraction", "must lie in [0, 1]"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("hidden", "layer widths must be >= 1"));
        }
        Ok(())
    }
}

/// What an agent decided at one step.
#[derive(Debug, Clone)]
pub struct Decision {
    /// The merged action fed to the final policy.
    pub merged: MergedAction,
    pub policy: ActionDistribution,
    /// Present for the weighted variants.
    pub weights: Option<CausalWeights>,
}

/// A network run under one algorithm's merged-action rule.
#[derive(Debug, Clone, Copy)]
pub struct Controller<'a> {
    pub algorithm: Algorithm,
    pub params: CausalParams,
    pub net: &'a QNetwork,
}

impl Controller<'_> {
    /// Builds the agent's policy from its observation and its neighbours'
    /// previous actions. `rng` is only drawn from by the random-weight
    /// variant.
    pub fn decide<R: Rng + ?Sized>(
        &self,
        obs: &[f32],
        neighbor_ids: &[usize],
        neighbor_actions: &[usize],
        rng: &mut R,
    ) -> Result<Decision> {
        let len = self.net.spec().merged_len;
        match self.algorithm {
            Algorithm::Iql | Algorithm::Mfq => {
                let merged = if self.algorithm == Algorithm::Iql {
                    MergedAction::empty_neighborhood(len)
                } else {
                    mean_action(neighbor_actions, len)?
                };
                let prepared = self.net.prepare(obs)?;
                let q = self.net.q_batch(&prepared, &[merged.as_slice()])?.pop().expect("one row");
                Ok(Decision {
                    policy: boltzmann_policy(&q, self.params.beta)?,
                    merged,
                    weights: None,
                })
            }
            Algorithm::Cmfq => {
                let out = cmfq_policy(self.net, obs, neighbor_ids, neighbor_actions, &self.params)?;
                Ok(Decision {
                    merged: out.merged,
                    policy: out.policy,
                    weights: Some(out.weights),
                })
            }
            Algorithm::Random => {
                let out = random_weighted_policy(self.net, obs, neighbor_ids, neighbor_actions, &self.params, rng)?;
                Ok(Decision {
                    merged: out.merged,
                    policy: out.policy,
                    weights: Some(out.weights),
                })
            }
        }
    }
}
