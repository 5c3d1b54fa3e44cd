//! Counterfactual interventions on the merged action, per-neighbour
//! treatment effects, and the causally weighted merged action.
//!
//! For a focal agent with neighbours `k = 1..K`:
//!
//! 1. the factual policy `π(·|s, ā)` uses the plain mean action `ā`;
//! 2. intervening with `do(ā = a_k)` gives a counterfactual policy per
//!    neighbour, and the treatment effect `TE_k` measures how far it moved;
//! 3. weights `w_k = (TE_k + ε) / Σ_j (TE_j + ε)` give `č = Σ_k w_k a_k`;
//! 4. the agent acts from `π(·|s, č)`.
//!
//! Treatment effects depend on the neighbour only through its action, so
//! counterfactuals are evaluated once per distinct action in the
//! neighbourhood and shared.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::meanfield::{boltzmann_policy, mean_action, ActionDistribution, MergedAction};
use crate::numerics::{DenseMatrix, InputSpec, QNetwork};

/// Upper bound on any treatment effect. Keeps weights finite when a
/// counterfactual probability underflows to zero.
pub const TE_CAP: f64 = 50.0;

pub const WEIGHT_SCHEMA_VERSION: u32 = 1;

/// Anything that maps an observation and a batch of merged actions to
/// Q-values over own actions.
pub trait QFunction {
    /// Per-observation work shared across merged inputs.
    type Prepared;

    fn spec(&self) -> InputSpec;

    fn prepare(&self, obs: &[f32]) -> Result<Self::Prepared>;

    /// One row of Q-values per merged input.
    fn q_batch(&self, prepared: &Self::Prepared, merged: &[&[f64]]) -> Result<Vec<Vec<f64>>>;
}

impl QFunction for QNetwork {
    type Prepared = Vec<f32>;

    fn spec(&self) -> InputSpec {
        QNetwork::spec(self)
    }

    fn prepare(&self, obs: &[f32]) -> Result<Vec<f32>> {
        ensure_len("observation", self.spec().obs_len, obs.len())?;
        Ok(self.project_obs(obs))
    }

    fn q_batch(&self, prepared: &Vec<f32>, merged: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        let spec = self.spec();
        let mut h = DenseMatrix::zeros(merged.len(), prepared.len());
        for (v, m) in merged.iter().enumerate() {
            ensure_len("merged action", spec.merged_len, m.len())?;
            self.add_merged_projection(prepared, m, h.row_mut(v));
        }
        let q = self.finish_from_first(h)?;
        Ok((0..q.rows())
            .map(|r| q.row(r).iter().map(|&x| f64::from(x)).collect())
            .collect())
    }
}

/// A Q-function given by a closure, evaluated in `f64`. Used for
/// hand-computable instances and analytic test functions.
pub struct FnQ<F> {
    spec: InputSpec,
    f: F,
}

impl<F> FnQ<F>
where
    F: Fn(&[f32], &[f64]) -> Vec<f64>,
{
    pub fn new(spec: InputSpec, f: F) -> Self {
        Self { spec, f }
    }
}

impl<F> QFunction for FnQ<F>
where
    F: Fn(&[f32], &[f64]) -> Vec<f64>,
{
    type Prepared = Vec<f32>;

    fn spec(&self) -> InputSpec {
        self.spec
    }

    fn prepare(&self, obs: &[f32]) -> Result<Vec<f32>> {
        ensure_len("observation", self.spec.obs_len, obs.len())?;
        Ok(obs.to_vec())
    }

    fn q_batch(&self, obs: &Vec<f32>, merged: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        merged
            .iter()
            .map(|m| {
                ensure_len("merged action", self.spec.merged_len, m.len())?;
                let q = (self.f)(obs, m);
                ensure_len("q-values", self.spec.n_actions, q.len())?;
                Ok(q)
            })
            .collect()
    }
}

/// Divergence used to compare factual and counterfactual policies.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectMeasure {
    /// `KL(factual ‖ counterfactual)`.
    #[default]
    Kl,
    /// Mean of the two KL directions.
    SymmetricKl,
    TotalVariation,
}

fn capped_kl(p: &[f64], q: &[f64]) -> f64 {
    let mut sum = 0.0;
    for (&pa, &qa) in p.iter().zip(q) {
        if pa == 0.0 {
            continue;
        }
        let log_ratio = if qa == 0.0 { TE_CAP } else { (pa / qa).ln().min(TE_CAP) };
        sum += pa * log_ratio;
    }
    sum.clamp(0.0, TE_CAP)
}

/// Size of the policy change caused by an intervention. Always in
/// `[0, TE_CAP]`, and zero when the two distributions coincide.
pub fn treatment_effect(
    factual: &ActionDistribution,
    counterfactual: &ActionDistribution,
    measure: EffectMeasure,
) -> Result<f64> {
    ensure_len("counterfactual policy", factual.len(), counterfactual.len())?;
    let (p, q) = (factual.as_slice(), counterfactual.as_slice());
    Ok(match measure {
        EffectMeasure::Kl => capped_kl(p, q),
        EffectMeasure::SymmetricKl => 0.5 * (capped_kl(p, q) + capped_kl(q, p)),
        EffectMeasure::TotalVariation => {
            0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
        }
    })
}

/// Policy after `do(merged = e_action)`: the merged input is replaced
/// wholesale by the neighbour's one-hot action.
pub fn counterfactual_policy<Q: QFunction>(q: &Q, obs: &[f32], action: usize, beta: f64) -> Result<ActionDistribution> {
    let spec = q.spec();
    let one_hot = MergedAction::one_hot(spec.merged_len, action)?;
    let prepared = q.prepare(obs)?;
    let rows = q.q_batch(&prepared, &[one_hot.as_slice()])?;
    boltzmann_policy(&rows[0], beta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalWeights {
    pub neighbor_ids: Vec<usize>,
    pub treatment_effects: Vec<f64>,
    pub epsilon: f64,
    pub weights: Vec<f64>,
}

impl CausalWeights {
    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }
}

/// Normalises `TE_k + ε`. An empty neighbourhood gives empty weights.
pub fn causal_weights(neighbor_ids: &[usize], effects: &[f64], epsilon: f64) -> Result<CausalWeights> {
    ensure_len("treatment effects", neighbor_ids.len(), effects.len())?;
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::config("epsilon", format!("{epsilon} must be finite and > 0")));
    }
    if let Some(te) = effects.iter().find(|t| !t.is_finite() || **t < 0.0) {
        return Err(Error::NotSimplex {
            context: "treatment effects",
            message: format!("effect {te} is negative or not finite"),
        });
    }
    let total: f64 = effects.iter().map(|t| t + epsilon).sum();
    Ok(CausalWeights {
        neighbor_ids: neighbor_ids.to_vec(),
        treatment_effects: effects.to_vec(),
        epsilon,
        weights: effects.iter().map(|t| (t + epsilon) / total).collect(),
    })
}

/// `č = Σ_k w_k e_{a_k}`; the empty-neighbourhood sentinel when there are no
/// neighbours.
pub fn weighted_merged_action(weights: &CausalWeights, actions: &[usize], len: usize) -> Result<MergedAction> {
    ensure_len("neighbour actions", weights.len(), actions.len())?;
    if actions.is_empty() {
        return Ok(MergedAction::empty_neighborhood(len));
    }
    MergedAction::from_weighted_actions(len, actions, &weights.weights)
}

/// Weights from uniform `[0, 1)` pseudo-effects, normalised with the same
/// smoothing as the causal weights.
pub fn random_weights<R: Rng + ?Sized>(neighbor_ids: &[usize], epsilon: f64, rng: &mut R) -> Result<CausalWeights> {
    let effects: Vec<f64> = neighbor_ids.iter().map(|_| rng.gen::<f64>()).collect();
    causal_weights(neighbor_ids, &effects, epsilon)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CausalParams {
    pub beta: f64,
    pub epsilon: f64,
    pub measure: EffectMeasure,
}

impl Default for CausalParams {
    fn default() -> Self {
        Self {
            beta: 1.0,
            epsilon: 0.01,
            measure: EffectMeasure::Kl,
        }
    }
}

/// Everything the weighted pipeline computed for one focal agent.
#[derive(Debug, Clone)]
pub struct CmfqOutput {
    /// Policy under the plain mean action.
    pub factual: ActionDistribution,
    pub mean: MergedAction,
    pub weights: CausalWeights,
    /// The weighted merged action `č` fed to the final policy.
    pub merged: MergedAction,
    /// Q-values at `(s, č)`.
    pub q: Vec<f64>,
    pub policy: ActionDistribution,
    /// Forward evaluations spent, counting each merged input once.
    pub forwards: usize,
}

fn check_neighbors(ids: &[usize], actions: &[usize]) -> Result<()> {
    ensure_len("neighbour actions", ids.len(), actions.len())
}

/// Distinct actions in first-appearance order and, per neighbour, the slot
/// of its action in that list.
fn distinct_actions(actions: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut distinct = Vec::new();
    let slots = actions
        .iter()
        .map(|&a| match distinct.iter().position(|&d| d == a) {
            Some(p) => p,
            None => {
                distinct.push(a);
                distinct.len() - 1
            }
        })
        .collect();
    (distinct, slots)
}

/// Policy of a mean-field learner: Boltzmann over `Q(s, ·, ā)`.
pub fn mean_field_policy<Q: QFunction>(
    q: &Q,
    obs: &[f32],
    neighbor_actions: &[usize],
    beta: f64,
) -> Result<(MergedAction, Vec<f64>, ActionDistribution)> {
    let merged = mean_action(neighbor_actions, q.spec().merged_len)?;
    let prepared = q.prepare(obs)?;
    let mut rows = q.q_batch(&prepared, &[merged.as_slice()])?;
    let qv = rows.pop().expect("one row per input");
    let policy = boltzmann_policy(&qv, beta)?;
    Ok((merged, qv, policy))
}

/// The full weighted pipeline for one focal agent.
///
/// All counterfactuals and the factual input go through one batched call
/// that shares the observation's contribution; `č` costs one more.
pub fn cmfq_policy<Q: QFunction>(
    q: &Q,
    obs: &[f32],
    neighbor_ids: &[usize],
    neighbor_actions: &[usize],
    params: &CausalParams,
) -> Result<CmfqOutput> {
    check_neighbors(neighbor_ids, neighbor_actions)?;
    let len = q.spec().merged_len;
    let prepared = q.prepare(obs)?;
    let mean = mean_action(neighbor_actions, len)?;

    if neighbor_actions.is_empty() {
        let qv = q.q_batch(&prepared, &[mean.as_slice()])?.pop().expect("one row");
        let policy = boltzmann_policy(&qv, params.beta)?;
        return Ok(CmfqOutput {
            factual: policy.clone(),
            weights: causal_weights(&[], &[], params.epsilon)?,
            merged: mean.clone(),
            mean,
            q: qv,
            policy,
            forwards: 1,
        });
    }

    let (distinct, slots) = distinct_actions(neighbor_actions);
    let one_hots = distinct
        .iter()
        .map(|&a| MergedAction::one_hot(len, a))
        .collect::<Result<Vec<_>>>()?;
    let mut inputs: Vec<&[f64]> = Vec::with_capacity(1 + distinct.len());
    inputs.push(mean.as_slice());
    inputs.extend(one_hots.iter().map(MergedAction::as_slice));
    let rows = q.q_batch(&prepared, &inputs)?;

    let factual = boltzmann_policy(&rows[0], params.beta)?;
    let per_action = rows[1..]
        .iter()
        .map(|r| {
            let cf = boltzmann_policy(r, params.beta)?;
            treatment_effect(&factual, &cf, params.measure)
        })
        .collect::<Result<Vec<f64>>>()?;
    let effects: Vec<f64> = slots.iter().map(|&s| per_action[s]).collect();
    let weights = causal_weights(neighbor_ids, &effects, params.epsilon)?;
    let merged = weighted_merged_action(&weights, neighbor_actions, len)?;

    let qv = q.q_batch(&prepared, &[merged.as_slice()])?.pop().expect("one row");
    let policy = boltzmann_policy(&qv, params.beta)?;
    let forwards = inputs.len() + 1;
    drop(inputs);
    Ok(CmfqOutput {
        factual,
        mean,
        weights,
        merged,
        q: qv,
        policy,
        forwards,
    })
}

/// The weighting ablation: same pipeline shape, but the effects are random
/// draws instead of measured interventions.
pub fn random_weighted_policy<Q: QFunction, R: Rng + ?Sized>(
    q: &Q,
    obs: &[f32],
    neighbor_ids: &[usize],
    neighbor_actions: &[usize],
    params: &CausalParams,
    rng: &mut R,
) -> Result<CmfqOutput> {
    check_neighbors(neighbor_ids, neighbor_actions)?;
    let len = q.spec().merged_len;
    let prepared = q.prepare(obs)?;
    let mean = mean_action(neighbor_actions, len)?;
    let weights = if neighbor_ids.is_empty() {
        causal_weights(&[], &[], params.epsilon)?
    } else {
        random_weights(neighbor_ids, params.epsilon, rng)?
    };
    let merged = weighted_merged_action(&weights, neighbor_actions, len)?;
    let qv = q.q_batch(&prepared, &[merged.as_slice()])?.pop().expect("one row");
    let policy = boltzmann_policy(&qv, params.beta)?;
    Ok(CmfqOutput {
        factual: policy.clone(),
        mean,
        weights,
        merged,
        q: qv,
        policy,
        forwards: 1,
    })
}

/// Unbatched reference for [`cmfq_policy`]: one full forward pass per
/// neighbour, no sharing of the observation projection and no reuse across
/// neighbours with equal actions. Kept for benchmarking and cross-checks.
pub fn cmfq_policy_sequential(
    net: &QNetwork,
    obs: &[f32],
    neighbor_ids: &[usize],
    neighbor_actions: &[usize],
    params: &CausalParams,
) -> Result<CmfqOutput> {
    check_neighbors(neighbor_ids, neighbor_actions)?;
    let len = net.spec().merged_len;
    let forward = |m: &[f64]| -> Result<Vec<f64>> {
        Ok(net.forward_q(obs, m)?.into_iter().map(f64::from).collect())
    };
    let mean = mean_action(neighbor_actions, len)?;
    let factual = boltzmann_policy(&forward(mean.as_slice())?, params.beta)?;
    let mut effects = Vec::with_capacity(neighbor_actions.len());
    for &a in neighbor_actions {
        let cf = boltzmann_policy(&forward(MergedAction::one_hot(len, a)?.as_slice())?, params.beta)?;
        effects.push(treatment_effect(&factual, &cf, params.measure)?);
    }
    let weights = causal_weights(neighbor_ids, &effects, params.epsilon)?;
    let merged = weighted_merged_action(&weights, neighbor_actions, len)?;
    let qv = forward(merged.as_slice())?;
    let policy = boltzmann_policy(&qv, params.beta)?;
    Ok(CmfqOutput {
        factual,
        mean,
        weights,
        merged,
        q: qv,
        policy,
        forwards: neighbor_actions.len() + 2,
    })
}

/// One line of a weight export: the weights a focal agent used at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightRecord {
    pub schema_version: u32,
    pub game: usize,
    pub step: usize,
    pub agent: usize,
    pub neighbor_ids: Vec<usize>,
    /// Absent for learners that do not measure effects.
    pub treatment_effects: Option<Vec<f64>>,
    pub weights: Vec<f64>,
}
