//! Numerical checks of the weighted mean-field approximation: the size of
//! the second-order remainder, the cancellation of first-order terms, and
//! the reduction to plain mean-field as the smoothing grows.
//!
//! The Taylor expansion of `Q(s, a, ·)` around `č` at a neighbour action
//! `a_k = č + δ` is
//!
//! ```text
//! Q(a_k) = Q(č) + ∇Q(č)·δ + R_k
//! ```
//!
//! The weighted first-order terms cancel because `Σ_k w_k δ_k = 0`, so the
//! approximation error is governed by `R_k`, which an `L`-smooth `Q` bounds by
//! `L ‖δ‖² / 2 ≤ L`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::causal::{cmfq_policy, CausalParams, CausalWeights, QFunction};
use crate::envs::{EnvConfig, Role};
use crate::error::{ensure_len, Error, Result};
use crate::eval::{play_game, DecisionContext, GameObserver};
use crate::meanfield::{mean_action, MergedAction};
use crate::numerics::{Activation, InputSpec, QNetwork};
use crate::training::{Checkpoint, Controller, Decision};

/// Finite-difference step in merged-action coordinates.
pub const FD_STEP: f64 = 1e-4;

/// Points per segment `č → a_k` at which gradients are probed for `L̂`.
const SEGMENT_POINTS: usize = 9;

/// An observation together with the neighbourhood it was seen in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub obs: Vec<f32>,
    pub neighbor_ids: Vec<usize>,
    pub neighbor_actions: Vec<usize>,
}

/// Evaluates a [`QNetwork`] in `f64` from its `f32` parameters, so finite
/// differences are not swamped by single-precision rounding.
pub struct NetworkF64<'a> {
    net: &'a QNetwork,
}

impl<'a> NetworkF64<'a> {
    pub fn new(net: &'a QNetwork) -> Self {
        Self { net }
    }

    fn activate(&self, xs: &mut [f64]) {
        if self.net.activation() == Activation::Relu {
            for x in xs {
                *x = x.max(0.0);
            }
        }
    }
}

impl QFunction for NetworkF64<'_> {
    type Prepared = Vec<f64>;

    fn spec(&self) -> InputSpec {
        self.net.spec()
    }

    fn prepare(&self, obs: &[f32]) -> Result<Vec<f64>> {
        ensure_len("observation", self.net.spec().obs_len, obs.len())?;
        let first = &self.net.layers()[0];
        Ok((0..first.out_dim())
            .map(|o| {
                let w = &first.weights.row(o)[..obs.len()];
                f64::from(first.bias[o]) + w.iter().zip(obs).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum::<f64>()
            })
            .collect())
    }

    fn q_batch(&self, base: &Vec<f64>, merged: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        let spec = self.net.spec();
        let layers = self.net.layers();
        merged
            .iter()
            .map(|m| {
                ensure_len("merged action", spec.merged_len, m.len())?;
                let first = &layers[0];
                let mut h: Vec<f64> = (0..first.out_dim())
                    .map(|o| {
                        let w = &first.weights.row(o)[spec.obs_len..];
                        base[o] + w.iter().zip(m.iter()).map(|(&a, &b)| f64::from(a) * b).sum::<f64>()
                    })
                    .collect();
                for layer in &layers[1..] {
                    self.activate(&mut h);
                    h = (0..layer.out_dim())
                        .map(|o| {
                            f64::from(layer.bias[o])
                                + layer.weights.row(o).iter().zip(&h).map(|(&a, b)| f64::from(a) * b).sum::<f64>()
                        })
                        .collect();
                }
                Ok(h)
            })
            .collect()
    }
}

/// Central-difference Jacobian of all Q outputs with respect to the merged
/// input at `x`: `grad[a][j] = ∂Q_a/∂x_j`.
pub fn merged_gradient<Q: QFunction>(q: &Q, prepared: &Q::Prepared, x: &[f64]) -> Result<Vec<Vec<f64>>> {
    let n = x.len();
    let mut points = Vec::with_capacity(2 * n);
    for j in 0..n {
        for sign in [1.0, -1.0] {
            let mut p = x.to_vec();
            p[j] += sign * FD_STEP;
            points.push(p);
        }
    }
    let refs: Vec<&[f64]> = points.iter().map(Vec::as_slice).collect();
    let rows = q.q_batch(prepared, &refs)?;
    let n_actions = q.spec().n_actions;
    Ok((0..n_actions)
        .map(|a| {
            (0..n)
                .map(|j| (rows[2 * j][a] - rows[2 * j + 1][a]) / (2.0 * FD_STEP))
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemainderReport {
    pub samples: usize,
    /// Samples with no neighbours, or whose every neighbour coincides
    /// with `č`.
    pub skipped: usize,
    /// Number of `(sample, own action, neighbour action)` remainders.
    pub evaluations: usize,
    /// Largest `|R|` per evaluated sample.
    pub max_remainder_per_sample: Vec<f64>,
    /// Sampled gradient-Lipschitz estimate `L̂`.
    pub lipschitz_estimate: f64,
    pub margin: f64,
    /// Remainders with `|R| > L̂ (1 + margin)`.
    pub violations: usize,
    pub max_ratio: f64,
    /// Largest `‖a_k − č‖²` seen; bounded by 2 on the simplex.
    pub max_delta_sq: f64,
    /// Largest `|‖a_k − č‖² − 2(1 − č_n)|`, where `a_k = e_n`.
    pub identity_max_residual: f64,
    /// Cases with `‖a_k − č‖² > 2(1 − č_n)` beyond rounding.
    pub bound_violations: usize,
}

/// Second-order remainder of `Q` around `č` at every neighbour action, with
/// `L̂` taken as the largest gradient-difference quotient over points on the
/// segments `č → a_k` across all samples.
pub fn remainder_check<Q: QFunction>(
    q: &Q,
    samples: &[Sample],
    params: &CausalParams,
    margin: f64,
) -> Result<RemainderReport> {
    let spec = q.spec();
    if spec.n_actions < 2 || spec.merged_len < 2 {
        return Err(Error::config("n_actions", "remainder check needs at least two actions"));
    }
    if samples.is_empty() {
        return Err(Error::config("samples", "need at least one sample"));
    }
    let mut remainders: Vec<Vec<f64>> = Vec::new();
    let mut skipped = 0;
    let mut lipschitz = 0.0f64;
    let mut max_delta_sq = 0.0f64;
    let mut identity_max_residual = 0.0f64;
    let mut bound_violations = 0;

    for s in samples {
        let out = cmfq_policy(q, &s.obs, &s.neighbor_ids, &s.neighbor_actions, params)?;
        let c = out.merged.as_slice();
        let mut distinct: Vec<usize> = s.neighbor_actions.clone();
        distinct.sort_unstable();
        distinct.dedup();
        distinct.retain(|&n| c[n] < 1.0);
        if distinct.is_empty() {
            skipped += 1;
            continue;
        }
        let prepared = q.prepare(&s.obs)?;
        let q_c = q.q_batch(&prepared, &[c])?.pop().expect("one row");
        let grad_c = merged_gradient(q, &prepared, c)?;
        let mut rs = Vec::new();
        for &n in &distinct {
            let delta: Vec<f64> = (0..c.len()).map(|j| f64::from(u8::from(j == n)) - c[j]).collect();
            let delta_sq: f64 = delta.iter().map(|d| d * d).sum();
            max_delta_sq = max_delta_sq.max(delta_sq);
            let closed_form = 2.0 * (1.0 - c[n]);
            identity_max_residual = identity_max_residual.max((delta_sq - closed_form).abs());
            if delta_sq > closed_form + 1e-9 {
                bound_violations += 1;
            }

            let a_k = MergedAction::one_hot(c.len(), n)?;
            let q_k = q.q_batch(&prepared, &[a_k.as_slice()])?.pop().expect("one row");
            for a in 0..spec.n_actions {
                let linear: f64 = grad_c[a].iter().zip(&delta).map(|(g, d)| g * d).sum();
                rs.push(q_k[a] - q_c[a] - linear);
            }

            let norm = delta_sq.sqrt();
            let mut grads = Vec::with_capacity(SEGMENT_POINTS);
            for i in 0..SEGMENT_POINTS {
                let t = i as f64 / (SEGMENT_POINTS - 1) as f64;
                let x: Vec<f64> = c.iter().zip(&delta).map(|(ci, di)| ci + t * di).collect();
                grads.push((t, merged_gradient(q, &prepared, &x)?));
            }
            for i in 0..grads.len() {
                for j in i + 1..grads.len() {
                    let dist = (grads[j].0 - grads[i].0) * norm;
                    for a in 0..spec.n_actions {
                        let diff: f64 = grads[i].1[a]
                            .iter()
                            .zip(&grads[j].1[a])
                            .map(|(x, y)| (x - y) * (x - y))
                            .sum::<f64>()
                            .sqrt();
                        lipschitz = lipschitz.max(diff / dist);
                    }
                }
            }
        }
        remainders.push(rs);
    }

    let bound = lipschitz * (1.0 + margin);
    let mut violations = 0;
    let mut max_ratio = 0.0f64;
    let mut evaluations = 0;
    for r in remainders.iter().flatten() {
        evaluations += 1;
        if r.abs() > bound {
            violations += 1;
        }
        if lipschitz > 0.0 {
            max_ratio = max_ratio.max(r.abs() / lipschitz);
        } else if r.abs() > 0.0 {
            max_ratio = f64::INFINITY;
        }
    }
    Ok(RemainderReport {
        samples: samples.len(),
        skipped,
        evaluations,
        max_remainder_per_sample: remainders
            .iter()
            .map(|rs| rs.iter().fold(0.0f64, |m, r| m.max(r.abs())))
            .collect(),
        lipschitz_estimate: lipschitz,
        margin,
        violations,
        max_ratio,
        max_delta_sq,
        identity_max_residual,
        bound_violations,
    })
}

/// `‖Σ_k w_k (a_k − č)‖∞` for `č = Σ_k w_k a_k`; zero up to rounding.
pub fn first_order_cancellation_check(weights: &CausalWeights, actions: &[usize], len: usize) -> Result<f64> {
    ensure_len("neighbour actions", weights.len(), actions.len())?;
    if actions.is_empty() {
        return Ok(0.0);
    }
    let c = crate::causal::weighted_merged_action(weights, actions, len)?;
    let c = c.as_slice();
    let mut sum = vec![0.0f64; len];
    for (&a, &w) in actions.iter().zip(&weights.weights) {
        for (j, s) in sum.iter_mut().enumerate() {
            let e = if j == a { 1.0 } else { 0.0 };
            *s += w * (e - c[j]);
        }
    }
    Ok(sum.iter().fold(0.0, |m, v| m.max(v.abs())))
}

/// Largest `‖π_weighted − π_mean‖∞` over the samples at the given smoothing.
pub fn mfq_reduction_check<Q: QFunction>(q: &Q, samples: &[Sample], params: &CausalParams) -> Result<f64> {
    let mut worst = 0.0f64;
    for s in samples {
        let weighted = cmfq_policy(q, &s.obs, &s.neighbor_ids, &s.neighbor_actions, params)?;
        let mean = mean_action(&s.neighbor_actions, q.spec().merged_len)?;
        let prepared = q.prepare(&s.obs)?;
        let qv = q.q_batch(&prepared, &[mean.as_slice()])?.pop().expect("one row");
        let mfq = crate::meanfield::boltzmann_policy(&qv, params.beta)?;
        worst = worst.max(weighted.policy.max_abs_diff(&mfq));
    }
    Ok(worst)
}

/// Observations with uniform `[0, 1)` features and 1 to `max_neighbors`
/// neighbours taking random actions.
pub fn random_samples(spec: InputSpec, count: usize, max_neighbors: usize, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let k = rng.gen_range(1..=max_neighbors.max(1));
            Sample {
                obs: (0..spec.obs_len).map(|_| rng.gen::<f32>()).collect(),
                neighbor_ids: (0..k).collect(),
                neighbor_actions: (0..k).map(|_| rng.gen_range(0..spec.merged_len)).collect(),
            }
        })
        .collect()
}

struct Collector {
    samples: Vec<Sample>,
}

impl GameObserver for Collector {
    fn on_decision(&mut self, ctx: &DecisionContext<'_>, _decision: &Decision) -> Result<()> {
        if !ctx.neighbor_ids.is_empty() {
            self.samples.push(Sample {
                obs: ctx.obs.to_vec(),
                neighbor_ids: ctx.neighbor_ids.to_vec(),
                neighbor_actions: ctx.neighbor_actions.to_vec(),
            });
        }
        Ok(())
    }
}

/// Decision points with at least one neighbour, gathered from greedy
/// self-play games of `checkpoint` and subsampled uniformly to `count`.
pub fn rollout_samples(checkpoint: &Checkpoint, env: &EnvConfig, count: usize, seed: u64) -> Result<Vec<Sample>> {
    let role = env.kind.roles()[0];
    checkpoint.check_role(role, env)?;
    let ctrl = Controller {
        algorithm: checkpoint.algorithm,
        params: checkpoint.params,
        net: checkpoint.network(role)?,
    };
    if role != Role::Battle {
        return Err(Error::config("kind", "rollout samples are drawn from battle games"));
    }
    let mut collector = Collector { samples: Vec::new() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for game in 0..4u64 {
        let game_env = EnvConfig {
            seed: seed.wrapping_add(game),
            ..env.clone()
        };
        play_game(&game_env, [ctrl, ctrl], &mut rng, &mut collector)?;
        if collector.samples.len() >= 4 * count {
            break;
        }
    }
    let pool = collector.samples;
    if pool.is_empty() {
        return Err(Error::config("team_sizes", "games produced no agent with neighbours"));
    }
    let picks = rand::seq::index::sample(&mut rng, pool.len(), count.min(pool.len()));
    Ok(picks.into_iter().map(|i| pool[i].clone()).collect())
}

/// Everything the diagnose command reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub schema_version: u32,
    pub remainder_trained: RemainderReport,
    pub remainder_random: RemainderReport,
    pub cancellation_max: f64,
    pub reduction_max_deviation: f64,
    /// Same deviation at a small smoothing, showing the check can fail.
    pub reduction_deviation_small_epsilon: f64,
    pub passed: bool,
}

pub const DIAGNOSTICS_SCHEMA_VERSION: u32 = 1;

/// Runs every check against a battle checkpoint.
pub fn diagnose(checkpoint: &Checkpoint, env: &EnvConfig, samples: usize, margin: f64, seed: u64) -> Result<DiagnosticsReport> {
    let net = checkpoint.network(Role::Battle)?;
    let f64_net = NetworkF64::new(net);
    let params = CausalParams {
        beta: checkpoint.params.beta,
        ..checkpoint.params
    };
    let trained = rollout_samples(checkpoint, env, samples, seed)?;
    let random = random_samples(net.spec(), samples, 8, seed ^ 0x5eed);
    let remainder_trained = remainder_check(&f64_net, &trained, &params, margin)?;
    let remainder_random = remainder_check(&f64_net, &random, &params, margin)?;

    let mut cancellation_max = 0.0f64;
    for s in trained.iter().chain(&random) {
        let out = cmfq_policy(&f64_net, &s.obs, &s.neighbor_ids, &s.neighbor_actions, &params)?;
        cancellation_max = cancellation_max.max(first_order_cancellation_check(
            &out.weights,
            &s.neighbor_actions,
            net.spec().merged_len,
        )?);
    }
    let huge = CausalParams {
        epsilon: 1e9,
        ..params
    };
    let small = CausalParams {
        epsilon: 1e-3,
        ..params
    };
    let all: Vec<Sample> = trained.iter().chain(&random).cloned().collect();
    let reduction_max_deviation = mfq_reduction_check(&f64_net, &all, &huge)?;
    let reduction_deviation_small_epsilon = mfq_reduction_check(&f64_net, &all, &small)?;
    let passed = remainder_trained.violations == 0
        && remainder_random.violations == 0
        && remainder_trained.bound_violations == 0
        && remainder_random.bound_violations == 0
        && cancellation_max < 1e-9
        && reduction_max_deviation < 1e-6;
    Ok(DiagnosticsReport {
        schema_version: DIAGNOSTICS_SCHEMA_VERSION,
        remainder_trained,
        remainder_random,
        cancellation_max,
        reduction_max_deviation,
        reduction_deviation_small_epsilon,
        passed,
    })
}
