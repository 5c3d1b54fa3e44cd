//! Greedy evaluation games, cross-play tournaments, scalability sweeps and
//! predator-prey scoring.

use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::causal::{cmfq_policy, cmfq_policy_sequential, CausalParams, WeightRecord, WEIGHT_SCHEMA_VERSION};
use crate::envs::{write_frame, EnvConfig, EnvKind, Frame, GridWorld, Neighbor, Role, IDLE};
use crate::error::{Error, Result};
use crate::numerics::QNetwork;
use crate::training::{Checkpoint, Controller, Decision};

/// What an agent saw when it decided.
#[derive(Debug, Clone, Copy)]
pub struct DecisionContext<'a> {
    pub step: usize,
    pub agent: usize,
    pub team: usize,
    pub obs: &'a [f32],
    pub neighbor_ids: &'a [usize],
    pub neighbor_actions: &'a [usize],
}

/// Callbacks invoked while a game is played.
pub trait GameObserver {
    /// Called with the world before the first step and after every step.
    fn on_frame(&mut self, _world: &GridWorld) -> Result<()> {
        Ok(())
    }

    /// Called for every live agent's decision, before the step is applied.
    fn on_decision(&mut self, _ctx: &DecisionContext<'_>, _decision: &Decision) -> Result<()> {
        Ok(())
    }
}

/// Observer that does nothing.
pub struct NoObserver;

impl GameObserver for NoObserver {}

#[derive(Debug, Clone, PartialEq)]
pub struct GameResult {
    pub steps: usize,
    pub survivors: [usize; 2],
    pub total_reward: [f64; 2],
    /// Predator-prey steps whose surround rewards did not cancel exactly.
    pub zero_sum_violations: usize,
}

/// Plays one episode with greedy (argmax) policies. `controllers[t]` drives
/// team `t`.
pub fn play_game(
    env: &EnvConfig,
    controllers: [Controller<'_>; 2],
    rng: &mut ChaCha8Rng,
    observer: &mut dyn GameObserver,
) -> Result<GameResult> {
    let mut world = GridWorld::new(env)?;
    let mut obs = world.observe_all();
    let n = world.agents().len();
    let mut total_reward = [0.0f64; 2];
    let mut zero_sum_violations = 0;
    let mut neighbors: Vec<Neighbor> = Vec::new();
    let mut ids = Vec::new();
    let mut acts = Vec::new();
    observer.on_frame(&world)?;
    while !world.is_over() {
        let mut actions = vec![IDLE; n];
        for id in 0..n {
            let agent = &world.agents()[id];
            if !agent.alive {
                continue;
            }
            world.neighbors_into(id, &mut neighbors);
            ids.clear();
            acts.clear();
            ids.extend(neighbors.iter().map(|nb| nb.id));
            acts.extend(neighbors.iter().map(|nb| nb.last_action));
            let decision = controllers[agent.team].decide(&obs[id].features, &ids, &acts, rng)?;
            actions[id] = decision.policy.argmax();
            let ctx = DecisionContext {
                step: world.step_count(),
                agent: id,
                team: agent.team,
                obs: &obs[id].features,
                neighbor_ids: &ids,
                neighbor_actions: &acts,
            };
            observer.on_decision(&ctx, &decision)?;
        }
        let out = world.step(&actions)?;
        for (id, r) in out.rewards.iter().enumerate() {
            total_reward[world.agents()[id].team] += f64::from(*r);
        }
        if out.surround_reward + out.be_surrounded_penalty != 0.0 {
            zero_sum_violations += 1;
        }
        obs = out.observations;
        observer.on_frame(&world)?;
    }
    Ok(GameResult {
        steps: world.step_count(),
        survivors: [world.live_count(0), world.live_count(1)],
        total_reward,
        zero_sum_violations,
    })
}

fn controller(ck: &Checkpoint, role: Role) -> Result<Controller<'_>> {
    Ok(Controller {
        algorithm: ck.algorithm,
        params: ck.params,
        net: ck.network(role)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchupResult {
    pub algorithm_a: String,
    pub algorithm_b: String,
    /// Agents per team.
    pub scale: usize,
    pub games: usize,
    pub wins: usize,
    pub losses: usize,
    pub draws: usize,
    pub mean_reward_a: f64,
    pub mean_reward_b: f64,
}

impl MatchupResult {
    /// Wins over decided games; `None` when every game was drawn.
    pub fn win_rate(&self) -> Option<f64> {
        let decided = self.wins + self.losses;
        (decided > 0).then(|| self.wins as f64 / decided as f64)
    }

    /// Binomial standard error of the win rate.
    pub fn win_rate_stderr(&self) -> Option<f64> {
        let decided = (self.wins + self.losses) as f64;
        self.win_rate().map(|p| (p * (1.0 - p) / decided).sqrt())
    }
}

/// A against B over `games` greedy games. Game `g` uses map seed
/// `seed + g / 2` and A plays team `g % 2`, so each map is played from both
/// sides. The side with more survivors wins.
pub fn cross_play(a: &Checkpoint, b: &Checkpoint, env: &EnvConfig, games: usize, seed: u64) -> Result<MatchupResult> {
    if env.kind != EnvKind::Battle {
        return Err(Error::config("kind", "cross-play needs a battle environment"));
    }
    a.check_compatible(env)?;
    b.check_compatible(env)?;
    let (ca, cb) = (controller(a, Role::Battle)?, controller(b, Role::Battle)?);
    let mut result = MatchupResult {
        algorithm_a: a.algorithm.to_string(),
        algorithm_b: b.algorithm.to_string(),
        scale: env.team_sizes[0],
        games,
        wins: 0,
        losses: 0,
        draws: 0,
        mean_reward_a: 0.0,
        mean_reward_b: 0.0,
    };
    for g in 0..games {
        let game_env = EnvConfig {
            seed: seed.wrapping_add((g / 2) as u64),
            ..env.clone()
        };
        let side_a = g % 2;
        let controllers = if side_a == 0 { [ca, cb] } else { [cb, ca] };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(g as u64);
        let r = play_game(&game_env, controllers, &mut rng, &mut NoObserver)?;
        let (sa, sb) = (r.survivors[side_a], r.survivors[1 - side_a]);
        match sa.cmp(&sb) {
            std::cmp::Ordering::Greater => result.wins += 1,
            std::cmp::Ordering::Less => result.losses += 1,
            std::cmp::Ordering::Equal => result.draws += 1,
        }
        result.mean_reward_a += r.total_reward[side_a];
        result.mean_reward_b += r.total_reward[1 - side_a];
    }
    if games > 0 {
        result.mean_reward_a /= games as f64;
        result.mean_reward_b /= games as f64;
    }
    Ok(result)
}

/// Each candidate against a fixed opponent at each team size. The map grows
/// with the population (see [`EnvConfig::with_team_sizes`]).
pub fn scalability_sweep(
    candidates: &[&Checkpoint],
    opponent: &Checkpoint,
    template: &EnvConfig,
    scales: &[usize],
    games: usize,
    seed: u64,
) -> Result<Vec<MatchupResult>> {
    let mut out = Vec::with_capacity(candidates.len() * scales.len());
    for cand in candidates {
        for &n in scales {
            let env = template.with_team_sizes([n, n]);
            out.push(cross_play(cand, opponent, &env, games, seed)?);
        }
    }
    Ok(out)
}

/// Least-squares slope of win rate against team size. Negative means the
/// win rate falls as the population grows.
pub fn win_rate_slope(results: &[MatchupResult]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = results
        .iter()
        .filter_map(|r| r.win_rate().map(|w| (r.scale as f64, w)))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredatorPreyResult {
    pub predator_algorithm: String,
    pub prey_algorithm: String,
    /// Multiple of the template's team sizes.
    pub scale: usize,
    pub predators: usize,
    pub prey: usize,
    pub games: usize,
    pub mean_predator_reward: f64,
    pub mean_prey_reward: f64,
    pub zero_sum_violations: usize,
}

/// Predator networks from `predators` against prey networks from `prey`,
/// with both teams multiplied by each entry of `scales`.
pub fn predator_prey_eval(
    predators: &Checkpoint,
    prey: &Checkpoint,
    template: &EnvConfig,
    scales: &[usize],
    games: usize,
    seed: u64,
) -> Result<Vec<PredatorPreyResult>> {
    if template.kind != EnvKind::PredatorPrey {
        return Err(Error::config("kind", "predator-prey evaluation needs a predator_prey environment"));
    }
    let cp = controller(predators, Role::Predator)?;
    let cq = controller(prey, Role::Prey)?;
    let mut out = Vec::with_capacity(scales.len());
    for &k in scales {
        if k == 0 {
            return Err(Error::config("scales", "scale multipliers must be >= 1"));
        }
        let env = template.with_team_sizes([template.team_sizes[0] * k, template.team_sizes[1] * k]);
        predators.check_role(Role::Predator, &env)?;
        prey.check_role(Role::Prey, &env)?;
        let mut row = PredatorPreyResult {
            predator_algorithm: predators.algorithm.to_string(),
            prey_algorithm: prey.algorithm.to_string(),
            scale: k,
            predators: env.team_sizes[0],
            prey: env.team_sizes[1],
            games,
            mean_predator_reward: 0.0,
            mean_prey_reward: 0.0,
            zero_sum_violations: 0,
        };
        for g in 0..games {
            let game_env = EnvConfig {
                seed: seed.wrapping_add(g as u64),
                ..env.clone()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(g as u64);
            let r = play_game(&game_env, [cp, cq], &mut rng, &mut NoObserver)?;
            row.mean_predator_reward += r.total_reward[0];
            row.mean_prey_reward += r.total_reward[1];
            row.zero_sum_violations += r.zero_sum_violations;
        }
        if games > 0 {
            row.mean_predator_reward /= games as f64;
            row.mean_prey_reward /= games as f64;
        }
        out.push(row);
    }
    Ok(out)
}

/// One greedy game of a checkpoint against itself; each team uses the
/// network of its role. Game `g` uses map seed `seed + g` and rng stream `g`.
pub fn self_play_game(
    ck: &Checkpoint,
    env: &EnvConfig,
    game: usize,
    seed: u64,
    observer: &mut dyn GameObserver,
) -> Result<GameResult> {
    ck.check_compatible(env)?;
    let controllers = [
        controller(ck, env.kind.role_of_team(0))?,
        controller(ck, env.kind.role_of_team(1))?,
    ];
    let game_env = EnvConfig {
        seed: seed.wrapping_add(game as u64),
        ..env.clone()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(game as u64);
    play_game(&game_env, controllers, &mut rng, observer)
}

/// Collects a [`WeightRecord`] for every decision of an agent with at least
/// one neighbour. Learners without weights report uniform weights.
#[derive(Debug, Default)]
pub struct WeightRecorder {
    pub game: usize,
    pub records: Vec<WeightRecord>,
}

impl GameObserver for WeightRecorder {
    fn on_decision(&mut self, ctx: &DecisionContext<'_>, decision: &Decision) -> Result<()> {
        if ctx.neighbor_ids.is_empty() {
            return Ok(());
        }
        let (effects, weights) = match &decision.weights {
            Some(w) => (Some(w.treatment_effects.clone()), w.weights.clone()),
            None => {
                let k = ctx.neighbor_ids.len();
                (None, vec![1.0 / k as f64; k])
            }
        };
        self.records.push(WeightRecord {
            schema_version: WEIGHT_SCHEMA_VERSION,
            game: self.game,
            step: ctx.step,
            agent: ctx.agent,
            neighbor_ids: ctx.neighbor_ids.to_vec(),
            treatment_effects: effects,
            weights,
        });
        Ok(())
    }
}

/// Streams a frame per step as JSON lines.
pub struct FrameWriter<W: Write> {
    out: W,
    pub frames: usize,
}

impl<W: Write> FrameWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out, frames: 0 }
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write> GameObserver for FrameWriter<W> {
    fn on_frame(&mut self, world: &GridWorld) -> Result<()> {
        self.frames += 1;
        write_frame(&mut self.out, &Frame::capture(world))
    }
}

/// How counterfactual Q-values are evaluated during a timed rollout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelinePath {
    /// Shared observation projection, one evaluation per distinct action.
    Batched,
    /// One full forward pass per neighbour.
    Sequential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutTiming {
    pub path: PipelinePath,
    pub steps: usize,
    pub decisions: usize,
    pub forwards: usize,
    pub seconds: f64,
}

impl RolloutTiming {
    pub fn steps_per_second(&self) -> f64 {
        self.steps as f64 / self.seconds.max(1e-12)
    }
}

/// Times a greedy self-play rollout in which every agent runs the weighted
/// pipeline with `net`.
pub fn time_rollout(env: &EnvConfig, net: &QNetwork, params: &CausalParams, path: PipelinePath) -> Result<RolloutTiming> {
    let mut world = GridWorld::new(env)?;
    let mut obs = world.observe_all();
    let n = world.agents().len();
    let mut neighbors: Vec<Neighbor> = Vec::new();
    let (mut ids, mut acts) = (Vec::new(), Vec::new());
    let (mut decisions, mut forwards) = (0, 0);
    let started = Instant::now();
    while !world.is_over() {
        let mut actions = vec![IDLE; n];
        for id in 0..n {
            if !world.agents()[id].alive {
                continue;
            }
            world.neighbors_into(id, &mut neighbors);
            ids.clear();
            acts.clear();
            ids.extend(neighbors.iter().map(|nb| nb.id));
            acts.extend(neighbors.iter().map(|nb| nb.last_action));
            let out = match path {
                PipelinePath::Batched => cmfq_policy(net, &obs[id].features, &ids, &acts, params)?,
                PipelinePath::Sequential => cmfq_policy_sequential(net, &obs[id].features, &ids, &acts, params)?,
            };
            actions[id] = out.policy.argmax();
            decisions += 1;
            forwards += out.forwards;
        }
        obs = world.step(&actions)?.observations;
    }
    Ok(RolloutTiming {
        path,
        steps: world.step_count(),
        decisions,
        forwards,
        seconds: started.elapsed().as_secs_f64(),
    })
}

pub fn write_csv<W: Write, T: Serialize>(out: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("results", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::{self_play_train, Algorithm, TrainerConfig};

    fn small_env() -> EnvConfig {
        let mut env = EnvConfig::battle(3);
        env.width = 10;
        env.height = 10;
        env.obs_radius = 2;
        env.max_steps = 20;
        env
    }

    fn untrained(alg: Algorithm, seed: u64, env: &EnvConfig) -> Checkpoint {
        let cfg = TrainerConfig {
            algorithm: alg,
            episodes: 0,
            hidden: vec![8],
            seed,
            ..TrainerConfig::default()
        };
        self_play_train(env, &cfg).unwrap().checkpoint
    }

    #[test]
    fn zero_games_is_empty_without_nan() {
        let env = small_env();
        let a = untrained(Algorithm::Cmfq, 0, &env);
        let r = cross_play(&a, &a, &env, 0, 0).unwrap();
        assert_eq!((r.wins, r.losses, r.draws), (0, 0, 0));
        assert_eq!(r.win_rate(), None);
        assert_eq!(r.mean_reward_a, 0.0);
    }

    #[test]
    fn self_play_is_symmetric_by_side_swapping() {
        let env = small_env();
        let a = untrained(Algorithm::Mfq, 1, &env);
        let r = cross_play(&a, &a, &env, 40, 7).unwrap();
        assert_eq!(r.wins + r.losses + r.draws, 40);
        // identical policies on mirrored seeds: every map's two games cancel
        assert_eq!(r.wins, r.losses);
        assert!((r.mean_reward_a - r.mean_reward_b).abs() < 1e-9);
    }

    #[test]
    fn results_are_deterministic_and_leave_checkpoints_alone() {
        let env = small_env();
        let a = untrained(Algorithm::Cmfq, 2, &env);
        let b = untrained(Algorithm::Random, 3, &env);
        let (a0, b0) = (a.clone(), b.clone());
        let r1 = cross_play(&a, &b, &env, 6, 11).unwrap();
        let r2 = cross_play(&a, &b, &env, 6, 11).unwrap();
        assert_eq!(r1, r2);
        assert_eq!((a, b), (a0, b0));
    }

    #[test]
    fn incompatible_checkpoint_rejected() {
        let env = small_env();
        let a = untrained(Algorithm::Mfq, 0, &env);
        let mut wider = env.clone();
        wider.obs_radius = 3;
        assert!(matches!(cross_play(&a, &a, &wider, 2, 0), Err(Error::Incompatible(_))));
    }

    #[test]
    fn single_scale_sweep_is_cross_play() {
        let env = small_env();
        let a = untrained(Algorithm::Cmfq, 4, &env);
        let b = untrained(Algorithm::Mfq, 5, &env);
        let sweep = scalability_sweep(&[&a], &b, &env, &[3], 4, 9).unwrap();
        assert_eq!(sweep, vec![cross_play(&a, &b, &env, 4, 9).unwrap()]);
    }

    #[test]
    fn slope_of_a_line() {
        let mk = |scale, wins| MatchupResult {
            algorithm_a: "a".into(),
            algorithm_b: "b".into(),
            scale,
            games: 10,
            wins,
            losses: 10 - wins,
            draws: 0,
            mean_reward_a: 0.0,
            mean_reward_b: 0.0,
        };
        let s = win_rate_slope(&[mk(10, 8), mk(20, 6), mk(30, 4)]).unwrap();
        assert!((s + 0.02).abs() < 1e-12);
        assert_eq!(win_rate_slope(&[mk(10, 8)]), None);
    }

    #[test]
    fn predator_prey_is_zero_sum_at_every_scale() {
        let mut env = EnvConfig::predator_prey(2);
        env.width = 10;
        env.height = 10;
        env.obs_radius = 2;
        env.max_steps = 20;
        let cfg = TrainerConfig {
            algorithm: Algorithm::Mfq,
            episodes: 0,
            hidden: vec![8],
            ..TrainerConfig::default()
        };
        let ck = self_play_train(&env, &cfg).unwrap().checkpoint;
        let rows = predator_prey_eval(&ck, &ck, &env, &[1, 2], 3, 5).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].predators, 4);
        assert!(rows.iter().all(|r| r.zero_sum_violations == 0));
        let mut buf = Vec::new();
        write_csv(&mut buf, &rows).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("predator_algorithm,prey_algorithm,scale"));
    }
}
