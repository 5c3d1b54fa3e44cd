use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{Checkpoint, CHECKPOINT_SCHEMA_VERSION};
use super::metrics::EpisodeMetrics;
use super::replay::{ReplayBuffer, Transition};
use super::{Controller, TrainerConfig};
use crate::envs::{obs_len, ActionSet, EnvConfig, EnvKind, GridWorld, Neighbor, Role, IDLE};
use crate::error::{Error, Result};
use crate::meanfield::sample_action;
use crate::numerics::{
    optimizer_step, AdamConfig, DenseMatrix, InputSpec, NetworkCheckpoint, OptimizerState, QNetwork, TargetNetwork,
};

// Independent random streams, so that variants which use different amounts
// of randomness in one place stay aligned everywhere else.
const STREAM_INIT: u64 = 0;
const STREAM_ACTIONS: u64 = 1;
const STREAM_REPLAY: u64 = 2;
const STREAM_WEIGHTS: u64 = 3;
const STREAM_ENV: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UpdateStatus {
    /// Not enough transitions yet; nothing changed.
    WarmingUp { have: usize, need: usize },
    Updated { loss: f64, synced: bool },
}

fn input_rows(batch: &[&Transition], next: bool) -> Result<DenseMatrix> {
    let first = batch.first().ok_or_else(|| Error::config("batch_size", "empty batch"))?;
    let cols = first.obs.len() + first.merged.len();
    let mut data = Vec::with_capacity(batch.len() * cols);
    for t in batch {
        data.extend_from_slice(if next { &t.next_obs } else { &t.obs });
        data.extend_from_slice(&t.merged);
    }
    DenseMatrix::from_vec(batch.len(), cols, data)
}

/// `y = r` for terminal transitions, else `r + γ max_a' Q_target(s', a', č)`
/// using the merged action stored with the transition.
pub fn td_target(batch: &[&Transition], target: &QNetwork, gamma: f64) -> Result<Vec<f32>> {
    let q_next = target.forward_batch(&input_rows(batch, true)?)?;
    Ok(batch
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if t.done {
                t.reward
            } else {
                let best = q_next.row(i).iter().copied().fold(f32::NEG_INFINITY, f32::max);
                (f64::from(t.reward) + gamma * f64::from(best)) as f32
            }
        })
        .collect())
}

/// One gradient step on the mean squared TD error of a sampled minibatch,
/// then target bookkeeping.
pub fn train_update<R: Rng + ?Sized>(
    net: &mut QNetwork,
    target: &mut TargetNetwork,
    buffer: &ReplayBuffer,
    optimizer: &mut OptimizerState,
    config: &TrainerConfig,
    rng: &mut R,
) -> Result<UpdateStatus> {
    let need = config.warmup();
    if buffer.len() < need {
        return Ok(UpdateStatus::WarmingUp {
            have: buffer.len(),
            need,
        });
    }
    let batch = buffer
        .sample(config.batch_size, rng)
        .expect("buffer holds at least one batch");
    let targets = td_target(&batch, target.network(), config.gamma)?;
    if targets.iter().any(|y| !y.is_finite()) {
        let max_target = targets.iter().map(|y| f64::from(y.abs())).fold(0.0, f64::max);
        return Err(Error::Divergence {
            batch: batch.len(),
            max_target,
            max_q: f64::NAN,
        });
    }
    let inputs = input_rows(&batch, false)?;
    let actions: Vec<usize> = batch.iter().map(|t| t.action).collect();
    let (grads, loss) = net.backward(&inputs, &actions, &targets)?;
    optimizer_step(net, optimizer, &grads)?;
    let synced = target.record_update(net, config.target_sync)?;
    Ok(UpdateStatus::Updated { loss, synced })
}

/// Online network, target, optimizer and replay for one role.
#[derive(Debug, Clone)]
pub struct Learner {
    pub net: QNetwork,
    pub target: TargetNetwork,
    pub optimizer: OptimizerState,
    pub buffer: ReplayBuffer,
    pub updates: u64,
}

impl Learner {
    fn snapshot(&self) -> NetworkCheckpoint {
        NetworkCheckpoint::new(self.net.clone(), self.target.clone(), self.optimizer.clone(), self.updates)
    }
}

/// Per-update losses and every sampled action, in order. Only recorded when
/// enabled with [`Trainer::enable_trace`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    pub losses: Vec<(Role, f64)>,
    pub actions: Vec<usize>,
    /// Largest `|č - ā|` coordinate seen in any decision.
    pub max_merged_gap: f64,
}

/// Self-play training: every team's agents act with their role's shared
/// network, and every live agent's transition lands in that role's buffer.
pub struct Trainer {
    env: EnvConfig,
    config: TrainerConfig,
    learners: BTreeMap<Role, Learner>,
    action_rng: ChaCha8Rng,
    replay_rng: ChaCha8Rng,
    weight_rng: ChaCha8Rng,
    env_rng: ChaCha8Rng,
    episode: usize,
    trace: Option<TrainTrace>,
}

pub fn role_spec(env: &EnvConfig, role: Role) -> InputSpec {
    let actions = ActionSet::new(env.attack_range);
    InputSpec {
        obs_len: obs_len(env, role),
        merged_len: actions.len(),
        n_actions: actions.n_actions(role),
    }
}

impl Trainer {
    pub fn new(env: &EnvConfig, config: &TrainerConfig) -> Result<Self> {
        env.validate()?;
        config.validate()?;
        let mut init = stream(config.seed, STREAM_INIT);
        let adam = AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        };
        let mut learners = BTreeMap::new();
        for &role in env.kind.roles() {
            let net = QNetwork::new(role_spec(env, role), &config.hidden, Default::default(), &mut init)?;
            learners.insert(
                role,
                Learner {
                    target: TargetNetwork::new(&net),
                    optimizer: OptimizerState::new(&net, adam),
                    buffer: ReplayBuffer::new(config.buffer_capacity)?,
                    net,
                    updates: 0,
                },
            );
        }
        Ok(Self {
            env: env.clone(),
            config: config.clone(),
            learners,
            action_rng: stream(config.seed, STREAM_ACTIONS),
            replay_rng: stream(config.seed, STREAM_REPLAY),
            weight_rng: stream(config.seed, STREAM_WEIGHTS),
            env_rng: stream(config.seed, STREAM_ENV),
            episode: 0,
            trace: None,
        })
    }

    pub fn enable_trace(&mut self) {
        self.trace = Some(TrainTrace::default());
    }

    pub fn trace(&self) -> Option<&TrainTrace> {
        self.trace.as_ref()
    }

    pub fn episode(&self) -> usize {
        self.episode
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.config
    }

    pub fn learner(&self, role: Role) -> Option<&Learner> {
        self.learners.get(&role)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            algorithm: self.config.algorithm,
            params: self.config.causal_params(),
            env_kind: self.env.kind,
            episodes_trained: self.episode,
            roles: self.learners.iter().map(|(&r, l)| (r, l.snapshot())).collect(),
        }
    }

    /// Plays one episode with exploration, training after every
    /// `train_every` environment steps. Returns one metrics row per team.
    pub fn run_episode(&mut self) -> Result<Vec<EpisodeMetrics>> {
        let started = Instant::now();
        let env_cfg = EnvConfig {
            seed: self.env_rng.gen(),
            ..self.env.clone()
        };
        let mut world = GridWorld::new(&env_cfg)?;
        let mut obs = world.observe_all();
        let explore = self.config.explore_at(self.episode);
        let params = self.config.causal_params();
        let n = world.agents().len();
        let merged_len = world.merged_len();

        let mut team_reward = [0.0f64; 2];
        let mut team_events = [0usize; 2];
        let mut losses: BTreeMap<Role, (f64, usize)> = BTreeMap::new();
        let mut neighbors: Vec<Neighbor> = Vec::new();
        let mut ids = Vec::new();
        let mut acts = Vec::new();
        let mut steps = 0;

        while !world.is_over() {
            let mut actions = vec![IDLE; n];
            let mut merged: Vec<Option<Vec<f32>>> = vec![None; n];
            for id in 0..n {
                if !world.agents()[id].alive {
                    continue;
                }
                let role = world.role_of(id);
                let controller = Controller {
                    algorithm: self.config.algorithm,
                    params,
                    net: &self.learners[&role].net,
                };
                world.neighbors_into(id, &mut neighbors);
                ids.clear();
                acts.clear();
                ids.extend(neighbors.iter().map(|nb| nb.id));
                acts.extend(neighbors.iter().map(|nb| nb.last_action));
                let decision = controller.decide(&obs[id].features, &ids, &acts, &mut self.weight_rng)?;
                actions[id] = sample_action(&decision.policy, explore, &mut self.action_rng);
                if let Some(trace) = &mut self.trace {
                    trace.actions.push(actions[id]);
                    let mean = crate::meanfield::mean_action(&acts, merged_len)?;
                    trace.max_merged_gap = trace.max_merged_gap.max(decision.merged.max_abs_diff(&mean));
                }
                merged[id] = Some(decision.merged.as_slice().iter().map(|&v| v as f32).collect());
            }

            let out = world.step(&actions)?;
            steps += 1;
            for (id, m) in merged.into_iter().enumerate() {
                let Some(m) = m else { continue };
                let team = world.agents()[id].team;
                team_reward[team] += f64::from(out.rewards[id]);
                let role = world.role_of(id);
                let transition = Transition {
                    obs: std::mem::take(&mut obs[id].features),
                    action: actions[id],
                    reward: out.rewards[id],
                    next_obs: out.observations[id].features.clone(),
                    merged: m,
                    done: out.dones[id],
                };
                self.learners.get_mut(&role).expect("role learner").buffer.push(transition);
            }
            match self.env.kind {
                EnvKind::Battle => {
                    team_events[0] += out.kills[0];
                    team_events[1] += out.kills[1];
                }
                EnvKind::PredatorPrey => {
                    team_events[0] += out.surround_pairs;
                    team_events[1] += out.surround_pairs;
                }
            }
            obs = out.observations;

            if steps % self.config.train_every == 0 {
                for (&role, learner) in self.learners.iter_mut() {
                    let status = train_update(
                        &mut learner.net,
                        &mut learner.target,
                        &learner.buffer,
                        &mut learner.optimizer,
                        &self.config,
                        &mut self.replay_rng,
                    )?;
                    if let UpdateStatus::Updated { loss, .. } = status {
                        learner.updates += 1;
                        let e = losses.entry(role).or_insert((0.0, 0));
                        e.0 += loss;
                        e.1 += 1;
                        if let Some(trace) = &mut self.trace {
                            trace.losses.push((role, loss));
                        }
                    }
                }
            }
        }

        let wall_ms = started.elapsed().as_millis() as u64;
        let rows = (0..2)
            .map(|team| {
                let role = self.env.kind.role_of_team(team);
                EpisodeMetrics {
                    episode: self.episode,
                    steps,
                    team,
                    total_reward: team_reward[team],
                    mean_loss: losses.get(&role).map(|(s, c)| s / *c as f64),
                    kills_or_surrounds: team_events[team],
                    wall_ms,
                }
            })
            .collect();
        self.episode += 1;
        Ok(rows)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<EpisodeMetrics>,
}

/// Runs `config.episodes` episodes of self-play and returns the final
/// checkpoint with the full metrics series.
pub fn self_play_train(env: &EnvConfig, config: &TrainerConfig) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(env, config)?;
    let mut metrics = Vec::with_capacity(2 * config.episodes);
    for _ in 0..config.episodes {
        metrics.extend(trainer.run_episode()?);
    }
    Ok(TrainOutcome {
        checkpoint: trainer.checkpoint(),
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Activation;
    use crate::training::Algorithm;

    fn transition(reward: f32, done: bool, next: f32) -> Transition {
        Transition {
            obs: vec![0.0],
            action: 0,
            reward,
            next_obs: vec![next],
            merged: vec![1.0],
            done,
        }
    }

    /// Q(s, a) = s * (a + 1), linear and hand-checkable.
    fn linear_net() -> QNetwork {
        let spec = InputSpec {
            obs_len: 1,
            merged_len: 1,
            n_actions: 2,
        };
        let mut layer = crate::numerics::Dense::zeros(2, 2);
        layer.weights.set(0, 0, 1.0);
        layer.weights.set(1, 0, 2.0);
        QNetwork::from_layers(spec, Activation::Relu, vec![layer]).unwrap()
    }

    #[test]
    fn td_target_examples() {
        let net = linear_net();
        let batch = [transition(4.9, true, 100.0), transition(1.0, false, 1.0), transition(-0.5, false, 3.0)];
        let refs: Vec<&Transition> = batch.iter().collect();
        let y = td_target(&refs, &net, 0.95).unwrap();
        assert_eq!(y[0], 4.9);
        assert!((y[1] - 2.9).abs() < 1e-6);
        assert!((y[2] - (-0.5 + 0.95 * 6.0)).abs() < 1e-5);
        assert_eq!(td_target(&refs, &net, 0.0).unwrap(), vec![4.9, 1.0, -0.5]);
    }

    #[test]
    fn warming_up_is_a_no_op() {
        let mut net = linear_net();
        let before = net.clone();
        let mut target = TargetNetwork::new(&net);
        let mut opt = OptimizerState::new(&net, AdamConfig::default());
        let mut buf = ReplayBuffer::new(16).unwrap();
        buf.push(transition(1.0, true, 0.0));
        let cfg = TrainerConfig {
            batch_size: 4,
            ..TrainerConfig::default()
        };
        let status = train_update(&mut net, &mut target, &buf, &mut opt, &cfg, &mut stream(0, 0)).unwrap();
        assert_eq!(status, UpdateStatus::WarmingUp { have: 1, need: 4 });
        assert!(net.same_params(&before));
        assert_eq!(opt.step(), 0);
    }

    #[test]
    fn exact_targets_give_zero_loss_and_no_change() {
        // terminal transitions with reward equal to the current Q of action 0
        let mut net = linear_net();
        let before = net.clone();
        let mut target = TargetNetwork::new(&net);
        let mut opt = OptimizerState::new(&net, AdamConfig::default());
        let mut buf = ReplayBuffer::new(8).unwrap();
        for s in [0.5f32, 1.5, 2.0, 3.0] {
            buf.push(Transition {
                obs: vec![s],
                action: 0,
                reward: s,
                next_obs: vec![0.0],
                merged: vec![1.0],
                done: true,
            });
        }
        let cfg = TrainerConfig {
            batch_size: 4,
            ..TrainerConfig::default()
        };
        let status = train_update(&mut net, &mut target, &buf, &mut opt, &cfg, &mut stream(0, 0)).unwrap();
        assert_eq!(status, UpdateStatus::Updated { loss: 0.0, synced: false });
        assert!(net.same_params(&before));
    }

    fn tiny(algorithm: Algorithm) -> (EnvConfig, TrainerConfig) {
        let mut env = EnvConfig::battle(2);
        env.width = 8;
        env.height = 8;
        env.obs_radius = 2;
        env.max_steps = 15;
        let cfg = TrainerConfig {
            algorithm,
            episodes: 3,
            batch_size: 16,
            buffer_capacity: 256,
            hidden: vec![8],
            lr: 1e-3,
            target_sync: 5,
            ..TrainerConfig::default()
        };
        (env, cfg)
    }

    #[test]
    fn zero_episodes_returns_initialisation() {
        let (env, mut cfg) = tiny(Algorithm::Cmfq);
        cfg.episodes = 0;
        let out = self_play_train(&env, &cfg).unwrap();
        let fresh = Trainer::new(&env, &cfg).unwrap().checkpoint();
        assert_eq!(out.checkpoint, fresh);
        assert!(out.metrics.is_empty());
    }

    #[test]
    fn training_is_reproducible_under_seed() {
        for alg in [Algorithm::Iql, Algorithm::Mfq, Algorithm::Cmfq, Algorithm::Random] {
            let (env, cfg) = tiny(alg);
            let a = self_play_train(&env, &cfg).unwrap();
            let b = self_play_train(&env, &cfg).unwrap();
            assert_eq!(a.checkpoint, b.checkpoint, "{alg}");
            assert_eq!(a.metrics.len(), 6);
            assert!(a.metrics.iter().zip(&b.metrics).all(|(x, y)| x.same_outcome(y)));
            assert!(a.metrics.iter().any(|m| m.mean_loss.is_some()), "{alg} never trained");
        }
    }

    #[test]
    fn predator_prey_trains_two_roles() {
        let mut env = EnvConfig::predator_prey(2);
        env.width = 9;
        env.height = 9;
        env.obs_radius = 2;
        env.max_steps = 12;
        let (_, cfg) = tiny(Algorithm::Mfq);
        let out = self_play_train(&env, &cfg).unwrap();
        assert_eq!(out.checkpoint.roles.len(), 2);
        out.checkpoint.check_compatible(&env).unwrap();
        for pair in out.metrics.chunks(2) {
            assert_eq!(pair[0].kills_or_surrounds, pair[1].kills_or_surrounds);
        }
    }

    #[test]
    fn checkpoint_round_trips_through_json() {
        let (env, cfg) = tiny(Algorithm::Cmfq);
        let ck = self_play_train(&env, &cfg).unwrap().checkpoint;
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back, ck);
        let mut other = env.clone();
        other.obs_radius = 3;
        assert!(matches!(ck.check_compatible(&other), Err(Error::Incompatible(_))));
    }
}
