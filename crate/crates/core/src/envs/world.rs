//! Grid state, spawning, step rules, observations and neighbourhoods.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::actions::{Action, ActionSet, IDLE};
use super::config::{EnvConfig, EnvKind, Role};
use crate::error::{Error, Result};

/// Number of spatial channels in an observation patch.
pub const OBS_CHANNELS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub id: usize,
    pub team: usize,
    pub x: i32,
    pub y: i32,
    pub hp: f32,
    pub alive: bool,
    pub last_action: usize,
}

/// Egocentric features: four `(2r+1)^2` planes (own team, opponents,
/// obstacles or off-map, HP fraction) followed by own HP fraction, normalised
/// position and a one-hot of the agent's last action.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub features: Vec<f32>,
}

impl Observation {
    pub fn as_slice(&self) -> &[f32] {
        &self.features
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Neighbor {
    pub id: usize,
    pub last_action: usize,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub rewards: Vec<f32>,
    /// True for agents that died this step, or for everyone still alive when
    /// the episode terminated by elimination.
    pub dones: Vec<bool>,
    /// Kills credited to each team this step.
    pub kills: [usize; 2],
    /// (prey, adjacent predator) pairs that scored this step.
    pub surround_pairs: usize,
    /// Sum of surround rewards paid to predators this step.
    pub surround_reward: f32,
    /// Sum of be-surrounded penalties paid by prey this step.
    pub be_surrounded_penalty: f32,
    pub episode_over: bool,
    /// The episode ended on the step limit rather than by elimination.
    pub truncated: bool,
    pub observations: Vec<Observation>,
}

#[derive(Debug, Clone)]
pub struct GridWorld {
    config: EnvConfig,
    actions: ActionSet,
    agents: Vec<AgentState>,
    /// `agent id + 1` per cell, 0 when empty.
    occupancy: Vec<u32>,
    obstacles: Vec<bool>,
    t: usize,
    over: bool,
}

/// Builds a fresh world from `config` and returns it with every agent's
/// initial observation.
pub fn reset(config: &EnvConfig) -> Result<(GridWorld, Vec<Observation>)> {
    let world = GridWorld::new(config)?;
    let obs = world.observe_all();
    Ok((world, obs))
}

impl GridWorld {
    pub fn new(config: &EnvConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (w, h) = (config.width, config.height);
        let cells = w * h;
        let mut obstacles = vec![false; cells];
        let n_obstacles = (cells as f64 * config.obstacle_density).round() as usize;
        for c in sample(&mut rng, cells, n_obstacles) {
            obstacles[c] = true;
        }

        let mut world = Self {
            config: config.clone(),
            actions: ActionSet::new(config.attack_range),
            agents: Vec::with_capacity(config.n_agents()),
            occupancy: vec![0; cells],
            obstacles,
            t: 0,
            over: false,
        };

        for team in 0..2 {
            let region = world.spawn_region(team);
            let free: Vec<usize> = region
                .into_iter()
                .filter(|&c| !world.obstacles[c] && world.occupancy[c] == 0)
                .collect();
            let n = config.team_sizes[team];
            if free.len() < n {
                return Err(Error::config(
                    "team_sizes",
                    format!("team {team} needs {n} spawn cells but only {} are free", free.len()),
                ));
            }
            let mut picks: Vec<usize> = sample(&mut rng, free.len(), n).into_iter().map(|i| free[i]).collect();
            picks.sort_unstable();
            for cell in picks {
                let id = world.agents.len();
                world.occupancy[cell] = id as u32 + 1;
                world.agents.push(AgentState {
                    id,
                    team,
                    x: (cell % w) as i32,
                    y: (cell / w) as i32,
                    hp: config.initial_hp,
                    alive: true,
                    last_action: IDLE,
                });
            }
        }
        Ok(world)
    }

    /// Battle teams start in mirrored bands either side of a two-column gap;
    /// predator-prey agents start anywhere.
    fn spawn_region(&self, team: usize) -> Vec<usize> {
        let (w, h) = (self.config.width, self.config.height);
        let cols: Vec<usize> = match self.config.kind {
            EnvKind::PredatorPrey => (0..w).collect(),
            EnvKind::Battle => {
                let mid = w / 2;
                let band = (w / 4).max(1);
                if team == 0 {
                    (mid.saturating_sub(1 + band)..mid.saturating_sub(1)).collect()
                } else {
                    (mid + 1..(mid + 1 + band).min(w)).collect()
                }
            }
        };
        let mut cells = Vec::with_capacity(cols.len() * h);
        for y in 0..h {
            for &x in &cols {
                cells.push(y * w + x);
            }
        }
        cells
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn action_set(&self) -> &ActionSet {
        &self.actions
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn step_count(&self) -> usize {
        self.t
    }

    pub fn is_over(&self) -> bool {
        self.over
    }

    pub fn role_of(&self, id: usize) -> Role {
        self.config.kind.role_of_team(self.agents[id].team)
    }

    pub fn n_actions(&self, role: Role) -> usize {
        self.actions.n_actions(role)
    }

    /// Length of the merged-action simplex vector.
    pub fn merged_len(&self) -> usize {
        self.actions.len()
    }

    pub fn obs_len(&self, role: Role) -> usize {
        obs_len(&self.config, role)
    }

    pub fn live_count(&self, team: usize) -> usize {
        self.agents.iter().filter(|a| a.alive && a.team == team).count()
    }

    pub fn is_obstacle(&self, x: i32, y: i32) -> bool {
        self.cell(x, y).is_some_and(|c| self.obstacles[c])
    }

    pub(crate) fn obstacle_cells(&self) -> impl Iterator<Item = (i32, i32)> + '_ {
        let w = self.config.width;
        self.obstacles
            .iter()
            .enumerate()
            .filter(|(_, &o)| o)
            .map(move |(c, _)| ((c % w) as i32, (c / w) as i32))
    }

    #[inline]
    fn cell(&self, x: i32, y: i32) -> Option<usize> {
        let (w, h) = (self.config.width as i32, self.config.height as i32);
        (x >= 0 && y >= 0 && x < w && y < h).then(|| (y * w + x) as usize)
    }

    #[inline]
    fn occupant(&self, x: i32, y: i32) -> Option<usize> {
        self.cell(x, y)
            .and_then(|c| self.occupancy[c].checked_sub(1))
            .map(|id| id as usize)
    }

    fn is_free(&self, x: i32, y: i32) -> bool {
        self.cell(x, y)
            .is_some_and(|c| !self.obstacles[c] && self.occupancy[c] == 0)
    }

    /// Advances one step. `actions` holds one entry per agent id; entries of
    /// dead agents are ignored.
    pub fn step(&mut self, actions: &[usize]) -> Result<StepOutcome> {
        if self.over {
            return Err(Error::config("step", "episode already finished"));
        }
        if actions.len() != self.agents.len() {
            return Err(Error::Shape {
                context: "joint action",
                expected: self.agents.len(),
                actual: actions.len(),
            });
        }
        for agent in self.agents.iter().filter(|a| a.alive) {
            let n = self.actions.n_actions(self.config.kind.role_of_team(agent.team));
            if actions[agent.id] >= n {
                return Err(Error::InvalidAction {
                    agent: agent.id,
                    action: actions[agent.id],
                    n_actions: n,
                });
            }
        }

        let rewards_table = self.config.rewards();
        let n = self.agents.len();
        let mut rewards = vec![0.0f32; n];
        let mut dones = vec![false; n];
        let mut kills = [0usize; 2];
        let alive_at_start: Vec<bool> = self.agents.iter().map(|a| a.alive).collect();
        let decoded: Vec<Action> = actions
            .iter()
            .map(|&a| self.actions.decode(a).unwrap_or(Action::Idle))
            .collect();

        for (id, agent) in self.agents.iter_mut().enumerate() {
            if !agent.alive {
                continue;
            }
            agent.last_action = actions[id];
            match decoded[id] {
                Action::Idle => {}
                Action::Move { .. } => rewards[id] += rewards_table.movement,
                Action::Attack { .. } => rewards[id] += rewards_table.attack,
            }
        }

        // Attacks resolve in id order against HP as it evolves within the
        // step; the hit that takes a target to zero earns the kill.
        for id in 0..n {
            if !alive_at_start[id] {
                continue;
            }
            let Action::Attack { dx, dy } = decoded[id] else {
                continue;
            };
            let damage = self.config.attack_damage;
            if damage <= 0.0 {
                continue;
            }
            let (x, y, team) = (self.agents[id].x, self.agents[id].y, self.agents[id].team);
            let Some(victim) = self.occupant(x + dx, y + dy) else {
                continue;
            };
            let target = &mut self.agents[victim];
            if target.team == team || target.hp <= 0.0 {
                continue;
            }
            target.hp = (target.hp - damage).max(0.0);
            if target.hp <= 0.0 {
                rewards[id] += rewards_table.kill;
                rewards[victim] += rewards_table.dead;
                dones[victim] = true;
                kills[team] += 1;
            }
        }
        for id in 0..n {
            if self.agents[id].alive && self.agents[id].hp <= 0.0 {
                self.agents[id].alive = false;
                let c = self.cell(self.agents[id].x, self.agents[id].y).expect("agent on map");
                self.occupancy[c] = 0;
            }
        }

        // Moves resolve in id order, so lower ids win contested cells.
        let prey_double = self.t % 2 == 1;
        for id in 0..n {
            if !self.agents[id].alive {
                continue;
            }
            let Action::Move { dx, dy } = decoded[id] else {
                continue;
            };
            let range = if prey_double && self.role_of(id) == Role::Prey { 2 } else { 1 };
            for _ in 0..range {
                let (x, y) = (self.agents[id].x, self.agents[id].y);
                let (nx, ny) = (x + dx, y + dy);
                if !self.is_free(nx, ny) {
                    break;
                }
                let from = self.cell(x, y).expect("agent on map");
                let to = self.cell(nx, ny).expect("checked free");
                self.occupancy[from] = 0;
                self.occupancy[to] = id as u32 + 1;
                self.agents[id].x = nx;
                self.agents[id].y = ny;
            }
        }

        let mut surround_pairs = 0;
        let mut surround_reward = 0.0f32;
        let mut be_surrounded_penalty = 0.0f32;
        if self.config.kind == EnvKind::PredatorPrey {
            for prey in 0..n {
                if !self.agents[prey].alive || self.role_of(prey) != Role::Prey {
                    continue;
                }
                let hunters = self.surrounding_predators(prey);
                for p in hunters {
                    rewards[p] += rewards_table.surround;
                    rewards[prey] += rewards_table.be_surrounded;
                    surround_reward += rewards_table.surround;
                    be_surrounded_penalty += rewards_table.be_surrounded;
                    surround_pairs += 1;
                }
            }
        }

        self.t += 1;
        let eliminated = self.config.kind == EnvKind::Battle
            && (self.live_count(0) == 0 || self.live_count(1) == 0);
        let truncated = !eliminated && self.t >= self.config.max_steps;
        self.over = eliminated || truncated;
        if eliminated {
            for (id, agent) in self.agents.iter().enumerate() {
                if agent.alive {
                    dones[id] = true;
                }
            }
        }

        Ok(StepOutcome {
            rewards,
            dones,
            kills,
            surround_pairs,
            surround_reward,
            be_surrounded_penalty,
            episode_over: self.over,
            truncated,
            observations: self.observe_all(),
        })
    }

    /// Predators orthogonally adjacent to `prey`, if it counts as surrounded:
    /// two or more predators, or one predator plus a wall, obstacle or map
    /// edge on another side.
    pub fn surrounding_predators(&self, prey: usize) -> Vec<usize> {
        let (x, y) = (self.agents[prey].x, self.agents[prey].y);
        let mut hunters = Vec::new();
        let mut walls = 0;
        for (dx, dy) in [(0, -1), (1, 0), (0, 1), (-1, 0)] {
            let (nx, ny) = (x + dx, y + dy);
            match self.cell(nx, ny) {
                None => walls += 1,
                Some(c) if self.obstacles[c] => walls += 1,
                Some(_) => {
                    if let Some(o) = self.occupant(nx, ny) {
                        if self.role_of(o) == Role::Predator {
                            hunters.push(o);
                        }
                    }
                }
            }
        }
        if hunters.len() >= 2 || (hunters.len() == 1 && walls >= 1) {
            hunters.sort_unstable();
            hunters
        } else {
            Vec::new()
        }
    }

    /// Live agents within the observation radius of `id`, excluding itself,
    /// ordered by id.
    pub fn neighbors(&self, id: usize) -> Vec<Neighbor> {
        let mut out = Vec::new();
        self.neighbors_into(id, &mut out);
        out
    }

    pub fn neighbors_into(&self, id: usize, out: &mut Vec<Neighbor>) {
        out.clear();
        let me = &self.agents[id];
        let r = self.config.obs_radius as i32;
        for y in me.y - r..=me.y + r {
            for x in me.x - r..=me.x + r {
                if let Some(o) = self.occupant(x, y) {
                    if o != id {
                        out.push(Neighbor {
                            id: o,
                            last_action: self.agents[o].last_action,
                        });
                    }
                }
            }
        }
        out.sort_unstable_by_key(|n| n.id);
    }

    pub fn observe_all(&self) -> Vec<Observation> {
        (0..self.agents.len()).map(|id| self.observe(id)).collect()
    }

    pub fn observe(&self, id: usize) -> Observation {
        let me = &self.agents[id];
        let role = self.role_of(id);
        let r = self.config.obs_radius as i32;
        let side = (2 * r + 1) as usize;
        let plane = side * side;
        let mut f = vec![0.0f32; obs_len(&self.config, role)];
        let hp0 = self.config.initial_hp;
        for (py, y) in (me.y - r..=me.y + r).enumerate() {
            for (px, x) in (me.x - r..=me.x + r).enumerate() {
                let p = py * side + px;
                match self.cell(x, y) {
                    None => f[2 * plane + p] = 1.0,
                    Some(c) if self.obstacles[c] => f[2 * plane + p] = 1.0,
                    Some(_) => {
                        if let Some(o) = self.occupant(x, y) {
                            let other = &self.agents[o];
                            let ch = if other.team == me.team { 0 } else { 1 };
                            f[ch * plane + p] = 1.0;
                            f[3 * plane + p] = (other.hp / hp0).clamp(0.0, 1.0);
                        }
                    }
                }
            }
        }
        let s = OBS_CHANNELS * plane;
        f[s] = (me.hp / hp0).clamp(0.0, 1.0);
        f[s + 1] = me.x as f32 / (self.config.width - 1) as f32;
        f[s + 2] = me.y as f32 / (self.config.height - 1) as f32;
        if me.last_action < self.actions.n_actions(role) {
            f[s + 3 + me.last_action] = 1.0;
        }
        Observation { features: f }
    }
}

/// Observation length for `role`; depends on the radius and action set but
/// not on the number of agents.
pub fn obs_len(config: &EnvConfig, role: Role) -> usize {
    let side = 2 * config.obs_radius + 1;
    OBS_CHANNELS * side * side + 3 + ActionSet::new(config.attack_range).n_actions(role)
}
