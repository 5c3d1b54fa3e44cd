use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    /// Two symmetric teams fight until one is eliminated.
    #[default]
    Battle,
    /// Team 0 are predators, team 1 prey; nobody dies.
    PredatorPrey,
}

/// Which policy a team's agents run. Battle teams share one role so a single
/// network can control both sides in self-play.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Battle,
    Predator,
    Prey,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Battle => "battle",
            Role::Predator => "predator",
            Role::Prey => "prey",
        }
    }
}

impl EnvKind {
    pub fn role_of_team(self, team: usize) -> Role {
        match (self, team) {
            (EnvKind::Battle, _) => Role::Battle,
            (EnvKind::PredatorPrey, 0) => Role::Predator,
            (EnvKind::PredatorPrey, _) => Role::Prey,
        }
    }

    /// Distinct roles in team order.
    pub fn roles(self) -> &'static [Role] {
        match self {
            EnvKind::Battle => &[Role::Battle],
            EnvKind::PredatorPrey => &[Role::Predator, Role::Prey],
        }
    }
}

/// Per-event rewards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardTable {
    pub attack: f32,
    pub movement: f32,
    pub dead: f32,
    pub kill: f32,
    pub surround: f32,
    pub be_surrounded: f32,
}

impl RewardTable {
    pub const BATTLE: RewardTable = RewardTable {
        attack: -0.1,
        movement: -0.005,
        dead: -0.1,
        kill: 5.0,
        surround: 0.0,
        be_surrounded: 0.0,
    };

    pub const PREDATOR_PREY: RewardTable = RewardTable {
        attack: -0.2,
        movement: 0.0,
        dead: 0.0,
        kill: 0.0,
        surround: 1.0,
        be_surrounded: -1.0,
    };
}

/// Gridworld configuration. Reward fields left unset take the defaults of
/// the chosen `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub kind: EnvKind,
    pub width: usize,
    pub height: usize,
    /// `[team 0, team 1]`; for predator-prey `[predators, prey]`.
    pub team_sizes: [usize; 2],
    /// Chebyshev radius of the egocentric view and of the neighbourhood.
    pub obs_radius: usize,
    /// Chebyshev radius of the attack ring.
    pub attack_range: usize,
    pub initial_hp: f32,
    pub attack_damage: f32,
    pub max_steps: usize,
    pub obstacle_density: f64,
    pub seed: u64,
    pub reward_attack: Option<f32>,
    pub reward_move: Option<f32>,
    pub reward_dead: Option<f32>,
    pub reward_kill: Option<f32>,
    pub reward_surround: Option<f32>,
    pub reward_be_surrounded: Option<f32>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self::battle(16)
    }
}

impl EnvConfig {
    /// `n` vs `n` battle on a map whose area grows with the population
    /// (24x24 at 16 per side).
    pub fn battle(n: usize) -> Self {
        let side = scaled_side(24, 32, 2 * n);
        Self {
            kind: EnvKind::Battle,
            width: side,
            height: side,
            team_sizes: [n, n],
            obs_radius: 6,
            attack_range: 1,
            initial_hp: 10.0,
            attack_damage: 2.0,
            max_steps: 300,
            obstacle_density: 0.0,
            seed: 0,
            reward_attack: None,
            reward_move: None,
            reward_dead: None,
            reward_kill: None,
            reward_surround: None,
            reward_be_surrounded: None,
        }
    }

    /// Predator-prey with twice as many prey as predators.
    pub fn predator_prey(predators: usize) -> Self {
        let side = scaled_side(20, 30, 3 * predators);
        Self {
            kind: EnvKind::PredatorPrey,
            width: side,
            height: side,
            team_sizes: [predators, 2 * predators],
            attack_damage: 0.0,
            obstacle_density: 0.03,
            ..Self::battle(1)
        }
    }

    pub fn n_agents(&self) -> usize {
        self.team_sizes[0] + self.team_sizes[1]
    }

    pub fn rewards(&self) -> RewardTable {
        let base = match self.kind {
            EnvKind::Battle => RewardTable::BATTLE,
            EnvKind::PredatorPrey => RewardTable::PREDATOR_PREY,
        };
        RewardTable {
            attack: self.reward_attack.unwrap_or(base.attack),
            movement: self.reward_move.unwrap_or(base.movement),
            dead: self.reward_dead.unwrap_or(base.dead),
            kill: self.reward_kill.unwrap_or(base.kill),
            surround: self.reward_surround.unwrap_or(base.surround),
            be_surrounded: self.reward_be_surrounded.unwrap_or(base.be_surrounded),
        }
    }

    /// Same template with new team sizes; the map side grows with the square
    /// root of the population so density stays roughly constant.
    pub fn with_team_sizes(&self, team_sizes: [usize; 2]) -> Self {
        let old = self.n_agents().max(1) as f64;
        let new = (team_sizes[0] + team_sizes[1]) as f64;
        let factor = (new / old).sqrt();
        let grow = |s: usize| ((s as f64 * factor).round() as usize).max(s.min(4)).max(2);
        Self {
            width: grow(self.width),
            height: grow(self.height),
            team_sizes,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 2 || self.height < 2 {
            return Err(Error::config("width/height", "map must be at least 2x2"));
        }
        if self.team_sizes.contains(&0) {
            return Err(Error::config("team_sizes", "each team needs at least one agent"));
        }
        if self.attack_range == 0 {
            return Err(Error::config("attack_range", "must be >= 1"));
        }
        if self.obs_radius < self.attack_range {
            return Err(Error::config(
                "obs_radius",
                format!("{} is smaller than attack_range {}", self.obs_radius, self.attack_range),
            ));
        }
        if !(self.initial_hp.is_finite() && self.initial_hp > 0.0) {
            return Err(Error::config("initial_hp", "must be finite and > 0"));
        }
        if !(self.attack_damage.is_finite() && self.attack_damage >= 0.0) {
            return Err(Error::config("attack_damage", "must be finite and >= 0"));
        }
        if self.max_steps == 0 {
            return Err(Error::config("max_steps", "must be >= 1"));
        }
        if !(0.0..0.5).contains(&self.obstacle_density) {
            return Err(Error::config("obstacle_density", "must lie in [0, 0.5)"));
        }
        let r = self.rewards();
        for (name, v) in [
            ("reward_attack", r.attack),
            ("reward_move", r.movement),
            ("reward_dead", r.dead),
            ("reward_kill", r.kill),
            ("reward_surround", r.surround),
            ("reward_be_surrounded", r.be_surrounded),
        ] {
            if !v.is_finite() {
                return Err(Error::config(name, "reward must be finite"));
            }
        }
        let cells = self.width * self.height;
        let obstacles = (cells as f64 * self.obstacle_density).round() as usize;
        if self.n_agents() + obstacles > cells {
            return Err(Error::config(
                "team_sizes",
                format!("{} agents and {obstacles} obstacles do not fit on {cells} cells", self.n_agents()),
            ));
        }
        Ok(())
    }
}

fn scaled_side(base_side: usize, base_agents: usize, agents: usize) -> usize {
    let s = base_side as f64 * (agents as f64 / base_agents as f64).sqrt();
    (s.round() as usize).max(6)
}
