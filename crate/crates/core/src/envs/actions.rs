use super::config::Role;

/// King-move directions, clockwise from north. `y` grows downwards.
pub const MOVE_DIRS: [(i32, i32); 8] = [
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Idle,
    Move { dx: i32, dy: i32 },
    Attack { dx: i32, dy: i32 },
}

/// Enumeration of discrete actions: index 0 is idle, 1..=8 are moves, the
/// rest are attack offsets within the attack ring in row-major order.
///
/// Every role indexes into this same enumeration; roles that cannot attack
/// simply use its move-only prefix. One-hot merged actions therefore always
/// have length [`ActionSet::len`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionSet {
    attacks: Vec<(i32, i32)>,
}

pub const IDLE: usize = 0;
pub const N_MOVE_ACTIONS: usize = 1 + MOVE_DIRS.len();

impl ActionSet {
    pub fn new(attack_range: usize) -> Self {
        let r = attack_range as i32;
        let mut attacks = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                if dx != 0 || dy != 0 {
                    attacks.push((dx, dy));
                }
            }
        }
        Self { attacks }
    }

    /// Size of the full enumeration, i.e. the merged-action length.
    pub fn len(&self) -> usize {
        N_MOVE_ACTIONS + self.attacks.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn n_actions(&self, role: Role) -> usize {
        match role {
            Role::Battle | Role::Predator => self.len(),
            Role::Prey => N_MOVE_ACTIONS,
        }
    }

    pub fn decode(&self, index: usize) -> Option<Action> {
        match index {
            IDLE => Some(Action::Idle),
            i if i < N_MOVE_ACTIONS => {
                let (dx, dy) = MOVE_DIRS[i - 1];
                Some(Action::Move { dx, dy })
            }
            i => self
                .attacks
                .get(i - N_MOVE_ACTIONS)
                .map(|&(dx, dy)| Action::Attack { dx, dy }),
        }
    }

    pub fn attack_index(&self, dx: i32, dy: i32) -> Option<usize> {
        self.attacks
            .iter()
            .position(|&o| o == (dx, dy))
            .map(|p| p + N_MOVE_ACTIONS)
    }

    pub fn move_index(dx: i32, dy: i32) -> Option<usize> {
        MOVE_DIRS.iter().position(|&d| d == (dx, dy)).map(|p| p + 1)
    }
}
