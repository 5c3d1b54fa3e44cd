//! Battle and predator-prey gridworlds.

pub mod actions;
pub mod config;
pub mod frame;
pub mod world;

pub use actions::{Action, ActionSet, IDLE, MOVE_DIRS, N_MOVE_ACTIONS};
pub use config::{EnvConfig, EnvKind, RewardTable, Role};
pub use frame::{read_frames, write_frame, Frame, FRAME_SCHEMA_VERSION};
pub use world::{obs_len, reset, AgentState, GridWorld, Neighbor, Observation, StepOutcome, OBS_CHANNELS};
