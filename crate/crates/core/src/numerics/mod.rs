//! Dense linear algebra, MLP Q-networks with hand-written backpropagation,
//! Adam, and target-network bookkeeping.

pub mod adam;
pub mod checkpoint;
pub mod matrix;
pub mod network;

pub use adam::{optimizer_step, AdamConfig, OptimizerState};
pub use checkpoint::NetworkCheckpoint;
pub use matrix::{gemm, gemm_leading_block_t, DenseMatrix, Op};
pub use network::{sync_target, Activation, Dense, Gradients, InputSpec, QNetwork, TargetNetwork};
