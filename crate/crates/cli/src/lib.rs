//! Library half of the `epd` command: configuration, checkpoints, the
//! train/eval pipeline and ablation sweeps.

pub mod ablation;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod pipeline;
