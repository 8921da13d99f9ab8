//! Training and analysis toolkit for spiking neural network controllers.
//!
//! - [`networks`]: LIF dynamics, the spiking actor and dense networks with BPTT
//! - [`surrogate`]: slope schedules and per-layer gradient diagnostics
//! - [`env`]: 100 Hz quadrotor hover task with a curriculum reward
//! - [`replay`]: episode storage sliced into warm-up-masked sequences
//! - [`trainer`]: BC, TD3, TD3BC and jump-started TD3BC
//! - [`metrics`]: synaptic-operation counts, footprint and energy estimates
//! - [`cli`]: the `spikerl` command line

pub mod cli;
pub mod env;
pub mod error;
pub mod metrics;
pub mod networks;
pub mod par;
pub mod replay;
pub mod surrogate;
pub mod trainer;

pub use error::{Error, Result};
