//! Episode replay sliced into fixed-length, warm-up-masked sequences.

pub mod buffer;
pub mod log;

pub use buffer::{Episode, ReplayBuffer, ReplayConfig, SequenceBatch, SequenceSlice, Source, Transition};
pub use log::{read_episodes, write_episodes, LOG_MAGIC};
