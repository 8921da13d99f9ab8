//! Quadrotor hover environment with a staged reward curriculum.

pub mod drone;
pub mod quad;
pub mod reward;

pub use drone::{integrate, DroneParams, QuadrotorState};
pub use quad::{
    observe, DoneReason, EnvConfig, ObsEncoding, QuadrotorEnv, ResetConfig, StepOutcome, TerminationConfig,
    TrajectoryLog, ACT_DIM, OBS_DIM,
};
pub use reward::{advance_curriculum, reward, CurriculumRewardConfig, Ramp, RewardCoefficients};
