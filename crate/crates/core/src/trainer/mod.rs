//! Actor-critic training of the spiking controller.

mod adam;
mod config;
mod guide;
mod learner;
mod privileged;
mod rollout;
mod run;

pub use adam::{clip_grad_norm, Adam};
pub use config::{
    CurriculumSchedule, GuideConfig, JsrlConfig, Method, NetworkConfig, RunConfig, SlopeConfig, Td3Config,
};
pub use guide::{guide_ready, obtain_guide, train_guide, transition_batch, GuideReport};
pub use learner::{
    actor_gradients, bias_output_layer, sequence_transitions, smooth_target_actions, td_targets, ActorGradients,
    ActorLearner, ActorObjective, CriticStats, DenseActorLearner, TransitionBatch, TwinCritic, ACTION_LIMIT,
};
pub use privileged::{privileged_dim, privileged_input, ActionHistory};
pub use rollout::{
    evaluate_guide, evaluate_policy, guide_rollout, guide_steps_for, jsrl_rollout, stream_rng, EpisodeRecord,
    EvalStats, Stream,
};
pub use run::{run_training, run_with_guide, EpochMetrics, StepCounters, Trainer, TrainingReport, RUN_VERSION};
