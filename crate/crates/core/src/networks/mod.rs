//! Parameter containers, forward passes and reverse-mode gradients for the
//! spiking actor and the dense critic/guide networks.

pub mod checkpoint;
pub mod dense;
pub mod lif;
pub mod mlp;
pub mod snn;

pub use checkpoint::{Checkpoint, NetworkRecord, CHECKPOINT_FORMAT};
pub use dense::{soft_update, Dense, DenseGrad, ParamGrads};
pub use lif::{lif_step, smooth_spike, smooth_spike_grad, surrogate_grad, LifLayerState, LifParams, SpikeMode};
pub use mlp::{mlp_backward, mlp_forward, Activation, MlpCache, MlpNetwork};
pub use snn::{snn_backward_sequence, snn_forward_sequence, SequenceTape, SnnPolicy, SnnState, REFERENCE_SIZES};
