//! Surrogate slope schedules and gradient diagnostics.

pub mod diagnostics;
pub mod schedule;
pub mod sweep;

pub use diagnostics::{
    cosine, gradient_cosine_similarity, layer_gradient_magnitudes, slope_statistics, LayerGradStats, MlpProbe,
    ProbeConfig, ProbeKind, SlopeProbe, SnnProbe, K_REF, ZERO_GRAD_EPS,
};
pub use schedule::{ScoreNormalizer, SlopeMode, SlopeSchedule, ADAPTIVE_WINDOW, K_MAX, K_MIN};
pub use sweep::{run_slope_sweep, sweep_rows, write_sweep_csv, SweepConfig, SweepRow};

use crate::error::Result;

/// Free-function form of [`SlopeSchedule::update_adaptive`].
pub fn update_adaptive_slope(sched: &mut SlopeSchedule, score: f64) -> Result<f64> {
    sched.update_adaptive(score)
}
