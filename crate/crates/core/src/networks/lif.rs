//! Leaky integrate-and-fire dynamics with soft reset.
//!
//! One step charges the membrane, `U ← β·U + I`, emits `s = [U > U_thr]`
//! on that charged potential and then subtracts `s·U_thr`. The membrane is
//! never hard-zeroed.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Normalized fast-sigmoid derivative `1 / (1 + k|x|)²`.
///
/// Equals 1 at `x = 0` for every slope and decays faster for larger `k`.
#[inline]
pub fn surrogate_grad(x: f64, k: f64) -> f64 {
    let d = 1.0 + k * x.abs();
    1.0 / (d * d)
}

/// Differentiable stand-in for the Heaviside used in smooth mode:
/// `0.5 · (1 + kx / (1 + k|x|))`. Its exact derivative is
/// `k/2 · surrogate_grad(x, k)`.
#[inline]
pub fn smooth_spike(x: f64, k: f64) -> f64 {
    0.5 * (1.0 + k * x / (1.0 + k * x.abs()))
}

#[inline]
pub fn smooth_spike_grad(x: f64, k: f64) -> f64 {
    0.5 * k * surrogate_grad(x, k)
}

/// How the spike nonlinearity behaves in the forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpikeMode {
    /// Heaviside forward, surrogate backward, detached reset.
    Spiking,
    /// Fast-sigmoid forward with its exact derivative backward and the reset
    /// kept on the graph. Used for gradient verification only.
    Smooth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifParams {
    pub beta: f64,
    pub threshold: f64,
}

impl Default for LifParams {
    fn default() -> Self {
        Self {
            beta: 0.9,
            threshold: 1.0,
        }
    }
}

impl LifParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Contract(format!("leak β must lie in [0,1], got {}", self.beta)));
        }
        if !(self.threshold > 0.0) {
            return Err(Error::Contract(format!(
                "threshold must be positive, got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// Membrane potentials and last spike outputs of one LIF layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifLayerState {
    pub membrane: Vec<f64>,
    /// Binary in spiking mode.
    pub spikes: Vec<f64>,
    pub leak: f64,
    pub threshold: f64,
}

impl LifLayerState {
    pub fn zeros(n: usize, params: LifParams) -> Self {
        Self {
            membrane: vec![0.0; n],
            spikes: vec![0.0; n],
            leak: params.beta,
            threshold: params.threshold,
        }
    }

    pub fn len(&self) -> usize {
        self.membrane.len()
    }

    pub fn is_empty(&self) -> bool {
        self.membrane.is_empty()
    }

    pub fn reset(&mut self) {
        self.membrane.iter_mut().for_each(|u| *u = 0.0);
        self.spikes.iter_mut().for_each(|s| *s = 0.0);
    }

    /// Advances the layer in place and returns the new spike vector.
    pub fn step(&mut self, input_current: &[f64]) -> Result<&[f64]> {
        check_dim("LIF input current", self.membrane.len(), input_current.len())?;
        let (beta, thr) = (self.leak, self.threshold);
        for ((u, s), i) in self.membrane.iter_mut().zip(&mut self.spikes).zip(input_current) {
            let charged = beta * *u + i;
            let spike = if charged > thr { 1.0 } else { 0.0 };
            *u = charged - spike * thr;
            *s = spike;
        }
        Ok(&self.spikes)
    }
}

/// Pure single-step LIF update.
pub fn lif_step(state: &LifLayerState, input_current: &[f64]) -> Result<(Vec<f64>, LifLayerState)> {
    if !(0.0..=1.0).contains(&state.leak) {
        return Err(Error::Contract(format!("leak β must lie in [0,1], got {}", state.leak)));
    }
    let mut next = state.clone();
    let spikes = next.step(input_current)?.to_vec();
    Ok((spikes, next))
}
