//! Spiking actor: dense encoder, stacked LIF layers joined by dense synapses,
//! and a linear spike decoder. Unrolled in time for BPTT.

use ndarray::{Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use super::dense::{Dense, ParamGrads};
use super::lif::{smooth_spike, smooth_spike_grad, surrogate_grad, LifLayerState, LifParams, SpikeMode};
use crate::error::{check_dim, Error, Result};

/// Layer sizes of the deployed controller.
pub const REFERENCE_SIZES: [usize; 4] = [18, 256, 128, 4];

/// Persistent hidden state for every LIF layer of one policy instance.
#[derive(Debug, Clone, PartialEq)]
pub struct SnnState {
    pub layers: Vec<LifLayerState>,
}

impl SnnState {
    pub fn zeros(hidden: &[usize], params: LifParams) -> Self {
        Self {
            layers: hidden.iter().map(|&n| LifLayerState::zeros(n, params)).collect(),
        }
    }

    pub fn reset(&mut self) {
        self.layers.iter_mut().for_each(LifLayerState::reset);
    }

    pub fn is_zero(&self) -> bool {
        self.layers.iter().all(|l| l.membrane.iter().all(|&u| u == 0.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnnPolicy {
    /// Encoder, hidden synapses, decoder.
    pub layers: Vec<Dense>,
    pub lif: LifParams,
    /// Current surrogate slope `k`.
    pub slope: f64,
    state: SnnState,
}

/// Everything the backward pass needs from a batched forward unroll.
///
/// `charged[t][l]` is layer `l`'s membrane after charging and before reset;
/// `spikes[t][l]` is its output. Rows are batch entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceTape {
    pub mode: SpikeMode,
    /// Slope used by the smooth forward (ignored in spiking mode).
    pub smooth_k: f64,
    pub batch: usize,
    pub inputs: Vec<Array2<f64>>,
    pub charged: Vec<Vec<Array2<f64>>>,
    pub spikes: Vec<Vec<Array2<f64>>>,
    pub final_membrane: Vec<Array2<f64>>,
}

impl SequenceTape {
    pub fn steps(&self) -> usize {
        self.inputs.len()
    }

    /// Total spikes emitted and total hidden neuron-steps recorded.
    pub fn spike_totals(&self) -> (f64, usize) {
        let mut spikes = 0.0;
        let mut slots = 0;
        for step in &self.spikes {
            for layer in step {
                spikes += layer.sum();
                slots += layer.len();
            }
        }
        (spikes, slots)
    }
}

impl SnnPolicy {
    /// `sizes = [obs, hidden..., act]` with at least one hidden layer.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], lif: LifParams, slope: f64, rng: &mut R) -> Result<Self> {
        Self::validate_sizes(sizes)?;
        lif.validate()?;
        let layers = sizes.windows(2).map(|w| Dense::uniform(w[0], w[1], rng)).collect();
        Ok(Self::from_layers(layers, lif, slope))
    }

    pub fn zeros(sizes: &[usize], lif: LifParams, slope: f64) -> Result<Self> {
        Self::validate_sizes(sizes)?;
        let layers = sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        Ok(Self::from_layers(layers, lif, slope))
    }

    pub fn from_layers(layers: Vec<Dense>, lif: LifParams, slope: f64) -> Self {
        let hidden: Vec<usize> = layers[..layers.len() - 1].iter().map(Dense::outputs).collect();
        let state = SnnState::zeros(&hidden, lif);
        Self {
            layers,
            lif,
            slope,
            state,
        }
    }

    fn validate_sizes(sizes: &[usize]) -> Result<()> {
        if sizes.len() < 3 {
            return Err(Error::Contract(format!(
                "a spiking policy needs input, ≥1 hidden and output sizes, got {sizes:?}"
            )));
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::Contract(format!("layer sizes must be positive, got {sizes:?}")));
        }
        Ok(())
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs()];
        s.extend(self.layers.iter().map(Dense::outputs));
        s
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1].iter().map(Dense::outputs).collect()
    }

    pub fn obs_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn act_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn num_hidden(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Dense::num_params).sum()
    }

    pub fn state(&self) -> &SnnState {
        &self.state
    }

    pub fn reset_state(&mut self) {
        self.state.reset();
    }

    /// One closed-loop step with the persistent state (Heaviside spikes).
    pub fn act(&mut self, obs: &[f64]) -> Result<Vec<f64>> {
        let last = self.layers.len() - 1;
        let mut current = self.layers[0].forward_one(obs)?;
        for l in 0..last {
            if l > 0 {
                current = self.layers[l].forward_one(&self.state.layers[l - 1].spikes)?;
            }
            self.state.layers[l].step(&current)?;
        }
        self.layers[last].forward_one(&self.state.layers[last - 1].spikes)
    }

    /// Spikes emitted by each hidden layer on the most recent `act` call.
    pub fn last_spikes(&self) -> impl Iterator<Item = &[f64]> {
        self.state.layers.iter().map(|l| l.spikes.as_slice())
    }

    /// Batched unroll. `observations[t]` has one row per sequence; hidden
    /// states start at `initial` (zero when `None`) and are never reset
    /// inside the sequence.
    pub fn forward_batch(
        &self,
        observations: &[Array2<f64>],
        initial: Option<&[Array2<f64>]>,
        mode: SpikeMode,
    ) -> Result<(Vec<Array2<f64>>, SequenceTape)> {
        if observations.is_empty() {
            return Err(Error::Contract("observation sequence is empty".into()));
        }
        let batch = observations[0].nrows();
        let hidden = self.hidden_sizes();
        let mut membrane: Vec<Array2<f64>> = match initial {
            Some(init) => {
                check_dim("initial state layers", hidden.len(), init.len())?;
                for (m, &n) in init.iter().zip(&hidden) {
                    check_dim("initial state width", n, m.ncols())?;
                    check_dim("initial state batch", batch, m.nrows())?;
                }
                init.to_vec()
            }
            None => hidden.iter().map(|&n| Array2::zeros((batch, n))).collect(),
        };
        let (beta, thr, k) = (self.lif.beta, self.lif.threshold, self.slope);
        let last = self.layers.len() - 1;

        let mut actions = Vec::with_capacity(observations.len());
        let mut tape = SequenceTape {
            mode,
            smooth_k: k,
            batch,
            inputs: Vec::with_capacity(observations.len()),
            charged: Vec::with_capacity(observations.len()),
            spikes: Vec::with_capacity(observations.len()),
            final_membrane: Vec::new(),
        };

        for obs in observations {
            check_dim("observation batch", batch, obs.nrows())?;
            let mut step_charged = Vec::with_capacity(last);
            let mut step_spikes: Vec<Array2<f64>> = Vec::with_capacity(last);
            for l in 0..last {
                let input = if l == 0 { obs.view() } else { step_spikes[l - 1].view() };
                let mut charged = self.layers[l].forward(input)?;
                charged.zip_mut_with(&membrane[l], |c, u| *c += beta * u);
                let spikes = match mode {
                    SpikeMode::Spiking => charged.mapv(|c| if c > thr { 1.0 } else { 0.0 }),
                    SpikeMode::Smooth => charged.mapv(|c| smooth_spike(c - thr, k)),
                };
                Zip::from(&mut membrane[l])
                    .and(&charged)
                    .and(&spikes)
                    .for_each(|u, &c, &s| *u = c - thr * s);
                step_charged.push(charged);
                step_spikes.push(spikes);
            }
            actions.push(self.layers[last].forward(step_spikes[last - 1].view())?);
            tape.inputs.push(obs.clone());
            tape.charged.push(step_charged);
            tape.spikes.push(step_spikes);
        }
        tape.final_membrane = membrane;
        Ok((actions, tape))
    }

    /// Single-sequence unroll; see [`snn_forward_sequence`].
    pub fn forward_sequence(
        &self,
        observations: &[Vec<f64>],
        initial: Option<&SnnState>,
        mode: SpikeMode,
    ) -> Result<(Vec<Vec<f64>>, SequenceTape)> {
        let obs: Vec<Array2<f64>> = observations
            .iter()
            .map(|o| {
                check_dim("observation", self.obs_dim(), o.len())?;
                Ok(Array2::from_shape_vec((1, o.len()), o.clone()).expect("row shape"))
            })
            .collect::<Result<_>>()?;
        let init: Option<Vec<Array2<f64>>> = initial.map(|s| {
            s.layers
                .iter()
                .map(|l| Array2::from_shape_vec((1, l.len()), l.membrane.clone()).expect("row shape"))
                .collect()
        });
        let (acts, tape) = self.forward_batch(&obs, init.as_deref(), mode)?;
        Ok((acts.into_iter().map(|a| a.row(0).to_vec()).collect(), tape))
    }

    /// Batched BPTT.
    ///
    /// `output_grads[t]` is `∂L/∂action_t` per row; `mask[[t, b]] == false`
    /// zeroes the injected loss gradient for that step while the recurrent
    /// credit from later steps still flows through it. In spiking mode the
    /// Heaviside derivative is replaced by `surrogate_grad(U − U_thr, k)` and
    /// the reset term is treated as a constant. Smooth-mode tapes use the
    /// exact derivative of their forward and ignore `k`.
    pub fn backward(
        &self,
        tape: &SequenceTape,
        output_grads: &[Array2<f64>],
        mask: ArrayView2<'_, bool>,
        k: f64,
    ) -> Result<ParamGrads> {
        let steps = tape.steps();
        check_dim("output gradient steps", steps, output_grads.len())?;
        check_dim("mask steps", steps, mask.nrows())?;
        check_dim("mask batch", tape.batch, mask.ncols())?;
        let last = self.layers.len() - 1;
        check_dim("tape layers", last, tape.charged.first().map_or(0, Vec::len))?;

        let (beta, thr) = (self.lif.beta, self.lif.threshold);
        let detach_reset = tape.mode == SpikeMode::Spiking;
        let fprime = |x: f64| match tape.mode {
            SpikeMode::Spiking => surrogate_grad(x, k),
            SpikeMode::Smooth => smooth_spike_grad(x, tape.smooth_k),
        };

        let mut grads = ParamGrads::zeros_like(&self.layers);
        let hidden = self.hidden_sizes();
        let mut carry: Vec<Array2<f64>> = hidden.iter().map(|&n| Array2::zeros((tape.batch, n))).collect();

        for t in (0..steps).rev() {
            let mut dy = output_grads[t].clone();
            check_dim("output gradient width", self.act_dim(), dy.ncols())?;
            check_dim("output gradient batch", tape.batch, dy.nrows())?;
            for (mut row, &on) in dy.axis_iter_mut(Axis(0)).zip(mask.row(t)) {
                if !on {
                    row.fill(0.0);
                }
            }
            Dense::accumulate(&mut grads.layers[last], tape.spikes[t][last - 1].view(), dy.view());
            let mut ds = self.layers[last].backprop_input(dy.view());

            for l in (0..last).rev() {
                let mut dpre = ds;
                Zip::from(&mut dpre)
                    .and(&carry[l])
                    .and(&tape.charged[t][l])
                    .for_each(|d, &du, &c| {
                        let from_spike = if detach_reset { *d } else { *d - thr * du };
                        *d = du + from_spike * fprime(c - thr);
                    });
                let input = if l == 0 { tape.inputs[t].view() } else { tape.spikes[t][l - 1].view() };
                Dense::accumulate(&mut grads.layers[l], input, dpre.view());
                ds = if l > 0 {
                    self.layers[l].backprop_input(dpre.view())
                } else {
                    Array2::zeros((0, 0))
                };
                dpre *= beta;
                carry[l] = dpre;
            }
        }
        Ok(grads)
    }
}

/// Unrolls `policy` over one observation sequence from `initial` (or zero)
/// state, returning per-step actions and the tape for [`snn_backward_sequence`].
pub fn snn_forward_sequence(
    policy: &SnnPolicy,
    observations: &[Vec<f64>],
    initial: Option<&SnnState>,
    mode: SpikeMode,
) -> Result<(Vec<Vec<f64>>, SequenceTape)> {
    policy.forward_sequence(observations, initial, mode)
}

/// BPTT for a single-sequence tape produced by [`snn_forward_sequence`].
pub fn snn_backward_sequence(
    policy: &SnnPolicy,
    tape: &SequenceTape,
    output_grads: &[Vec<f64>],
    warm_up_mask: &[bool],
    k: f64,
) -> Result<ParamGrads> {
    check_dim("tape batch", 1, tape.batch)?;
    check_dim("mask length", tape.steps(), warm_up_mask.len())?;
    let grads: Vec<Array2<f64>> = output_grads
        .iter()
        .map(|g| Array2::from_shape_vec((1, g.len()), g.clone()).expect("row shape"))
        .collect();
    let mask = Array2::from_shape_vec((warm_up_mask.len(), 1), warm_up_mask.to_vec()).expect("column shape");
    policy.backward(tape, &grads, mask.view(), k)
}
