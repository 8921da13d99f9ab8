//! Per-layer gradient magnitude and alignment under different surrogate
//! slopes, measured on a shared forward tape.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::{Activation, LifParams, MlpCache, MlpNetwork, ParamGrads, SequenceTape, SnnPolicy, SpikeMode};
use crate::par;

/// Gradients with `|g|` at or below this are counted as zero. The fast
/// sigmoid never returns an exact zero, so steep slopes show up as products
/// of tiny factors rather than literal zeros.
pub const ZERO_GRAD_EPS: f64 = 1e-8;

/// Reference slope standing in for the true spiking gradient.
pub const K_REF: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerGradStats {
    /// 0 is the layer closest to the input.
    pub layer_index: usize,
    pub mean_abs_grad: f64,
    pub zero_fraction: f64,
    /// `None` when either gradient vector had zero norm in every trial.
    pub cosine_to_ref: Option<f64>,
}

/// Cosine between two gradient vectors; `None` if either has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        None
    } else {
        Some((dot / (na * nb)).clamp(-1.0, 1.0))
    }
}

/// Something that can replay one recorded forward pass backward under a
/// chosen surrogate slope.
pub trait SlopeProbe {
    /// Weight gradients per layer (biases excluded), input layer first.
    fn layer_grads(&self, k: f64) -> Result<Vec<Vec<f64>>>;
}

fn weight_grads(g: ParamGrads) -> Vec<Vec<f64>> {
    g.layers.into_iter().map(|l| l.weights.into_iter().collect()).collect()
}

/// A spiking network with one recorded tape and fixed loss gradients.
pub struct SnnProbe {
    pub policy: SnnPolicy,
    pub tape: SequenceTape,
    pub output_grads: Vec<Array2<f64>>,
    pub mask: Array2<bool>,
}

impl SlopeProbe for SnnProbe {
    fn layer_grads(&self, k: f64) -> Result<Vec<Vec<f64>>> {
        Ok(weight_grads(self.policy.backward(&self.tape, &self.output_grads, self.mask.view(), k)?))
    }
}

/// A sigmoid MLP whose hidden derivatives are swapped for slope-`k`
/// surrogates.
pub struct MlpProbe {
    pub net: MlpNetwork,
    pub cache: MlpCache,
    pub output_grad: Array2<f64>,
}

impl SlopeProbe for MlpProbe {
    fn layer_grads(&self, k: f64) -> Result<Vec<Vec<f64>>> {
        Ok(weight_grads(self.net.backward(&self.cache, self.output_grad.view(), Some(k))?.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    Snn,
    Mlp,
}

/// Architecture and synthetic data for the slope analysis. Each trial draws
/// a fresh network, input batch and loss gradient from `(seed, trial)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub kind: ProbeKind,
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub neurons: usize,
    pub output_dim: usize,
    pub batch: usize,
    /// Timesteps per sequence (SNN only).
    pub steps: usize,
    /// Inputs are uniform in `[0, input_scale)`.
    pub input_scale: f64,
    /// Multiplies the standard-normal loss gradients; 0 gives a null loss.
    pub loss_grad_scale: f64,
    pub lif: LifParams,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            kind: ProbeKind::Snn,
            input_dim: 64,
            hidden_layers: 4,
            neurons: 64,
            output_dim: 4,
            batch: 16,
            steps: 20,
            input_scale: 1.0,
            loss_grad_scale: 1.0,
            lif: LifParams::default(),
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim];
        s.extend(std::iter::repeat(self.neurons).take(self.hidden_layers));
        s.push(self.output_dim);
        s
    }

    fn trial_rng(&self, trial: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(trial as u64 + 1);
        rng
    }

    /// Builds the network, data and recorded forward pass for one trial.
    pub fn build_trial(&self, trial: usize) -> Result<Box<dyn SlopeProbe + Send + Sync>> {
        if self.hidden_layers == 0 {
            return Err(Error::Contract("slope probe needs at least one hidden layer".into()));
        }
        let mut rng = self.trial_rng(trial);
        let sizes = self.sizes();
        let uniform = |rng: &mut ChaCha8Rng, rows: usize, cols: usize| {
            Array2::from_shape_simple_fn((rows, cols), || rng.gen::<f64>() * self.input_scale)
        };
        let normal = |rng: &mut ChaCha8Rng, rows: usize, cols: usize| {
            Array2::from_shape_simple_fn((rows, cols), || {
                rng.sample::<f64, _>(StandardNormal) * self.loss_grad_scale
            })
        };
        match self.kind {
            ProbeKind::Snn => {
                let policy = SnnPolicy::new(&sizes, self.lif, K_REF, &mut rng)?;
                let obs: Vec<Array2<f64>> = (0..self.steps.max(1))
                    .map(|_| uniform(&mut rng, self.batch, self.input_dim))
                    .collect();
                let (_, tape) = policy.forward_batch(&obs, None, SpikeMode::Spiking)?;
                let output_grads = (0..obs.len())
                    .map(|_| normal(&mut rng, self.batch, self.output_dim))
                    .collect();
                let mask = Array2::from_elem((obs.len(), self.batch), true);
                Ok(Box::new(SnnProbe {
                    policy,
                    tape,
                    output_grads,
                    mask,
                }))
            }
            ProbeKind::Mlp => {
                let net = MlpNetwork::new(&sizes, Activation::Sigmoid, &mut rng)?;
                let x = uniform(&mut rng, self.batch, self.input_dim);
                let cache = net.forward_cached(x.view())?;
                let output_grad = normal(&mut rng, self.batch, self.output_dim);
                Ok(Box::new(MlpProbe {
                    net,
                    cache,
                    output_grad,
                }))
            }
        }
    }
}

/// Per-trial raw statistics for one slope, before averaging.
#[derive(Debug, Clone)]
struct TrialLayer {
    mean_abs: f64,
    zero_fraction: f64,
    cosine: Option<f64>,
}

fn trial_layer_stats(grads: &[Vec<f64>], reference: Option<&[Vec<f64>]>) -> Vec<TrialLayer> {
    grads
        .iter()
        .enumerate()
        .map(|(l, g)| {
            let n = g.len().max(1) as f64;
            TrialLayer {
                mean_abs: g.iter().map(|v| v.abs()).sum::<f64>() / n,
                zero_fraction: g.iter().filter(|v| v.abs() <= ZERO_GRAD_EPS).count() as f64 / n,
                cosine: reference.and_then(|r| cosine(g, &r[l])),
            }
        })
        .collect()
}

fn aggregate(trials: &[Vec<TrialLayer>]) -> Vec<LayerGradStats> {
    let layers = trials.first().map_or(0, Vec::len);
    (0..layers)
        .map(|l| {
            let n = trials.len() as f64;
            let cosines: Vec<f64> = trials.iter().filter_map(|t| t[l].cosine).collect();
            LayerGradStats {
                layer_index: l,
                mean_abs_grad: trials.iter().map(|t| t[l].mean_abs).sum::<f64>() / n,
                zero_fraction: trials.iter().map(|t| t[l].zero_fraction).sum::<f64>() / n,
                cosine_to_ref: if cosines.is_empty() {
                    None
                } else {
                    Some(cosines.iter().sum::<f64>() / cosines.len() as f64)
                },
            }
        })
        .collect()
}

/// Statistics for several slopes at once, every slope evaluated on the same
/// per-trial tapes; cosines are against `k_ref`. Trials run in parallel.
pub fn slope_statistics(config: &ProbeConfig, slopes: &[f64], k_ref: f64, trials: usize) -> Result<Vec<Vec<LayerGradStats>>> {
    if trials == 0 {
        return Err(Error::Contract("at least one trial is required".into()));
    }
    let per_trial: Vec<Result<Vec<Vec<TrialLayer>>>> = par::map_range(trials, |t| {
        let probe = config.build_trial(t)?;
        let reference = probe.layer_grads(k_ref)?;
        slopes
            .iter()
            .map(|&k| {
                let g = if k == k_ref { reference.clone() } else { probe.layer_grads(k)? };
                Ok(trial_layer_stats(&g, Some(&reference)))
            })
            .collect()
    });
    let per_trial: Vec<Vec<Vec<TrialLayer>>> = per_trial.into_iter().collect::<Result<_>>()?;
    Ok((0..slopes.len())
        .map(|s| {
            let by_trial: Vec<Vec<TrialLayer>> = per_trial.iter().map(|t| t[s].clone()).collect();
            aggregate(&by_trial)
        })
        .collect())
}

/// Mean absolute weight gradient and zero fraction per layer at slope `k`,
/// averaged over `trials` fresh initializations.
pub fn layer_gradient_magnitudes(config: &ProbeConfig, k: f64, trials: usize) -> Result<Vec<LayerGradStats>> {
    let mut stats = slope_statistics(config, &[k], k, trials)?.remove(0);
    stats.iter_mut().for_each(|s| s.cosine_to_ref = None);
    Ok(stats)
}

/// Per-layer cosine between slope-`k_shallow` and slope-`k_ref` gradients on
/// identical tapes, averaged over trials where both are nonzero.
pub fn gradient_cosine_similarity(
    config: &ProbeConfig,
    k_shallow: f64,
    k_ref: f64,
    trials: usize,
) -> Result<Vec<LayerGradStats>> {
    if k_shallow > k_ref {
        return Err(Error::Contract(format!(
            "shallow slope {k_shallow} must not exceed reference slope {k_ref}"
        )));
    }
    Ok(slope_statistics(config, &[k_shallow], k_ref, trials)?.remove(0))
}

/// Cosines for an already-built probe (single trial).
pub fn probe_cosines(probe: &dyn SlopeProbe, k_shallow: f64, k_ref: f64) -> Result<Vec<Option<f64>>> {
    let a = probe.layer_grads(k_shallow)?;
    let b = probe.layer_grads(k_ref)?;
    Ok(a.iter().zip(&b).map(|(x, y)| cosine(x, y)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::Dense;

    fn small(kind: ProbeKind) -> ProbeConfig {
        ProbeConfig {
            kind,
            input_dim: 6,
            hidden_layers: 2,
            neurons: 8,
            output_dim: 2,
            batch: 4,
            steps: 6,
            input_scale: 2.0,
            ..ProbeConfig::default()
        }
    }

    #[test]
    fn cosine_basics() {
        assert!((cosine(&[1.0, 2.0], &[2.0, 4.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 3.0]), Some(0.0));
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 1.0]), None);
    }

    #[test]
    fn equal_slopes_are_perfectly_aligned() {
        for kind in [ProbeKind::Snn, ProbeKind::Mlp] {
            let stats = gradient_cosine_similarity(&small(kind), 100.0, 100.0, 3).unwrap();
            for s in stats {
                if let Some(c) = s.cosine_to_ref {
                    assert!((c - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_loss_gradient_gives_zero_stats() {
        let cfg = ProbeConfig {
            loss_grad_scale: 0.0,
            ..small(ProbeKind::Snn)
        };
        for s in layer_gradient_magnitudes(&cfg, 1.0, 2).unwrap() {
            assert_eq!(s.mean_abs_grad, 0.0);
            assert_eq!(s.zero_fraction, 1.0);
            assert_eq!(s.cosine_to_ref, None);
        }
    }

    #[test]
    fn output_layer_is_slope_independent_for_single_hidden_layer() {
        let cfg = ProbeConfig {
            hidden_layers: 1,
            ..small(ProbeKind::Snn)
        };
        let a = layer_gradient_magnitudes(&cfg, 1.0, 2).unwrap();
        let b = layer_gradient_magnitudes(&cfg, 100.0, 2).unwrap();
        assert_eq!(a[1].mean_abs_grad, b[1].mean_abs_grad);
        assert!(a[0].mean_abs_grad >= b[0].mean_abs_grad);
    }

    #[test]
    fn one_parameter_network_cosine_is_sign() {
        // 1 → 1 LIF → 1, single weight per layer.
        let one = |w: f64| Dense {
            weights: Array2::from_elem((1, 1), w),
            bias: ndarray::Array1::zeros(1),
        };
        let policy = SnnPolicy::from_layers(vec![one(1.5), one(-0.7)], LifParams::default(), 2.0);
        let obs = vec![Array2::from_elem((1, 1), 1.0); 3];
        let (_, tape) = policy.forward_batch(&obs, None, SpikeMode::Spiking).unwrap();
        let probe = SnnProbe {
            policy,
            tape,
            output_grads: vec![Array2::from_elem((1, 1), 1.0); 3],
            mask: Array2::from_elem((3, 1), true),
        };
        for c in probe_cosines(&probe, 1.0, 100.0).unwrap() {
            let c = c.unwrap_or(0.0);
            assert!(c == 1.0 || c == -1.0 || c == 0.0, "cosine {c}");
        }
    }

    #[test]
    fn shallow_above_reference_is_rejected() {
        assert!(gradient_cosine_similarity(&small(ProbeKind::Snn), 50.0, 10.0, 1).is_err());
    }
}
