//! JSON parameter checkpoints.
//!
//! ```json
//! { "format": "SPIKERL-CKPT-1",
//!   "network": { "kind": "snn", "sizes": [18,256,128,4],
//!                "weights": [[...row-major...], ...], "biases": [[...], ...],
//!                "beta": 0.9, "threshold": 1.0, "slope": 2.0 } }
//! ```

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::dense::Dense;
use super::lif::LifParams;
use super::mlp::{Activation, MlpNetwork};
use super::snn::SnnPolicy;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "SPIKERL-CKPT-1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub network: NetworkRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NetworkRecord {
    Snn {
        sizes: Vec<usize>,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
        beta: f64,
        threshold: f64,
        slope: f64,
    },
    Mlp {
        sizes: Vec<usize>,
        activation: Activation,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
    },
}

fn flatten_layers(layers: &[Dense]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    layers
        .iter()
        .map(|l| (l.weights.iter().copied().collect(), l.bias.to_vec()))
        .unzip()
}

fn rebuild_layers(sizes: &[usize], weights: &[Vec<f64>], biases: &[Vec<f64>]) -> Result<Vec<Dense>> {
    if sizes.len() < 2 || weights.len() != sizes.len() - 1 || biases.len() != sizes.len() - 1 {
        return Err(Error::Checkpoint(format!(
            "{} sizes but {} weight and {} bias blocks",
            sizes.len(),
            weights.len(),
            biases.len()
        )));
    }
    sizes
        .windows(2)
        .zip(weights.iter().zip(biases))
        .map(|(w, (wv, bv))| {
            let (inputs, outputs) = (w[0], w[1]);
            if wv.len() != inputs * outputs || bv.len() != outputs {
                return Err(Error::Checkpoint(format!(
                    "layer {inputs}→{outputs} has {} weights and {} biases",
                    wv.len(),
                    bv.len()
                )));
            }
            Ok(Dense {
                weights: Array2::from_shape_vec((outputs, inputs), wv.clone()).expect("checked shape"),
                bias: Array1::from(bv.clone()),
            })
        })
        .collect()
}

impl Checkpoint {
    pub fn from_snn(policy: &SnnPolicy) -> Self {
        let (weights, biases) = flatten_layers(&policy.layers);
        Self {
            format: CHECKPOINT_FORMAT.into(),
            network: NetworkRecord::Snn {
                sizes: policy.sizes(),
                weights,
                biases,
                beta: policy.lif.beta,
                threshold: policy.lif.threshold,
                slope: policy.slope,
            },
        }
    }

    pub fn from_mlp(net: &MlpNetwork) -> Self {
        let (weights, biases) = flatten_layers(&net.layers);
        Self {
            format: CHECKPOINT_FORMAT.into(),
            network: NetworkRecord::Mlp {
                sizes: net.sizes(),
                activation: net.activation,
                weights,
                biases,
            },
        }
    }

    pub fn to_snn(&self) -> Result<SnnPolicy> {
        self.check_format()?;
        match &self.network {
            NetworkRecord::Snn {
                sizes,
                weights,
                biases,
                beta,
                threshold,
                slope,
            } => {
                if sizes.len() < 3 {
                    return Err(Error::Checkpoint("spiking network needs a hidden layer".into()));
                }
                let lif = LifParams {
                    beta: *beta,
                    threshold: *threshold,
                };
                lif.validate()?;
                Ok(SnnPolicy::from_layers(rebuild_layers(sizes, weights, biases)?, lif, *slope))
            }
            NetworkRecord::Mlp { .. } => Err(Error::Checkpoint("expected a spiking network, found an MLP".into())),
        }
    }

    pub fn to_mlp(&self) -> Result<MlpNetwork> {
        self.check_format()?;
        match &self.network {
            NetworkRecord::Mlp {
                sizes,
                activation,
                weights,
                biases,
            } => Ok(MlpNetwork {
                layers: rebuild_layers(sizes, weights, biases)?,
                activation: *activation,
            }),
            NetworkRecord::Snn { .. } => Err(Error::Checkpoint("expected an MLP, found a spiking network".into())),
        }
    }

    fn check_format(&self) -> Result<()> {
        if self.format == CHECKPOINT_FORMAT {
            Ok(())
        } else {
            Err(Error::Checkpoint(format!("unsupported format header {:?}", self.format)))
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
