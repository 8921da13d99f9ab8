//! Operation counts, memory footprint and neuromorphic energy estimates.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::networks::{MlpNetwork, SnnPolicy, SpikeMode};

/// Synaptic operations of a fully dense pass: `Σ n_l · n_{l+1}`.
pub fn count_dense_synops(layer_sizes: &[usize]) -> u64 {
    layer_sizes.windows(2).map(|w| (w[0] * w[1]) as u64).sum()
}

/// Sparsity-aware operation counts `(eff_macs, eff_acs)`.
///
/// `per_layer_sparsity[i]` is the fraction of silent neuron-steps in hidden
/// layer `i`. The first layer sees continuous inputs: with `encoder_is_mac`
/// it counts as MACs, otherwise as dense ACs. Every later layer counts as
/// ACs scaled by the activity `1 − sparsity` of its presynaptic layer.
pub fn effective_ops(layer_sizes: &[usize], per_layer_sparsity: &[f64], encoder_is_mac: bool) -> Result<(f64, f64)> {
    if layer_sizes.len() < 2 {
        return Ok((0.0, 0.0));
    }
    check_dim("per-layer sparsity", layer_sizes.len() - 2, per_layer_sparsity.len())?;
    if per_layer_sparsity.iter().any(|s| !(0.0..=1.0).contains(s)) {
        return Err(Error::Contract("sparsity must lie in [0, 1]".into()));
    }
    let encoder = (layer_sizes[0] * layer_sizes[1]) as f64;
    let (macs, mut acs) = if encoder_is_mac { (encoder, 0.0) } else { (0.0, encoder) };
    for (l, w) in layer_sizes.windows(2).enumerate().skip(1) {
        acs += (w[0] * w[1]) as f64 * (1.0 - per_layer_sparsity[l - 1]);
    }
    Ok((macs, acs))
}

/// Silent fraction of hidden neuron-steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub overall: f64,
    pub per_layer: Vec<f64>,
}

/// Runs `policy` from zero state over `observations` and measures
/// `1 − spikes / neuron-steps`, overall and per hidden layer.
pub fn measure_activation_sparsity(policy: &SnnPolicy, observations: &[Vec<f64>]) -> Result<SparsityReport> {
    let (_, tape) = policy.forward_sequence(observations, None, SpikeMode::Spiking)?;
    let hidden = policy.hidden_sizes();
    let mut spikes = vec![0.0; hidden.len()];
    for step in &tape.spikes {
        for (l, s) in step.iter().enumerate() {
            spikes[l] += s.sum();
        }
    }
    let steps = tape.steps() as f64;
    let per_layer = hidden.iter().zip(&spikes).map(|(&n, &s)| 1.0 - s / (n as f64 * steps)).collect();
    let total_slots: f64 = hidden.iter().map(|&n| n as f64 * steps).sum();
    Ok(SparsityReport {
        overall: 1.0 - spikes.iter().sum::<f64>() / total_slots,
        per_layer,
    })
}

/// Per-operation energies in picojoules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyModel {
    /// Per synaptic spike operation.
    pub p_s: f64,
    /// Within-tile spike energy, per fan-in connection.
    pub p_w: f64,
    /// Per neuron update.
    pub p_u: f64,
    pub layer_sizes: Vec<usize>,
    /// One value per hidden layer.
    pub activation_sparsity: Vec<f64>,
}

impl EnergyModel {
    /// Appendix values with one sparsity shared by all hidden layers.
    pub fn reference(sparsity: f64) -> Self {
        Self {
            p_s: 23.6,
            p_w: 1.7,
            p_u: 81.0,
            layer_sizes: vec![18, 256, 128, 4],
            activation_sparsity: vec![sparsity; 2],
        }
    }
}

/// Energy per inference in millijoules.
///
/// Each hidden layer pays a neuron update plus `P_w` per fan-in and
/// `P_s` per emitted spike; the linear output layer pays only its fan-in.
/// Input encoding multiplies are not counted.
pub fn estimate_energy(model: &EnergyModel) -> Result<f64> {
    let n = &model.layer_sizes;
    if n.len() < 2 {
        return Ok(0.0);
    }
    check_dim("per-layer sparsity", n.len() - 2, model.activation_sparsity.len())?;
    let last = n.len() - 1;
    let mut pj = 0.0;
    for l in 1..last {
        let width = n[l] as f64;
        pj += width * (model.p_u + n[l - 1] as f64 * model.p_w);
        pj += model.p_s * (1.0 - model.activation_sparsity[l - 1]) * width;
    }
    pj += n[last] as f64 * n[last - 1] as f64 * model.p_w;
    Ok(pj * 1e-9)
}

pub fn count_params(layer_sizes: &[usize]) -> usize {
    layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// `(parameters + state_per_neuron · hidden neurons) · bytes / 1024`.
pub fn footprint_kb(layer_sizes: &[usize], state_per_neuron: usize, bytes_per_param: usize) -> f64 {
    if layer_sizes.len() < 2 {
        return 0.0;
    }
    let hidden: usize = layer_sizes[1..layer_sizes.len() - 1].iter().sum();
    ((count_params(layer_sizes) + state_per_neuron * hidden) * bytes_per_param) as f64 / 1024.0
}

/// Footprint of a spiking actor: membrane and spike buffers per hidden
/// neuron, four bytes per value.
pub fn snn_footprint_kb(policy: &SnnPolicy) -> f64 {
    footprint_kb(&policy.sizes(), 2, 4)
}

pub fn mlp_footprint_kb(net: &MlpNetwork) -> f64 {
    footprint_kb(&net.sizes(), 0, 4)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpsReport {
    pub name: String,
    pub footprint_kb: f64,
    pub activation_sparsity: Option<f64>,
    pub per_layer_sparsity: Vec<f64>,
    pub dense_synops: u64,
    pub eff_macs: f64,
    pub eff_acs: f64,
    pub energy_mj: Option<f64>,
}

impl OpsReport {
    /// Report for a spiking actor with measured sparsity.
    pub fn for_snn(name: &str, policy: &SnnPolicy, sparsity: &SparsityReport) -> Result<Self> {
        let sizes = policy.sizes();
        let (eff_macs, eff_acs) = effective_ops(&sizes, &sparsity.per_layer, true)?;
        let energy = estimate_energy(&EnergyModel {
            layer_sizes: sizes.clone(),
            activation_sparsity: sparsity.per_layer.clone(),
            ..EnergyModel::reference(0.0)
        })?;
        Ok(Self {
            name: name.to_string(),
            footprint_kb: snn_footprint_kb(policy),
            activation_sparsity: Some(sparsity.overall),
            per_layer_sparsity: sparsity.per_layer.clone(),
            dense_synops: count_dense_synops(&sizes),
            eff_macs,
            eff_acs,
            energy_mj: Some(energy),
        })
    }

    /// Report for a dense network: every synapse is a MAC.
    pub fn for_mlp(name: &str, net: &MlpNetwork) -> Self {
        let dense = count_dense_synops(&net.sizes());
        Self {
            name: name.to_string(),
            footprint_kb: mlp_footprint_kb(net),
            activation_sparsity: None,
            per_layer_sparsity: Vec::new(),
            dense_synops: dense,
            eff_macs: dense as f64,
            eff_acs: 0.0,
            energy_mj: None,
        }
    }
}

/// Rows in the layout of a footprint / sparsity / SynOps comparison table.
pub fn format_table(reports: &[OpsReport]) -> String {
    let mut out = format!(
        "{:<16} {:>14} {:>11} {:>14} {:>12} {:>12} {:>12}\n",
        "Network", "Footprint (kb)", "Act. spars.", "SynOps dense", "Eff MACs", "Eff ACs", "Energy (mJ)"
    );
    for r in reports {
        let sparsity = r.activation_sparsity.map_or("-".to_string(), |s| format!("{s:.2}"));
        let energy = r.energy_mj.map_or("-".to_string(), |e| format!("{e:.3e}"));
        out.push_str(&format!(
            "{:<16} {:>14.1} {:>11} {:>14} {:>12.1} {:>12.1} {:>12}\n",
            r.name, r.footprint_kb, sparsity, r.dense_synops, r.eff_macs, r.eff_acs, energy
        ));
    }
    out
}
