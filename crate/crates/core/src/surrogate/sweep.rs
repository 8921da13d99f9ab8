//! End-to-end slope sweep writing a per-layer CSV report.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::diagnostics::{slope_statistics, LayerGradStats, ProbeConfig, K_REF};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub slopes: Vec<f64>,
    pub trials: usize,
    pub k_ref: f64,
    pub probe: ProbeConfig,
    pub out: PathBuf,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            slopes: vec![1.0, 2.0, 5.0, 10.0, 25.0, 50.0, 100.0],
            trials: 100,
            k_ref: K_REF,
            probe: ProbeConfig::default(),
            out: PathBuf::from("slope_sweep.csv"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub slope: f64,
    pub layer: usize,
    pub mean_abs_grad: f64,
    pub zero_fraction: f64,
    /// Empty cell when undefined.
    pub cosine_to_ref: Option<f64>,
}

/// Runs every slope on shared per-trial tapes and returns the rows in
/// `(slope, layer)` order.
pub fn sweep_rows(config: &SweepConfig) -> Result<Vec<SweepRow>> {
    if config.slopes.is_empty() {
        return Err(Error::Config("slope sweep needs at least one slope".into()));
    }
    let stats = slope_statistics(&config.probe, &config.slopes, config.k_ref, config.trials)?;
    Ok(config
        .slopes
        .iter()
        .zip(stats)
        .flat_map(|(&slope, layers)| {
            layers.into_iter().map(move |s: LayerGradStats| SweepRow {
                slope,
                layer: s.layer_index,
                mean_abs_grad: s.mean_abs_grad,
                zero_fraction: s.zero_fraction,
                cosine_to_ref: s.cosine_to_ref,
            })
        })
        .collect())
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::io(path, e),
        other => Error::Config(format!("{other:?}")),
    })?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Runs the sweep and writes `config.out`.
pub fn run_slope_sweep(config: &SweepConfig) -> Result<Vec<SweepRow>> {
    let rows = sweep_rows(config)?;
    write_sweep_csv(&rows, &config.out)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(out: PathBuf) -> SweepConfig {
        SweepConfig {
            slopes: vec![1.0, 100.0],
            trials: 2,
            probe: ProbeConfig {
                input_dim: 5,
                hidden_layers: 2,
                neurons: 6,
                batch: 3,
                steps: 4,
                input_scale: 2.0,
                ..ProbeConfig::default()
            },
            out,
            ..SweepConfig::default()
        }
    }

    #[test]
    fn writes_header_and_one_row_per_slope_and_layer() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/sweep.csv");
        let rows = run_slope_sweep(&tiny(path.clone())).unwrap();
        assert_eq!(rows.len(), 2 * 3);
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("slope,layer,mean_abs_grad,zero_fraction,cosine_to_ref"));
        assert_eq!(lines.count(), 6);
    }

    #[test]
    fn unwritable_path_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, "x").unwrap();
        assert!(run_slope_sweep(&tiny(blocker.join("sweep.csv"))).is_err());
    }

    #[test]
    fn empty_slope_list_rejected() {
        let mut c = tiny(PathBuf::from("unused.csv"));
        c.slopes.clear();
        assert!(sweep_rows(&c).is_err());
    }
}
