use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::networks::MlpNetwork;
use crate::trainer::{run_with_guide, EpochMetrics, RunConfig};

/// One cell of the {BC term, jump start} grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub bc_term: bool,
    pub jump_start: bool,
    pub best_mean_reward: f64,
    pub best_mean_episode_len: f64,
    pub final_mean_reward: f64,
    pub final_mean_episode_len: f64,
}

impl AblationRow {
    fn new(bc_term: bool, jump_start: bool, metrics: &[EpochMetrics]) -> Self {
        let best = |f: fn(&EpochMetrics) -> f64| metrics.iter().map(f).fold(f64::NAN, f64::max);
        let last = metrics.last();
        Self {
            bc_term,
            jump_start,
            best_mean_reward: best(|m| m.mean_reward),
            best_mean_episode_len: best(|m| m.mean_episode_len),
            final_mean_reward: last.map_or(f64::NAN, |m| m.mean_reward),
            final_mean_episode_len: last.map_or(f64::NAN, |m| m.mean_episode_len),
        }
    }
}

/// Trains all four variants from the same seed and guide. Each run writes
/// its own directory under `cfg.out` when set.
pub fn ablation_grid(cfg: &RunConfig, guide: &MlpNetwork) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(4);
    for (bc_term, jump_start) in [(true, true), (false, true), (true, false), (false, false)] {
        let mut run = cfg.clone();
        run.jsrl.use_bc_term = bc_term;
        run.jsrl.use_jump_start = jump_start;
        run.out = cfg
            .out
            .as_ref()
            .map(|d| d.join(format!("bc{}_js{}", u8::from(bc_term), u8::from(jump_start))));
        let report = run_with_guide(&run, Some(guide.clone()))?;
        rows.push(AblationRow::new(bc_term, jump_start, &report.metrics));
    }
    Ok(rows)
}

pub fn format_ablation(rows: &[AblationRow]) -> String {
    let yn = |b: bool| if b { "yes" } else { "no" };
    let mut out = format!(
        "{:<8} {:<10} {:>12} {:>10} {:>12} {:>10}\n",
        "BC term", "Jump-start", "best reward", "best len", "final reward", "final len"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<8} {:<10} {:>12.2} {:>10.1} {:>12.2} {:>10.1}\n",
            yn(r.bc_term),
            yn(r.jump_start),
            r.best_mean_reward,
            r.best_mean_episode_len,
            r.final_mean_reward,
            r.final_mean_episode_len
        ));
    }
    out
}

pub fn write_ablation_csv(rows: &[AblationRow], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
