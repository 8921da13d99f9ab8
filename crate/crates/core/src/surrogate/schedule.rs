use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const K_MIN: f64 = 1.0;
pub const K_MAX: f64 = 100.0;
/// Number of recent scores averaged by the adaptive schedule.
pub const ADAPTIVE_WINDOW: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlopeMode {
    Fixed,
    Interval,
    Adaptive,
}

impl std::str::FromStr for SlopeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(SlopeMode::Fixed),
            "interval" => Ok(SlopeMode::Interval),
            "adaptive" => Ok(SlopeMode::Adaptive),
            other => Err(Error::Config(format!("unknown slope mode {other:?}"))),
        }
    }
}

/// Maps raw mean episode reward linearly from `[floor, ceil]` onto the
/// `[0, 100]` score the adaptive schedule consumes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreNormalizer {
    pub floor: f64,
    pub ceil: f64,
}

impl Default for ScoreNormalizer {
    fn default() -> Self {
        Self {
            floor: -200.0,
            ceil: 450.0,
        }
    }
}

impl ScoreNormalizer {
    pub fn normalize(&self, raw: f64) -> f64 {
        (100.0 * (raw - self.floor) / (self.ceil - self.floor)).clamp(0.0, 100.0)
    }
}

/// Surrogate slope `k` over training, always within `[K_MIN, K_MAX]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlopeSchedule {
    mode: SlopeMode,
    k: f64,
    /// Last `ADAPTIVE_WINDOW + 1` scores, enough for a full window of
    /// first differences.
    scores: VecDeque<f64>,
    /// `(epoch, k)` breakpoints for interval mode, epochs increasing.
    intervals: Vec<(usize, f64)>,
    /// Scheduling order; carried through configs, unused.
    pub scheduling_order: u32,
}

impl SlopeSchedule {
    pub fn fixed(k: f64) -> Self {
        Self::with_mode(SlopeMode::Fixed, k, Vec::new())
    }

    pub fn adaptive(k_start: f64) -> Self {
        Self::with_mode(SlopeMode::Adaptive, k_start, Vec::new())
    }

    /// Breakpoints must start at epoch 0, have strictly increasing epochs and
    /// non-decreasing slopes.
    pub fn interval(breakpoints: Vec<(usize, f64)>) -> Result<Self> {
        match breakpoints.first() {
            Some((0, _)) => {}
            _ => return Err(Error::Config("interval schedule must start at epoch 0".into())),
        }
        for w in breakpoints.windows(2) {
            if w[1].0 <= w[0].0 || w[1].1 < w[0].1 {
                return Err(Error::Config(format!(
                    "interval breakpoints must increase in epoch and not decrease in k: {:?} then {:?}",
                    w[0], w[1]
                )));
            }
        }
        let k0 = breakpoints[0].1;
        Ok(Self::with_mode(SlopeMode::Interval, k0, breakpoints))
    }

    /// `k` doubles every `every` epochs from `start` until it reaches `K_MAX`.
    pub fn doubling_interval(start: f64, every: usize) -> Result<Self> {
        let mut points = vec![(0, start.clamp(K_MIN, K_MAX))];
        let mut k = start;
        let mut epoch = 0;
        while k < K_MAX && every > 0 {
            k = (k * 2.0).min(K_MAX);
            epoch += every;
            points.push((epoch, k));
        }
        Self::interval(points)
    }

    fn with_mode(mode: SlopeMode, k: f64, intervals: Vec<(usize, f64)>) -> Self {
        Self {
            mode,
            k: k.clamp(K_MIN, K_MAX),
            scores: VecDeque::with_capacity(ADAPTIVE_WINDOW + 1),
            intervals,
            scheduling_order: 3,
        }
    }

    pub fn mode(&self) -> SlopeMode {
        self.mode
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    /// Pushes a normalized score and recomputes
    /// `k = mean(0.5·r) + mean(0.5·r')` over the last ten scores and their
    /// first differences, clamped to `[1, 100]`. Before the window fills the
    /// means run over whatever is available.
    pub fn update_adaptive(&mut self, score: f64) -> Result<f64> {
        if self.mode != SlopeMode::Adaptive {
            return Err(Error::Contract(format!(
                "adaptive update called on a {:?} schedule",
                self.mode
            )));
        }
        if !score.is_finite() {
            return Err(Error::Contract(format!("score must be finite, got {score}")));
        }
        if self.scores.len() == ADAPTIVE_WINDOW + 1 {
            self.scores.pop_front();
        }
        self.scores.push_back(score);

        let n = self.scores.len();
        let recent = n.min(ADAPTIVE_WINDOW);
        let mean_r = self.scores.iter().skip(n - recent).sum::<f64>() / recent as f64;
        let diffs: Vec<f64> = self
            .scores
            .iter()
            .zip(self.scores.iter().skip(1))
            .map(|(a, b)| b - a)
            .collect();
        let mean_dr = if diffs.is_empty() {
            0.0
        } else {
            diffs.iter().sum::<f64>() / diffs.len() as f64
        };
        self.k = (0.5 * mean_r + 0.5 * mean_dr).clamp(K_MIN, K_MAX);
        Ok(self.k)
    }

    /// Slope in effect during `epoch` for interval mode.
    pub fn interval_k(&self, epoch: usize) -> f64 {
        self.intervals
            .iter()
            .take_while(|(e, _)| *e <= epoch)
            .last()
            .map_or(self.k, |&(_, k)| k)
            .clamp(K_MIN, K_MAX)
    }

    /// Advances the schedule at the start of `epoch` (interval mode).
    pub fn begin_epoch(&mut self, epoch: usize) -> f64 {
        if self.mode == SlopeMode::Interval {
            self.k = self.interval_k(epoch);
        }
        self.k
    }

    /// Feeds an end-of-epoch evaluation result (adaptive mode only).
    pub fn end_epoch(&mut self, raw_reward: f64, normalizer: &ScoreNormalizer) -> Result<f64> {
        if self.mode == SlopeMode::Adaptive {
            self.update_adaptive(normalizer.normalize(raw_reward))
        } else {
            Ok(self.k)
        }
    }
}
