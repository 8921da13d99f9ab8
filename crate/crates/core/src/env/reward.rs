use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A coefficient's values at the first and last curriculum stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ramp {
    pub start: f64,
    pub end: f64,
}

impl Ramp {
    pub const fn new(start: f64, end: f64) -> Self {
        Self { start, end }
    }

    /// Value at `stage` of `num_steps` (endpoints returned exactly).
    pub fn at(&self, stage: usize, num_steps: usize) -> f64 {
        let last = num_steps.saturating_sub(1);
        if stage == 0 || last == 0 {
            self.start
        } else if stage >= last {
            self.end
        } else {
            self.start + (stage as f64 / last as f64) * (self.end - self.start)
        }
    }
}

/// Reward coefficients in effect at one stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardCoefficients {
    pub c_rs: f64,
    pub c_rp: f64,
    pub c_rv: f64,
    pub c_rq: f64,
    pub c_ra: f64,
    pub c_rab: f64,
}

/// Survival bonus minus squared-error penalties, with penalty weights that
/// tighten over a staged curriculum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurriculumRewardConfig {
    pub c_rs: Ramp,
    pub c_rp: Ramp,
    pub c_rv: Ramp,
    pub c_rq: Ramp,
    pub c_ra: Ramp,
    pub c_rab: Ramp,
    pub num_steps: usize,
    pub stage: usize,
    pub p_des: [f64; 3],
    pub v_des: [f64; 3],
    pub q_des: [f64; 3],
}

impl Default for CurriculumRewardConfig {
    fn default() -> Self {
        Self {
            c_rs: Ramp::new(1.0, 1.0),
            c_rp: Ramp::new(1.0, 3.5),
            c_rv: Ramp::new(0.01, 0.10),
            c_rq: Ramp::new(0.25, 0.25),
            c_ra: Ramp::new(0.14, 0.50),
            c_rab: Ramp::new(0.667, 0.667),
            num_steps: 6,
            stage: 0,
            p_des: [0.0, 0.0, 1.0],
            v_des: [0.0; 3],
            q_des: [0.0; 3],
        }
    }
}

impl CurriculumRewardConfig {
    pub fn last_stage(&self) -> usize {
        self.num_steps.saturating_sub(1)
    }

    /// `stage / (num_steps − 1)`.
    pub fn progress(&self) -> f64 {
        match self.last_stage() {
            0 => 1.0,
            last => self.stage as f64 / last as f64,
        }
    }

    pub fn coefficients(&self) -> RewardCoefficients {
        let (s, n) = (self.stage, self.num_steps);
        RewardCoefficients {
            c_rs: self.c_rs.at(s, n),
            c_rp: self.c_rp.at(s, n),
            c_rv: self.c_rv.at(s, n),
            c_rq: self.c_rq.at(s, n),
            c_ra: self.c_ra.at(s, n),
            c_rab: self.c_rab.at(s, n),
        }
    }

    pub fn with_stage(mut self, stage: usize) -> Result<Self> {
        if stage > self.last_stage() {
            return Err(Error::Contract(format!(
                "curriculum stage {stage} beyond last stage {}",
                self.last_stage()
            )));
        }
        self.stage = stage;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_steps == 0 {
            return Err(Error::Config("curriculum needs at least one stage".into()));
        }
        if self.stage > self.last_stage() {
            return Err(Error::Config(format!("curriculum stage {} out of range", self.stage)));
        }
        Ok(())
    }
}

/// Moves to the next stage; errors at the last one.
pub fn advance_curriculum(cfg: &CurriculumRewardConfig) -> Result<CurriculumRewardConfig> {
    cfg.clone().with_stage(cfg.stage + 1)
}

/// `C_rs − C_rp‖p−p_des‖² − C_rv‖v−v_des‖² − C_rq‖q−q_des‖² − C_ra‖a−C_rab‖²`.
pub fn reward(
    position: &Vector3<f64>,
    velocity: &Vector3<f64>,
    angles: &Vector3<f64>,
    action: &[f64],
    cfg: &CurriculumRewardConfig,
) -> f64 {
    let c = cfg.coefficients();
    let sq = |x: &Vector3<f64>, target: [f64; 3]| (x - Vector3::from(target)).norm_squared();
    let action_sq: f64 = action.iter().map(|a| (a - c.c_rab).powi(2)).sum();
    c.c_rs - c.c_rp * sq(position, cfg.p_des) - c.c_rv * sq(velocity, cfg.v_des) - c.c_rq * sq(angles, cfg.q_des)
        - c.c_ra * action_sq
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn at_target(cfg: &CurriculumRewardConfig, offset: [f64; 3]) -> f64 {
        let p = Vector3::from(cfg.p_des) + Vector3::from(offset);
        reward(&p, &Vector3::zeros(), &Vector3::zeros(), &[0.667; 4], cfg)
    }

    #[test]
    fn reward_examples() {
        let start = CurriculumRewardConfig::default();
        assert_eq!(at_target(&start, [0.0; 3]), 1.0);
        assert_eq!(at_target(&start, [1.0, 0.0, 0.0]), 0.0);
        let end = start.with_stage(5).unwrap();
        assert_eq!(at_target(&end, [0.0, 0.0, -1.0]), -2.5);
    }

    #[test]
    fn stage_endpoints_and_midpoint() {
        let cfg = CurriculumRewardConfig::default();
        let c0 = cfg.coefficients();
        assert_eq!((c0.c_rp, c0.c_rv, c0.c_ra, c0.c_rq, c0.c_rs, c0.c_rab), (1.0, 0.01, 0.14, 0.25, 1.0, 0.667));
        let c5 = cfg.clone().with_stage(5).unwrap().coefficients();
        assert_eq!((c5.c_rp, c5.c_rv, c5.c_ra, c5.c_rq, c5.c_rs, c5.c_rab), (3.5, 0.10, 0.50, 0.25, 1.0, 0.667));
        let c2 = cfg.with_stage(2).unwrap();
        assert_eq!(c2.progress(), 0.4);
        assert_eq!(c2.coefficients().c_rp, 2.0);
    }

    #[test]
    fn advancing_walks_all_stages_then_errors() {
        let mut cfg = CurriculumRewardConfig::default();
        for s in 1..=5 {
            cfg = advance_curriculum(&cfg).unwrap();
            assert_eq!(cfg.stage, s);
        }
        assert!(advance_curriculum(&cfg).is_err());
    }

    #[test]
    fn penalties_only_tighten() {
        let cfg = CurriculumRewardConfig::default();
        let stages: Vec<RewardCoefficients> =
            (0..6).map(|s| cfg.clone().with_stage(s).unwrap().coefficients()).collect();
        for w in stages.windows(2) {
            assert!(w[1].c_rp >= w[0].c_rp && w[1].c_rv >= w[0].c_rv && w[1].c_ra >= w[0].c_ra);
        }
    }

    proptest! {
        #[test]
        fn reward_bounded_by_survival_bonus(
            stage in 0usize..6,
            p in proptest::array::uniform3(-5.0f64..5.0),
            v in proptest::array::uniform3(-5.0f64..5.0),
            q in proptest::array::uniform3(-3.2f64..3.2),
            a in proptest::array::uniform4(-2.0f64..2.0),
        ) {
            let cfg = CurriculumRewardConfig::default().with_stage(stage).unwrap();
            let r = reward(&Vector3::from(p), &Vector3::from(v), &Vector3::from(q), &a, &cfg);
            prop_assert!(r <= cfg.coefficients().c_rs);
        }
    }
}
