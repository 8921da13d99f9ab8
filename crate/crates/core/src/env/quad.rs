use std::path::Path;

use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::drone::{integrate, DroneParams, QuadrotorState};
use super::reward::{reward, CurriculumRewardConfig};
use crate::error::{check_dim, Error, Result};

pub const OBS_DIM: usize = 18;
pub const ACT_DIM: usize = 4;

/// How attitude fills the observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObsEncoding {
    /// p, v, rotation matrix (row-major, 9), body rates.
    #[default]
    RotationMatrix,
    /// p, v, (θ, φ, ψ), body rates, six zero pads.
    Euler,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoneReason {
    None,
    Crash,
    Timeout,
}

impl DoneReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DoneReason::None => "none",
            DoneReason::Crash => "crash",
            DoneReason::Timeout => "timeout",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TerminationConfig {
    pub max_steps: usize,
    /// When false only the step limit ends an episode.
    pub crash_enabled: bool,
    pub min_altitude: f64,
    /// Roll or pitch beyond this (degrees) is a crash.
    pub max_tilt_deg: f64,
    /// Distance from the target beyond this (m) is a crash.
    pub max_distance: f64,
}

impl Default for TerminationConfig {
    fn default() -> Self {
        Self {
            max_steps: 500,
            crash_enabled: true,
            min_altitude: 0.0,
            max_tilt_deg: 80.0,
            max_distance: 2.5,
        }
    }
}

/// Half-widths of the uniform initial-state perturbations around hover at
/// the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResetConfig {
    /// m, per axis
    pub position: f64,
    /// m/s, per axis
    pub velocity: f64,
    /// rad, roll and pitch
    pub tilt: f64,
    /// rad
    pub yaw: f64,
    /// rad/s, per axis
    pub rates: f64,
}

impl Default for ResetConfig {
    fn default() -> Self {
        Self {
            position: 0.3,
            velocity: 0.1,
            tilt: 0.1,
            yaw: 0.1,
            rates: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub drone: DroneParams,
    pub reward: CurriculumRewardConfig,
    pub termination: TerminationConfig,
    pub reset: ResetConfig,
    pub obs_encoding: ObsEncoding,
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.drone.validate()?;
        self.reward.validate()?;
        if self.termination.max_steps == 0 {
            return Err(Error::Config("max_steps must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub reason: DoneReason,
    /// The integrator produced a non-finite state; the episode ends as a
    /// crash and the last finite state is kept.
    pub diverged: bool,
}

pub fn observe(state: &QuadrotorState, encoding: ObsEncoding) -> Vec<f64> {
    let mut obs = Vec::with_capacity(OBS_DIM);
    obs.extend(state.position.iter());
    obs.extend(state.velocity.iter());
    match encoding {
        ObsEncoding::RotationMatrix => {
            let r = state.rotation_matrix();
            for i in 0..3 {
                obs.extend((0..3).map(|j| r[(i, j)]));
            }
            obs.extend(state.angular_velocity.iter());
        }
        ObsEncoding::Euler => {
            obs.extend(state.angles().iter());
            obs.extend(state.angular_velocity.iter());
            obs.resize(OBS_DIM, 0.0);
        }
    }
    obs
}

/// Quadrotor hover task at the control rate set by `DroneParams::dt`.
#[derive(Debug, Clone)]
pub struct QuadrotorEnv {
    config: EnvConfig,
    state: QuadrotorState,
    steps: usize,
    done: bool,
}

impl QuadrotorEnv {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let target = Vector3::from(config.reward.p_des);
        let state = QuadrotorState::at_rest(target, config.drone.hover_rpm());
        Ok(Self {
            config,
            state,
            steps: 0,
            done: false,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> &QuadrotorState {
        &self.state
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn curriculum(&self) -> &CurriculumRewardConfig {
        &self.config.reward
    }

    pub fn set_curriculum(&mut self, reward: CurriculumRewardConfig) -> Result<()> {
        reward.validate()?;
        self.config.reward = reward;
        Ok(())
    }

    pub fn observation(&self) -> Vec<f64> {
        observe(&self.state, self.config.obs_encoding)
    }

    /// Samples a perturbed hover state around the target with motors at
    /// hover rpm.
    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        let r = &self.config.reset;
        let mut sym = |half: f64| if half > 0.0 { rng.gen_range(-half..=half) } else { 0.0 };
        let target = Vector3::from(self.config.reward.p_des);
        let position = target + Vector3::new(sym(r.position), sym(r.position), sym(r.position));
        let velocity = Vector3::new(sym(r.velocity), sym(r.velocity), sym(r.velocity));
        let (roll, pitch, yaw) = (sym(r.tilt), sym(r.tilt), sym(r.yaw));
        let rates = Vector3::new(sym(r.rates), sym(r.rates), sym(r.rates));
        let state = QuadrotorState {
            position,
            velocity,
            orientation: UnitQuaternion::from_euler_angles(roll, pitch, yaw),
            angular_velocity: rates,
            motor_rpm: [self.config.drone.hover_rpm(); 4],
        };
        self.reset_to(state)
    }

    pub fn reset_to(&mut self, state: QuadrotorState) -> Vec<f64> {
        self.state = state;
        self.steps = 0;
        self.done = false;
        self.observation()
    }

    fn crashed(&self, s: &QuadrotorState) -> bool {
        let t = &self.config.termination;
        if !t.crash_enabled {
            return false;
        }
        let (roll, pitch, _) = s.orientation.euler_angles();
        let max_tilt = t.max_tilt_deg.to_radians();
        s.position.z < t.min_altitude
            || roll.abs() > max_tilt
            || pitch.abs() > max_tilt
            || (s.position - Vector3::from(self.config.reward.p_des)).norm() > t.max_distance
    }

    /// Applies `action` (four commands in `[-2, 2]`, clipped) for one period.
    pub fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        check_dim("action", ACT_DIM, action.len())?;
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::Contract(format!("action must be finite, got {action:?}")));
        }
        if self.done {
            return Err(Error::Contract("step called on a finished episode; reset first".into()));
        }
        let clipped: Vec<f64> = action.iter().map(|a| a.clamp(-2.0, 2.0)).collect();
        let drone = &self.config.drone;
        let rpm_des = [0, 1, 2, 3].map(|i| drone.action_to_rpm(clipped[i]));
        let next = integrate(drone, &self.state, &rpm_des);
        self.steps += 1;

        let diverged = !next.is_finite();
        if !diverged {
            self.state = next;
        }
        let r = reward(
            &self.state.position,
            &self.state.velocity,
            &self.state.angles(),
            &clipped,
            &self.config.reward,
        );
        let reason = if diverged || self.crashed(&self.state) {
            DoneReason::Crash
        } else if self.steps >= self.config.termination.max_steps {
            DoneReason::Timeout
        } else {
            DoneReason::None
        };
        self.done = reason != DoneReason::None;
        Ok(StepOutcome {
            obs: self.observation(),
            reward: r,
            done: self.done,
            reason,
            diverged,
        })
    }
}

/// Per-step record of physical state, action and reward.
#[derive(Debug, Clone, Default)]
pub struct TrajectoryLog {
    rows: Vec<Vec<String>>,
}

impl TrajectoryLog {
    pub const HEADER: [&'static str; 19] = [
        "t", "x", "y", "z", "vx", "vy", "vz", "theta", "phi", "psi", "p", "q", "r", "m1", "m2", "m3", "m4", "reward",
        "done_reason",
    ];

    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn record(&mut self, t: f64, state: &QuadrotorState, action: &[f64], reward: f64, reason: DoneReason) {
        let mut row = vec![t.to_string()];
        row.extend(state.position.iter().map(f64::to_string));
        row.extend(state.velocity.iter().map(f64::to_string));
        row.extend(state.angles().iter().map(f64::to_string));
        row.extend(state.angular_velocity.iter().map(f64::to_string));
        row.extend(action.iter().map(f64::to_string));
        row.push(reward.to_string());
        row.push(reason.as_str().to_string());
        self.rows.push(row);
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(Self::HEADER)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn env() -> QuadrotorEnv {
        QuadrotorEnv::new(EnvConfig::default()).unwrap()
    }

    #[test]
    fn observation_layouts_are_eighteen_wide() {
        let mut e = env();
        let o = e.reset(&mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(o.len(), OBS_DIM);
        let s = e.state().clone();
        let r = s.rotation_matrix();
        assert_eq!(o[6..15], [r[(0, 0)], r[(0, 1)], r[(0, 2)], r[(1, 0)], r[(1, 1)], r[(1, 2)], r[(2, 0)], r[(2, 1)], r[(2, 2)]]);
        let euler = observe(&s, ObsEncoding::Euler);
        assert_eq!(euler.len(), OBS_DIM);
        assert_eq!(euler[6..9], s.angles().as_slice()[..]);
        assert!(euler[12..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reset_is_deterministic_and_bounded() {
        let mut e = env();
        let a = e.reset(&mut ChaCha8Rng::seed_from_u64(5));
        let b = e.reset(&mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
        for seed in 0..50 {
            e.reset(&mut ChaCha8Rng::seed_from_u64(seed));
            let d = e.state().position - Vector3::new(0.0, 0.0, 1.0);
            assert!(d.iter().all(|v| v.abs() <= 0.3));
        }
    }

    #[test]
    fn tilt_and_distance_crash() {
        let mut e = env();
        let mut s = QuadrotorState::at_rest(Vector3::new(0.0, 0.0, 1.0), e.config().drone.hover_rpm());
        s.orientation = UnitQuaternion::from_euler_angles(85f64.to_radians(), 0.0, 0.0);
        e.reset_to(s.clone());
        let hover = [e.config().drone.hover_action(); 4];
        assert_eq!(e.step(&hover).unwrap().reason, DoneReason::Crash);
        s.orientation = UnitQuaternion::identity();
        s.position = Vector3::new(2.6, 0.0, 1.0);
        e.reset_to(s);
        assert_eq!(e.step(&hover).unwrap().reason, DoneReason::Crash);
    }

    #[test]
    fn stepping_after_done_or_with_bad_action_errors() {
        let mut e = env();
        e.reset(&mut ChaCha8Rng::seed_from_u64(0));
        assert!(e.step(&[0.0; 3]).is_err());
        assert!(e.step(&[f64::NAN, 0.0, 0.0, 0.0]).is_err());
        let mut s = e.state().clone();
        s.position.z = -0.5;
        e.reset_to(s);
        assert!(e.step(&[0.0; 4]).unwrap().done);
        assert!(e.step(&[0.0; 4]).is_err());
    }

    #[test]
    fn non_finite_dynamics_end_as_diverged_crash() {
        let mut e = env();
        let mut s = e.state().clone();
        s.angular_velocity.x = f64::INFINITY;
        e.reset_to(s);
        let out = e.step(&[0.0; 4]).unwrap();
        assert!(out.diverged && out.done);
        assert_eq!(out.reason, DoneReason::Crash);
    }

    #[test]
    fn trajectory_log_writes_header_and_rows() {
        let mut e = env();
        let mut log = TrajectoryLog::new();
        e.reset(&mut ChaCha8Rng::seed_from_u64(2));
        for t in 0..3 {
            let out = e.step(&[0.667; 4]).unwrap();
            log.record(t as f64 * 0.01, e.state(), &[0.667; 4], out.reward, out.reason);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.csv");
        log.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert!(text.starts_with("t,x,y,z,vx,vy,vz,theta,phi,psi,p,q,r,m1,m2,m3,m4,reward,done_reason"));
        assert_eq!(text.lines().count(), 4);
    }
}
