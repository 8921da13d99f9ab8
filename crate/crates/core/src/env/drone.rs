use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical constants of a Crazyflie-class quadrotor in X configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DroneParams {
    /// kg
    pub mass: f64,
    /// Diagonal of the body inertia tensor, kg·m².
    pub inertia: [f64; 3],
    /// Rotor distance from the centre, m.
    pub arm_length: f64,
    /// Yaw torque per newton of thrust, m.
    pub yaw_coefficient: f64,
    /// Thrust polynomial `c0 + c1·rpm + c2·rpm²`, newtons.
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub rpm_max: f64,
    /// First-order motor lag, s.
    pub tau_motor: f64,
    /// m/s²
    pub gravity: f64,
    /// Control period, s.
    pub dt: f64,
    /// Physics sub-steps per control period.
    pub substeps: usize,
}

impl Default for DroneParams {
    fn default() -> Self {
        Self {
            mass: 0.033,
            inertia: [1.66e-5, 1.66e-5, 2.93e-5],
            arm_length: 0.046,
            yaw_coefficient: 0.005964552,
            c0: 0.0,
            c1: 0.0,
            c2: 3.16e-10,
            rpm_max: 24_000.0,
            tau_motor: 0.05,
            gravity: 9.81,
            dt: 0.01,
            substeps: 1,
        }
    }
}

impl DroneParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mass", self.mass),
            ("tau_motor", self.tau_motor),
            ("rpm_max", self.rpm_max),
            ("dt", self.dt),
            ("arm_length", self.arm_length),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.inertia.iter().any(|&j| !(j > 0.0)) {
            return Err(Error::Config("inertia must be positive".into()));
        }
        if self.c2 < 0.0 {
            return Err(Error::Config(format!("c2 must be non-negative, got {}", self.c2)));
        }
        if self.substeps == 0 {
            return Err(Error::Config("substeps must be at least 1".into()));
        }
        if self.dt / self.substeps as f64 > self.tau_motor {
            return Err(Error::Config("physics step exceeds the motor time constant".into()));
        }
        Ok(())
    }

    pub fn thrust(&self, rpm: f64) -> f64 {
        self.c0 + self.c1 * rpm + self.c2 * rpm * rpm
    }

    /// Per-motor rpm whose combined thrust balances gravity.
    pub fn hover_rpm(&self) -> f64 {
        let per_motor = self.mass * self.gravity / 4.0;
        if self.c2 == 0.0 {
            return if self.c1 == 0.0 { 0.0 } else { (per_motor - self.c0) / self.c1 };
        }
        let disc = self.c1 * self.c1 - 4.0 * self.c2 * (self.c0 - per_motor);
        (-self.c1 + disc.max(0.0).sqrt()) / (2.0 * self.c2)
    }

    /// Commanded rpm for an action in `[-2, 2]` (clipped).
    pub fn action_to_rpm(&self, a: f64) -> f64 {
        (a.clamp(-2.0, 2.0) + 2.0) / 4.0 * self.rpm_max
    }

    pub fn rpm_to_action(&self, rpm: f64) -> f64 {
        4.0 * rpm / self.rpm_max - 2.0
    }

    /// Action that holds hover rpm on every motor.
    pub fn hover_action(&self) -> f64 {
        self.rpm_to_action(self.hover_rpm())
    }

    /// Rotor positions (x, y) and spin directions for the X layout:
    /// front-right, rear-right, rear-left, front-left.
    fn rotors(&self) -> [(f64, f64, f64); 4] {
        let d = self.arm_length / std::f64::consts::SQRT_2;
        [(d, -d, -1.0), (-d, -d, 1.0), (-d, d, -1.0), (d, d, 1.0)]
    }
}

/// Rigid-body state. Velocities and position are world frame, angular
/// rates body frame; `orientation` maps body to world.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadrotorState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
    pub angular_velocity: Vector3<f64>,
    pub motor_rpm: [f64; 4],
}

impl QuadrotorState {
    pub fn at_rest(position: Vector3<f64>, rpm: f64) -> Self {
        Self {
            position,
            velocity: Vector3::zeros(),
            orientation: UnitQuaternion::identity(),
            angular_velocity: Vector3::zeros(),
            motor_rpm: [rpm; 4],
        }
    }

    /// Orientation angles `(θ, φ, ψ)` = (pitch, roll, yaw).
    pub fn angles(&self) -> Vector3<f64> {
        let (roll, pitch, yaw) = self.orientation.euler_angles();
        Vector3::new(pitch, roll, yaw)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        *self.orientation.to_rotation_matrix().matrix()
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.velocity.iter().all(|v| v.is_finite())
            && self.orientation.coords.iter().all(|v| v.is_finite())
            && self.angular_velocity.iter().all(|v| v.is_finite())
            && self.motor_rpm.iter().all(|v| v.is_finite())
    }
}

/// Advances `state` by one control period under commanded rpm.
///
/// Per physics sub-step `h`: motors move toward their command by
/// `(rpm_des − rpm)/τ · h`; body-frame thrust and torques are rotated into the
/// world frame; position, velocity and rates take explicit Euler steps and the
/// attitude is advanced by the exact rotation `exp(ω·h)`.
pub fn integrate(params: &DroneParams, state: &QuadrotorState, rpm_des: &[f64; 4]) -> QuadrotorState {
    let h = params.dt / params.substeps as f64;
    let j = Vector3::from(params.inertia);
    let rotors = params.rotors();
    let mut s = state.clone();
    for _ in 0..params.substeps {
        for (rpm, &target) in s.motor_rpm.iter_mut().zip(rpm_des) {
            *rpm += (target - *rpm) / params.tau_motor * h;
        }
        let thrusts = s.motor_rpm.map(|r| params.thrust(r));
        let total: f64 = thrusts.iter().sum();
        let torque = rotors.iter().zip(&thrusts).fold(Vector3::zeros(), |acc, (&(x, y, dir), &t)| {
            acc + Vector3::new(y * t, -x * t, dir * params.yaw_coefficient * t)
        });

        let accel = s.orientation * Vector3::new(0.0, 0.0, total / params.mass) - Vector3::new(0.0, 0.0, params.gravity);
        let w = s.angular_velocity;
        let jw = j.component_mul(&w);
        let alpha = (torque - w.cross(&jw)).component_div(&j);

        s.position += s.velocity * h;
        s.velocity += accel * h;
        s.orientation *= UnitQuaternion::from_scaled_axis(w * h);
        s.angular_velocity += alpha * h;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hover_thrust_balances_gravity() {
        let p = DroneParams::default();
        let rpm = p.hover_rpm();
        assert!((4.0 * p.thrust(rpm) - p.mass * p.gravity).abs() < 1e-12);
        assert!((p.hover_action() - 0.667).abs() < 1e-3);
        assert!((p.action_to_rpm(p.hover_action()) - rpm).abs() < 1e-9);
    }

    #[test]
    fn hover_rpm_with_linear_terms() {
        let p = DroneParams {
            c0: 0.01,
            c1: 2e-6,
            ..DroneParams::default()
        };
        assert!((4.0 * p.thrust(p.hover_rpm()) - p.mass * p.gravity).abs() < 1e-12);
    }

    #[test]
    fn action_mapping_is_affine_and_clipped() {
        let p = DroneParams::default();
        assert_eq!(p.action_to_rpm(-2.0), 0.0);
        assert_eq!(p.action_to_rpm(2.0), p.rpm_max);
        assert_eq!(p.action_to_rpm(0.0), p.rpm_max / 2.0);
        assert_eq!(p.action_to_rpm(7.0), p.rpm_max);
    }

    #[test]
    fn differential_thrust_rolls_and_pitches() {
        let p = DroneParams::default();
        let h = p.hover_rpm();
        let start = QuadrotorState::at_rest(Vector3::new(0.0, 0.0, 1.0), h);
        // more thrust on the left rotors (+y) → positive roll torque
        let mut s = start.clone();
        s.motor_rpm = [h, h, h * 1.05, h * 1.05];
        let next = integrate(&p, &s, &s.motor_rpm.clone());
        assert!(next.angular_velocity.x > 0.0);
        assert!(next.angular_velocity.y.abs() < 1e-9);
        // more thrust on the front rotors (+x) → negative pitch rate
        let mut s = start;
        s.motor_rpm = [h * 1.05, h, h, h * 1.05];
        let next = integrate(&p, &s, &s.motor_rpm.clone());
        assert!(next.angular_velocity.y < 0.0);
    }

    #[test]
    fn validation_rejects_bad_constants() {
        assert!(DroneParams::default().validate().is_ok());
        assert!(DroneParams { c2: -1.0, ..DroneParams::default() }.validate().is_err());
        assert!(DroneParams { tau_motor: 0.0, ..DroneParams::default() }.validate().is_err());
        assert!(DroneParams { substeps: 0, ..DroneParams::default() }.validate().is_err());
    }
}
