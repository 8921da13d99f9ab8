//! Physical sanity checks on the quadrotor simulator.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spikerl::env::{
    CurriculumRewardConfig, DoneReason, DroneParams, EnvConfig, QuadrotorEnv, QuadrotorState, Ramp, TerminationConfig,
};

fn free_config() -> EnvConfig {
    EnvConfig {
        termination: TerminationConfig {
            crash_enabled: false,
            ..TerminationConfig::default()
        },
        ..EnvConfig::default()
    }
}

#[test]
fn hover_equilibrium_drifts_less_than_a_micrometre() {
    let params = DroneParams::default();
    // independent hover solve for c0 = c1 = 0
    let rpm = (params.mass * params.gravity / (4.0 * params.c2)).sqrt();
    let mut env = QuadrotorEnv::new(EnvConfig::default()).unwrap();
    let start = Vector3::new(0.0, 0.0, 1.0);
    env.reset_to(QuadrotorState::at_rest(start, rpm));
    let action = 4.0 * rpm / params.rpm_max - 2.0;
    env.step(&[action; 4]).unwrap();
    assert!((env.state().position - start).norm() < 1e-6);
}

#[test]
fn zero_thrust_free_fall() {
    let mut env = QuadrotorEnv::new(free_config()).unwrap();
    let z0 = 1.0;
    env.reset_to(QuadrotorState::at_rest(Vector3::new(0.0, 0.0, z0), 0.0));
    let (g, dt) = (9.81, 0.01);
    for n in 1..=60 {
        env.step(&[-2.0; 4]).unwrap();
        let t = n as f64 * dt;
        let exact = z0 - 0.5 * g * t * t;
        // explicit Euler lags the closed form by g·dt·t/2
        let tol = 0.5 * g * dt * t + 1e-12;
        let z = env.state().position.z;
        assert!((z - exact).abs() <= tol, "n={n}: z={z} exact={exact}");
        assert!(env.state().position.xy().norm() < 1e-12);
    }
}

#[test]
fn episode_times_out_at_five_hundred_steps() {
    let mut env = QuadrotorEnv::new(free_config()).unwrap();
    env.reset(&mut ChaCha8Rng::seed_from_u64(0));
    let hover = env.config().drone.hover_action();
    for step in 1..=500 {
        let out = env.step(&[hover; 4]).unwrap();
        if step < 500 {
            assert!(!out.done);
        } else {
            assert!(out.done);
            assert_eq!(out.reason, DoneReason::Timeout);
        }
    }
}

#[test]
fn motor_lag_contracts_by_fixed_factor() {
    let params = DroneParams::default();
    let mut env = QuadrotorEnv::new(free_config()).unwrap();
    env.reset_to(QuadrotorState::at_rest(Vector3::new(0.0, 0.0, 1.0), 0.0));
    let target = params.action_to_rpm(1.0);
    let factor = 1.0 - params.dt / params.tau_motor;
    let mut gap = target;
    for _ in 0..30 {
        env.step(&[1.0; 4]).unwrap();
        let next_gap = target - env.state().motor_rpm[0];
        assert!(next_gap > 0.0 && next_gap < gap);
        assert!((next_gap - factor * gap).abs() < 1e-9 * target);
        gap = next_gap;
    }
}

#[test]
fn survival_only_episode_returns_exactly_500() {
    let zero = Ramp::new(0.0, 0.0);
    let config = EnvConfig {
        reward: CurriculumRewardConfig {
            c_rp: zero,
            c_rv: zero,
            c_rq: zero,
            c_ra: zero,
            ..CurriculumRewardConfig::default()
        },
        ..free_config()
    };
    let mut env = QuadrotorEnv::new(config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    env.reset(&mut rng);
    let mut total = 0.0;
    loop {
        let a: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let out = env.step(&a).unwrap();
        total += out.reward;
        if out.done {
            break;
        }
    }
    assert_eq!(total, 500.0);
}

#[test]
fn same_seed_and_actions_give_bit_identical_trajectories() {
    let run = || {
        let mut env = QuadrotorEnv::new(EnvConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut trace = vec![env.reset(&mut rng)];
        for _ in 0..200 {
            let a: Vec<f64> = (0..4).map(|_| 0.667 + rng.gen_range(-0.05..0.05)).collect();
            let out = env.step(&a).unwrap();
            trace.push(out.obs);
            trace.push(vec![out.reward]);
            if out.done {
                break;
            }
        }
        trace
    };
    assert_eq!(run(), run());
}
