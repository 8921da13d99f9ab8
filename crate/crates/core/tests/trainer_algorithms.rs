use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spikerl::env::{EnvConfig, QuadrotorEnv, ACT_DIM, OBS_DIM};
use spikerl::networks::{soft_update, Activation, Dense, LifParams, MlpNetwork, SnnPolicy, SpikeMode};
use spikerl::replay::{ReplayBuffer, ReplayConfig, SequenceBatch, Source, Transition};
use spikerl::trainer::*;
use spikerl::Error;

fn small_env(max_steps: usize, crash: bool) -> EnvConfig {
    let mut env = EnvConfig::default();
    env.termination.max_steps = max_steps;
    env.termination.crash_enabled = crash;
    env
}

fn small_replay() -> ReplayConfig {
    ReplayConfig {
        capacity: 100_000,
        n_seq: 20,
        n_warmup: 10,
        stride: 5,
        align_tail: true,
    }
}

fn small_nets() -> NetworkConfig {
    NetworkConfig {
        actor_hidden: vec![16, 16],
        critic_hidden: vec![32],
        guide_hidden: vec![16],
        history_len: 32,
        ..NetworkConfig::default()
    }
}

fn hover_guide(seed: u64) -> MlpNetwork {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = MlpNetwork::new(&[privileged_dim(OBS_DIM, 32, ACT_DIM), 16, ACT_DIM], Activation::Relu, &mut rng).unwrap();
    bias_output_layer(&mut g.layers, 0.667, 0.0);
    g
}

fn small_run(method: Method) -> RunConfig {
    RunConfig {
        method,
        seed: 11,
        epochs: 4,
        episodes_per_epoch: 2,
        gradient_steps_per_epoch: 4,
        batch_size: 4,
        eval_episodes: 2,
        env: small_env(60, false),
        replay: small_replay(),
        networks: small_nets(),
        dataset_episodes: 3,
        curriculum: CurriculumSchedule {
            enabled: false,
            every: None,
        },
        ..RunConfig::default()
    }
}

fn random_batch(seed: u64, slices: usize) -> SequenceBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf = ReplayBuffer::new(small_replay()).unwrap();
    for ep in 0..3 {
        let len = 40 + 7 * ep;
        let tr: Vec<Transition> = (0..len)
            .map(|t| Transition {
                s: (0..OBS_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                a: (0..ACT_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                r: rng.gen_range(-1.0..1.0),
                d: t + 1 == len,
                truncated: false,
                s_next: (0..OBS_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                source: if t < 20 { Source::Guide } else { Source::Policy },
            })
            .collect();
        buf.push_episode(tr).unwrap();
    }
    SequenceBatch::from_slices(&buf.sample(slices, &mut rng).unwrap(), 32).unwrap()
}

fn test_policy(seed: u64) -> SnnPolicy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SnnPolicy::new(&[OBS_DIM, 16, 16, ACT_DIM], LifParams::default(), 5.0, &mut rng).unwrap()
}

fn test_critic(seed: u64) -> TwinCritic {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    TwinCritic::new(privileged_dim(OBS_DIM, 32, ACT_DIM), ACT_DIM, &[32], 1e-3, &mut rng).unwrap()
}

#[test]
fn lambda_trace_is_exact() {
    let mut trainer = Trainer::new(small_run(Method::Td3bcJsrl)).unwrap();
    trainer.set_guide(hover_guide(1)).unwrap();
    trainer.prepare().unwrap();
    trainer.run(None).unwrap();
    assert_eq!(trainer.history.len(), 4);
    for row in &trainer.history {
        assert_eq!(row.lambda, 0.2 * 0.99f64.powi(row.epoch as i32));
    }
}

#[test]
fn soft_update_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let source = vec![Dense::uniform(5, 3, &mut rng)];
    let start = vec![Dense::uniform(5, 3, &mut rng)];
    let mut target = start.clone();
    let tau = 0.01;
    for n in 1..=300 {
        let before = target.clone();
        soft_update(&mut target, &source, tau);
        for ((t, b), s) in target[0].weights.iter().zip(before[0].weights.iter()).zip(source[0].weights.iter()) {
            assert!((t - s).abs() <= (1.0 - tau) * (b - s).abs() + 1e-15);
        }
        let decay = (1.0 - tau).powi(n);
        for ((t, s0), s) in target[0].weights.iter().zip(start[0].weights.iter()).zip(source[0].weights.iter()) {
            assert!((t - (s + decay * (s0 - s))).abs() < 1e-12);
        }
    }
}

#[test]
fn critic_reaches_fixed_point_of_self_loop() {
    // one state, one action, r = 1, γ = 0.9: Q* = 1 / (1 − γ) = 10
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut critic = TwinCritic::new(2, 1, &[16], 3e-3, &mut rng).unwrap();
    let td3 = Td3Config {
        gamma: 0.9,
        tau: 0.05,
        ..Td3Config::default()
    };
    let x = Array2::from_shape_vec((1, 2), vec![0.3, -0.2]).unwrap();
    let a = Array2::from_elem((1, 1), 0.5);
    let batch = TransitionBatch {
        x: x.clone(),
        a: a.clone(),
        r: Array1::from_elem(1, 1.0),
        d: Array1::zeros(1),
        x_next: x.clone(),
        a_next: a.clone(),
    };
    for _ in 0..20_000 {
        critic.update(&batch, &td3).unwrap();
        critic.soft_update_targets(td3.tau);
    }
    let q = critic.q1(x.view(), a.view()).unwrap()[0];
    assert!((q - 10.0).abs() < 1e-2, "Q = {q}");
}

#[test]
fn identical_twins_make_min_a_no_op() {
    let mut critic = test_critic(5);
    critic.target[1] = critic.target[0].clone();
    let batch = {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let w = privileged_dim(OBS_DIM, 32, ACT_DIM);
        TransitionBatch {
            x: Array2::from_shape_simple_fn((8, w), || rng.gen_range(-1.0..1.0)),
            a: Array2::from_shape_simple_fn((8, ACT_DIM), || rng.gen_range(-1.0..1.0)),
            r: Array1::from_shape_simple_fn(8, || rng.gen_range(-1.0..1.0)),
            d: Array1::zeros(8),
            x_next: Array2::from_shape_simple_fn((8, w), || rng.gen_range(-1.0..1.0)),
            a_next: Array2::from_shape_simple_fn((8, ACT_DIM), || rng.gen_range(-1.0..1.0)),
        }
    };
    let y = critic.targets(&batch, 0.99).unwrap();
    let input = ndarray::concatenate(ndarray::Axis(1), &[batch.x_next.view(), batch.a_next.view()]).unwrap();
    let q = critic.target[0].forward_batch(input.view()).unwrap();
    for i in 0..8 {
        assert_eq!(y[i], batch.r[i] + 0.99 * q[[i, 0]]);
    }
}

#[test]
fn masked_steps_do_not_leak_into_gradients() {
    let policy = test_policy(7);
    let critic = test_critic(8);
    let batch = random_batch(9, 4);
    let objective = ActorObjective {
        alpha: Some(2.0),
        lambda_bc: 0.2,
        bc_guide_only: false,
    };
    let base = actor_gradients(&policy, Some(&critic), &batch, &objective, SpikeMode::Smooth).unwrap();
    assert!(base.masked_in > 0);
    let mut perturbed = batch.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for t in 0..perturbed.steps() {
        for b in 0..perturbed.batch() {
            if !perturbed.loss_mask[[t, b]] {
                for j in 0..ACT_DIM {
                    perturbed.actions[t][[b, j]] += rng.gen_range(-5.0..5.0);
                }
                perturbed.from_guide[[t, b]] = !perturbed.from_guide[[t, b]];
            }
        }
    }
    let again = actor_gradients(&policy, Some(&critic), &perturbed, &objective, SpikeMode::Smooth).unwrap();
    assert_eq!(base, again);
}

#[test]
fn warm_up_only_loss_gives_zero_gradients() {
    let policy = test_policy(11);
    let batch = random_batch(12, 3);
    let (actions, tape) = policy.forward_batch(&batch.obs, None, SpikeMode::Smooth).unwrap();
    let warm = 10;
    let grads: Vec<Array2<f64>> = actions
        .iter()
        .enumerate()
        .map(|(t, a)| if t < warm { Array2::ones(a.raw_dim()) } else { Array2::zeros(a.raw_dim()) })
        .collect();
    let mask = Array2::from_shape_fn((batch.steps(), batch.batch()), |(t, _)| t < warm);
    let inverse = Array2::from_shape_fn(mask.raw_dim(), |(t, b)| !mask[[t, b]]);
    let g = policy.backward(&tape, &grads, inverse.view(), 5.0).unwrap();
    assert_eq!(g.l2_norm(), 0.0);
    let g = policy.backward(&tape, &grads, mask.view(), 5.0).unwrap();
    assert!(g.l2_norm() > 0.0);
}

#[test]
fn all_masked_batch_is_a_zero_update() {
    let mut learner = ActorLearner::new(test_policy(13), 1e-3);
    let before = learner.actor.clone();
    let mut batch = random_batch(14, 2);
    batch.loss_mask.fill(false);
    let objective = ActorObjective {
        alpha: None,
        lambda_bc: 1.0,
        bc_guide_only: false,
    };
    assert_eq!(learner.update(None, &batch, &objective, None).unwrap(), 0.0);
    assert_eq!(learner.actor.layers, before.layers);
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[test]
fn objective_limits() {
    let policy = test_policy(15);
    let critic = test_critic(16);
    let batch = random_batch(17, 4);
    let bc = actor_gradients(
        &policy,
        None,
        &batch,
        &ActorObjective {
            alpha: None,
            lambda_bc: 1.0,
            bc_guide_only: false,
        },
        SpikeMode::Spiking,
    )
    .unwrap();
    let heavy = actor_gradients(
        &policy,
        Some(&critic),
        &batch,
        &ActorObjective {
            alpha: Some(2.0),
            lambda_bc: 1e8,
            bc_guide_only: false,
        },
        SpikeMode::Spiking,
    )
    .unwrap();
    assert!(cosine(&bc.grads.flatten(), &heavy.grads.flatten()) > 1.0 - 1e-9);

    // λ = 0: loss is −α·mean(Q)/mean|Q|
    let td3 = actor_gradients(
        &policy,
        Some(&critic),
        &batch,
        &ActorObjective {
            alpha: Some(2.0),
            lambda_bc: 0.0,
            bc_guide_only: false,
        },
        SpikeMode::Spiking,
    )
    .unwrap();
    let (actions, _) = policy.forward_batch(&batch.obs, None, SpikeMode::Spiking).unwrap();
    let (mut sum, mut abs) = (0.0, 0.0);
    for t in 0..batch.steps() {
        for b in 0..batch.batch() {
            if batch.loss_mask[[t, b]] {
                let mut x: Vec<f64> = batch.obs[t].row(b).to_vec();
                x.extend(batch.history[t].row(b).iter());
                let a: Vec<f64> = actions[t].row(b).iter().map(|v| v.clamp(-2.0, 2.0)).collect();
                let x = Array2::from_shape_vec((1, x.len()), x).unwrap();
                let a = Array2::from_shape_vec((1, ACT_DIM), a).unwrap();
                let q = critic.q1(x.view(), a.view()).unwrap()[0];
                sum += q;
                abs += q.abs();
            }
        }
    }
    assert!((td3.loss - (-2.0 * sum / abs)).abs() < 1e-9);
}

#[test]
fn jsrl_rollout_hands_over_after_guide_phase() {
    let guide = hover_guide(18);
    let mut env = QuadrotorEnv::new(small_env(120, false)).unwrap();
    let mut policy = test_policy(19);
    let mut rng = stream_rng(3, Stream::Rollout, 0);
    let ep = jsrl_rollout(&mut env, Some(&guide), &mut policy, 60, 0.1, 32, &mut rng).unwrap();
    assert_eq!(ep.len(), 120);
    let first_policy = ep.transitions.iter().position(|t| t.source == Source::Policy).unwrap();
    assert_eq!(first_policy, 60);
    assert!(ep.transitions[60..].iter().all(|t| t.source == Source::Policy));
    assert!(ep.transitions[60..].iter().flat_map(|t| &t.a).all(|a| a.abs() <= ACTION_LIMIT));
    let h0 = ActionHistory::new(32, ACT_DIM);
    assert_eq!(ep.transitions[0].a, guide.forward(&privileged_input(&ep.transitions[0].s, &h0)).unwrap());
    assert_eq!(ep.transitions.last().map(|t| (t.d, t.truncated)), Some((false, true)));
}

#[test]
fn schedule_endpoints_of_the_guide_share() {
    let guide = hover_guide(20);
    let mut env = QuadrotorEnv::new(small_env(500, false)).unwrap();
    for (n, guided) in [(0, 500), (450, 50)] {
        let mut policy = test_policy(21);
        let steps = guide_steps_for(n, 500, 50);
        let mut rng = stream_rng(4, Stream::Rollout, n as u64);
        let ep = jsrl_rollout(&mut env, Some(&guide), &mut policy, steps, 0.1, 32, &mut rng).unwrap();
        assert_eq!(ep.guide_steps(), guided);
        assert!(ep.transitions[..guided].iter().all(|t| t.source == Source::Guide));
    }
}

#[test]
fn policy_state_is_warm_after_guide_phase() {
    let guide = hover_guide(22);
    let mut env = QuadrotorEnv::new(small_env(50, false)).unwrap();
    let mut policy = test_policy(23);
    policy.lif = LifParams {
        beta: 0.9,
        threshold: 1.0,
    };
    let mut rng = stream_rng(5, Stream::Rollout, 0);
    jsrl_rollout(&mut env, Some(&guide), &mut policy, 50, 0.0, 32, &mut rng).unwrap();
    assert!(!policy.state().is_zero());
}

#[test]
fn rollout_without_guide_is_rejected_when_guide_steps_requested() {
    let mut env = QuadrotorEnv::new(small_env(50, false)).unwrap();
    let mut policy = test_policy(24);
    let mut rng = stream_rng(6, Stream::Rollout, 0);
    assert!(matches!(
        jsrl_rollout(&mut env, None, &mut policy, 10, 0.0, 32, &mut rng),
        Err(Error::Contract(_))
    ));
}

#[test]
fn guide_criterion_on_debug_and_full_gravity_envs() {
    let nets = small_nets();
    let td3 = Td3Config::default();
    let quick = GuideConfig {
        batch_size: 32,
        episodes_per_epoch: 1,
        gradient_steps_per_epoch: 2,
        max_epochs: 1,
        init_action_bias: None,
        ..GuideConfig::default()
    };
    let mut debug = small_env(80, false);
    debug.drone.gravity = 0.0;
    let report = train_guide(&debug, &nets, &td3, &quick, 50, 0).unwrap();
    assert_eq!(report.epochs, 1);
    assert!(guide_ready(&report.eval, 50));

    let full = small_env(80, true);
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let random = MlpNetwork::new(&[146, 16, 4], Activation::Relu, &mut rng).unwrap();
    let eval = evaluate_guide(&random, &full, 10, 32, 0, 0).unwrap();
    assert!(!guide_ready(&eval, 50));
    assert!(matches!(train_guide(&full, &nets, &td3, &quick, 50, 0), Err(Error::GuideFailed(_))));

    let passing = EvalStats {
        rewards: vec![0.0; 10],
        lengths: vec![50; 10],
    };
    assert!(guide_ready(&passing, 50));
}

#[test]
fn offline_methods_never_step_the_env_after_loading() {
    for method in [Method::Bc, Method::Td3bc] {
        let cfg = small_run(method);
        let report = run_with_guide(&cfg, Some(hover_guide(26))).unwrap();
        assert_eq!(report.counters.collected, 0, "{method:?}");
        assert_eq!(report.counters.dataset, 3 * 60);
        assert_eq!(report.metrics.len(), 4);
        assert!(report.metrics.iter().all(|m| m.lambda == 1.0));
    }
}

#[test]
fn offline_dataset_round_trips_through_the_episode_log() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_run(Method::Bc);
    let mut trainer = Trainer::new(cfg.clone()).unwrap();
    trainer.set_guide(hover_guide(27)).unwrap();
    trainer.prepare().unwrap();
    let log = dir.path().join("guide.eplog");
    trainer.buffer.save_log(&log).unwrap();

    let from_log = RunConfig {
        dataset: Some(log),
        ..cfg
    };
    let mut t2 = Trainer::new(from_log).unwrap();
    assert!(!t2.needs_guide());
    t2.prepare().unwrap();
    assert_eq!(t2.buffer.len_transitions(), trainer.buffer.len_transitions());
    t2.run(None).unwrap();
    assert_eq!(t2.counters.collected + t2.counters.dataset, 0);
}

#[test]
fn runs_are_deterministic_and_write_a_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let mut outs = Vec::new();
    for name in ["a", "b"] {
        let cfg = RunConfig {
            out: Some(dir.path().join(name)),
            ..small_run(Method::Td3bcJsrl)
        };
        run_with_guide(&cfg, Some(hover_guide(28))).unwrap();
        outs.push(dir.path().join(name));
    }
    for file in ["config.toml", "VERSION", "metrics.csv", "checkpoint_final.json", "guide.json"] {
        assert!(outs[0].join(file).exists(), "{file}");
    }
    let a = std::fs::read(outs[0].join("metrics.csv")).unwrap();
    let b = std::fs::read(outs[1].join("metrics.csv")).unwrap();
    assert_eq!(a, b);
    let header = String::from_utf8(a).unwrap();
    assert!(header.starts_with(
        "epoch,mean_reward,mean_episode_len,lambda,k_slope,curriculum_stage,critic_loss,actor_loss\n"
    ));
    assert_eq!(
        std::fs::read(outs[0].join("checkpoint_final.json")).unwrap(),
        std::fs::read(outs[1].join("checkpoint_final.json")).unwrap()
    );
    let snapshot = RunConfig::from_file(&outs[0].join("config.toml")).unwrap();
    assert_eq!(snapshot.seed, 11);
}

#[test]
fn td3_collects_with_the_policy_only() {
    let mut trainer = Trainer::new(small_run(Method::Td3)).unwrap();
    assert!(!trainer.needs_guide());
    trainer.prepare().unwrap();
    trainer.run(None).unwrap();
    assert!(trainer.counters.collected > 0);
    assert!(trainer.buffer.episodes().flat_map(|e| &e.transitions).all(|t| t.source == Source::Policy));
    assert!(trainer.history.iter().all(|m| m.lambda == 0.0));
}

#[test]
fn divergence_aborts_with_a_dump() {
    let dir = tempfile::tempdir().unwrap();
    let mut trainer = Trainer::new(small_run(Method::Bc)).unwrap();
    trainer.set_guide(hover_guide(29)).unwrap();
    trainer.prepare().unwrap();
    trainer.actor.actor.layers[2].bias[0] = f64::NAN;
    let err = trainer.run(Some(dir.path())).unwrap_err();
    assert!(matches!(err, Error::Diverged(_)), "{err}");
    assert!(dir.path().join("diverged.json").exists());
}

#[test]
fn desk_config_parses() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk_hover.toml");
    let cfg = RunConfig::from_file(&path).unwrap();
    cfg.validate().unwrap();
    assert_eq!(cfg.env.termination.max_steps, 200);
    assert!(!cfg.curriculum.enabled);
    assert_eq!(cfg.curriculum_stage(cfg.epochs - 1), 0);
    assert_eq!(cfg.td3, Td3Config::default());
}
