use std::sync::Arc;

use ndarray::{s, Array1, Array2};
use rand::Rng;

use super::config::{GuideConfig, NetworkConfig, Td3Config};
use super::learner::{bias_output_layer, smooth_target_actions, DenseActorLearner, TransitionBatch, TwinCritic};
use super::privileged::privileged_dim;
use super::rollout::{evaluate_guide, guide_rollout, stream_rng, EvalStats, Stream};
use crate::env::{EnvConfig, QuadrotorEnv, ACT_DIM, OBS_DIM};
use crate::error::{Error, Result};
use crate::networks::{Activation, Checkpoint, MlpNetwork};
use crate::par;
use crate::replay::{Episode, ReplayBuffer, ReplayConfig};

/// Eval-stream offset so guide evaluations never reuse run evaluation resets.
const GUIDE_EVAL_BASE: u64 = 1 << 32;

#[derive(Debug, Clone)]
pub struct GuideReport {
    pub guide: MlpNetwork,
    pub epochs: usize,
    pub env_steps: usize,
    pub gradient_steps: usize,
    pub eval: EvalStats,
}

/// Critic samples for single transitions, histories rebuilt from their
/// episodes.
pub fn transition_batch<R: Rng + ?Sized>(
    samples: &[(Arc<Episode>, usize)],
    history_len: usize,
    target_actor: &MlpNetwork,
    td3: &Td3Config,
    rng: &mut R,
) -> Result<TransitionBatch> {
    let first = &samples
        .first()
        .ok_or_else(|| Error::Contract("empty transition sample".into()))?
        .0
        .transitions[0];
    let (obs_dim, act_dim) = (first.s.len(), first.a.len());
    let width = obs_dim + history_len * act_dim;
    let n = samples.len();
    let mut x = Array2::zeros((n, width));
    let mut x_next = Array2::zeros((n, width));
    let mut a = Array2::zeros((n, act_dim));
    let mut r = Array1::zeros(n);
    let mut d = Array1::zeros(n);
    for (i, (ep, idx)) in samples.iter().enumerate() {
        let tr = &ep.transitions[*idx];
        x.slice_mut(s![i, ..obs_dim]).assign(&ndarray::aview1(&tr.s));
        x.slice_mut(s![i, obs_dim..])
            .assign(&ndarray::aview1(&ep.action_history(*idx, history_len, act_dim)));
        x_next.slice_mut(s![i, ..obs_dim]).assign(&ndarray::aview1(&tr.s_next));
        x_next
            .slice_mut(s![i, obs_dim..])
            .assign(&ndarray::aview1(&ep.action_history(idx + 1, history_len, act_dim)));
        a.row_mut(i).assign(&ndarray::aview1(&tr.a));
        r[i] = tr.r;
        d[i] = if tr.d { 1.0 } else { 0.0 };
    }
    let mut a_next = target_actor.forward_batch(x_next.view())?;
    smooth_target_actions(&mut a_next, td3, rng);
    Ok(TransitionBatch {
        x,
        a,
        r,
        d,
        x_next,
        a_next,
    })
}

/// True when every episode lasted at least `stop_len` steps.
pub fn guide_ready(eval: &EvalStats, stop_len: usize) -> bool {
    !eval.lengths.is_empty() && eval.lengths.iter().all(|&l| l >= stop_len)
}

/// Trains the privileged dense guide with TD3 until `eval_episodes`
/// consecutive noise-free episodes all reach the stop length.
pub fn train_guide(
    env: &EnvConfig,
    nets: &NetworkConfig,
    td3: &Td3Config,
    cfg: &GuideConfig,
    warm_up: usize,
    seed: u64,
) -> Result<GuideReport> {
    QuadrotorEnv::new(env.clone())?;
    let stop_len = cfg.stop_len.unwrap_or(warm_up);
    let history_len = nets.history_len;
    let input_dim = privileged_dim(OBS_DIM, history_len, ACT_DIM);
    let mut init = stream_rng(seed, Stream::Guide, 0);
    let mut sizes = vec![input_dim];
    sizes.extend_from_slice(&nets.guide_hidden);
    sizes.push(ACT_DIM);
    let mut actor = MlpNetwork::new(&sizes, Activation::Relu, &mut init)?;
    if let Some(b) = cfg.init_action_bias {
        bias_output_layer(&mut actor.layers, b, 0.1);
    }
    let mut learner = DenseActorLearner::new(actor, td3.lr);
    let mut critic = TwinCritic::new(input_dim, ACT_DIM, &nets.critic_hidden, td3.lr, &mut init)?;
    let mut buffer = ReplayBuffer::new(ReplayConfig {
        capacity: cfg.buffer_capacity,
        ..ReplayConfig::default()
    })?;
    let mut sampler = stream_rng(seed, Stream::Sampler, 1 << 20);
    let mut env_steps = 0;
    let mut gradient_steps = 0;

    for epoch in 0..cfg.max_epochs {
        let records = par::map_range(cfg.episodes_per_epoch, |i| {
            let mut e = QuadrotorEnv::new(env.clone())?;
            let mut rng = stream_rng(seed, Stream::Guide, 1 + (epoch * cfg.episodes_per_epoch + i) as u64);
            guide_rollout(&mut e, &learner.actor, td3.explore_sigma, history_len, &mut rng)
        });
        for rec in records {
            let rec = rec?;
            env_steps += rec.len();
            buffer.push_episode(rec.transitions)?;
        }
        if buffer.len_transitions() >= cfg.batch_size {
            for step in 0..cfg.gradient_steps_per_epoch {
                let samples = buffer.sample_transitions(cfg.batch_size, &mut sampler)?;
                let batch = transition_batch(&samples, history_len, &learner.target, td3, &mut sampler)?;
                critic.update(&batch, td3)?;
                if step % td3.actor_delay == 0 {
                    learner.update(&critic, batch.x.view(), td3.grad_clip)?;
                    learner.soft_update_target(td3.tau);
                    critic.soft_update_targets(td3.tau);
                }
                gradient_steps += 1;
            }
        }
        let eval = evaluate_guide(
            &learner.actor,
            env,
            cfg.eval_episodes,
            history_len,
            seed,
            GUIDE_EVAL_BASE + (epoch * cfg.eval_episodes) as u64,
        )?;
        log::info!(
            "guide epoch {epoch}: eval len {:.1} reward {:.1}, {env_steps} env steps",
            eval.mean_len(),
            eval.mean_reward()
        );
        if guide_ready(&eval, stop_len) {
            return Ok(GuideReport {
                guide: learner.actor,
                epochs: epoch + 1,
                env_steps,
                gradient_steps,
                eval,
            });
        }
    }
    Err(Error::GuideFailed(format!(
        "no {} consecutive episodes of {stop_len}+ steps after {} epochs",
        cfg.eval_episodes, cfg.max_epochs
    )))
}

/// Loads the guide checkpoint named in `cfg` or trains a fresh one.
pub fn obtain_guide(
    env: &EnvConfig,
    nets: &NetworkConfig,
    td3: &Td3Config,
    cfg: &GuideConfig,
    warm_up: usize,
    seed: u64,
) -> Result<GuideReport> {
    match &cfg.checkpoint {
        Some(path) => {
            let guide = Checkpoint::load(path)?.to_mlp()?;
            let expected = privileged_dim(OBS_DIM, nets.history_len, ACT_DIM);
            if guide.input_dim() != expected || guide.output_dim() != ACT_DIM {
                return Err(Error::Checkpoint(format!(
                    "guide expects {} inputs and {} outputs, need {expected} and {ACT_DIM}",
                    guide.input_dim(),
                    guide.output_dim()
                )));
            }
            Ok(GuideReport {
                guide,
                epochs: 0,
                env_steps: 0,
                gradient_steps: 0,
                eval: EvalStats {
                    rewards: Vec::new(),
                    lengths: Vec::new(),
                },
            })
        }
        None => train_guide(env, nets, td3, cfg, warm_up, seed),
    }
}
