use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::learner::ACTION_LIMIT;
use super::privileged::{privileged_input, ActionHistory};
use crate::env::{DoneReason, EnvConfig, QuadrotorEnv};
use crate::error::{Error, Result};
use crate::networks::{MlpNetwork, SnnPolicy};
use crate::par;
use crate::replay::{Source, Transition};

/// Independent random streams of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Rollout = 2,
    Sampler = 3,
    Eval = 4,
    Guide = 5,
    Dataset = 6,
}

/// Generator for item `index` of `stream`; items are 2^40 words apart.
pub fn stream_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng.set_word_pos((index as u128) << 40);
    rng
}

/// Steps of an episode of `episode_len` handed to the guide when the
/// learner controls the last `n` of them.
pub fn guide_steps_for(n: usize, episode_len: usize, warm_up: usize) -> usize {
    episode_len.saturating_sub(n).max(warm_up)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub transitions: Vec<Transition>,
    pub total_reward: f64,
    pub reason: DoneReason,
}

impl EpisodeRecord {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn guide_steps(&self) -> usize {
        self.transitions.iter().filter(|t| t.source == Source::Guide).count()
    }
}

fn add_noise(a: &mut [f64], sigma: f64, rng: &mut ChaCha8Rng) {
    if sigma > 0.0 {
        let n = Normal::new(0.0, sigma).expect("finite std");
        for v in a.iter_mut() {
            *v += n.sample(rng);
        }
    }
    for v in a.iter_mut() {
        *v = v.clamp(-ACTION_LIMIT, ACTION_LIMIT);
    }
}

/// One jump-started episode: the guide acts for the first `guide_steps`
/// steps, then the spiking policy takes over with exploration noise
/// `sigma`. The policy is stepped on every observation so its state is
/// warm at hand-over.
pub fn jsrl_rollout(
    env: &mut QuadrotorEnv,
    guide: Option<&MlpNetwork>,
    policy: &mut SnnPolicy,
    guide_steps: usize,
    sigma: f64,
    history_len: usize,
    rng: &mut ChaCha8Rng,
) -> Result<EpisodeRecord> {
    if guide_steps > 0 && guide.is_none() {
        return Err(Error::Contract("guide steps requested without a guide".into()));
    }
    let mut obs = env.reset(rng);
    policy.reset_state();
    let mut history = ActionHistory::new(history_len, policy.act_dim());
    let mut transitions = Vec::new();
    let mut total = 0.0;
    loop {
        let t = transitions.len();
        let own = policy.act(&obs)?;
        let (action, source) = match guide {
            Some(g) if t < guide_steps => {
                let a = g.forward(&privileged_input(&obs, &history))?;
                (a.into_iter().map(|v| v.clamp(-ACTION_LIMIT, ACTION_LIMIT)).collect(), Source::Guide)
            }
            _ => {
                let mut a = own;
                add_noise(&mut a, sigma, rng);
                (a, Source::Policy)
            }
        };
        let out = env.step(&action)?;
        total += out.reward;
        history.push(&action);
        transitions.push(Transition {
            s: std::mem::replace(&mut obs, out.obs.clone()),
            a: action,
            r: out.reward,
            d: out.reason == DoneReason::Crash,
            truncated: out.reason == DoneReason::Timeout,
            s_next: out.obs,
            source,
        });
        if out.done {
            return Ok(EpisodeRecord {
                transitions,
                total_reward: total,
                reason: out.reason,
            });
        }
    }
}

/// Episode driven only by the dense guide, with noise `sigma`.
pub fn guide_rollout(
    env: &mut QuadrotorEnv,
    guide: &MlpNetwork,
    sigma: f64,
    history_len: usize,
    rng: &mut ChaCha8Rng,
) -> Result<EpisodeRecord> {
    let act_dim = guide.output_dim();
    let mut obs = env.reset(rng);
    let mut history = ActionHistory::new(history_len, act_dim);
    let mut transitions = Vec::new();
    let mut total = 0.0;
    loop {
        let mut action = guide.forward(&privileged_input(&obs, &history))?;
        add_noise(&mut action, sigma, rng);
        let out = env.step(&action)?;
        total += out.reward;
        history.push(&action);
        transitions.push(Transition {
            s: std::mem::replace(&mut obs, out.obs.clone()),
            a: action,
            r: out.reward,
            d: out.reason == DoneReason::Crash,
            truncated: out.reason == DoneReason::Timeout,
            s_next: out.obs,
            source: Source::Guide,
        });
        if out.done {
            return Ok(EpisodeRecord {
                transitions,
                total_reward: total,
                reason: out.reason,
            });
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalStats {
    pub rewards: Vec<f64>,
    pub lengths: Vec<usize>,
}

impl EvalStats {
    pub fn mean_reward(&self) -> f64 {
        self.rewards.iter().sum::<f64>() / self.rewards.len().max(1) as f64
    }

    pub fn mean_len(&self) -> f64 {
        self.lengths.iter().sum::<usize>() as f64 / self.lengths.len().max(1) as f64
    }

    pub fn env_steps(&self) -> usize {
        self.lengths.iter().sum()
    }

    fn from_records(records: Vec<EpisodeRecord>) -> Self {
        Self {
            rewards: records.iter().map(|r| r.total_reward).collect(),
            lengths: records.iter().map(EpisodeRecord::len).collect(),
        }
    }
}

/// Noise-free episodes of the spiking policy alone; episode `i` resets
/// from `stream_rng(seed, Eval, base + i)`.
pub fn evaluate_policy(policy: &SnnPolicy, env: &EnvConfig, episodes: usize, seed: u64, base: u64) -> Result<EvalStats> {
    let records = par::map_range(episodes, |i| {
        let mut env = QuadrotorEnv::new(env.clone())?;
        let mut p = policy.clone();
        let mut rng = stream_rng(seed, Stream::Eval, base + i as u64);
        jsrl_rollout(&mut env, None, &mut p, 0, 0.0, 0, &mut rng)
    });
    Ok(EvalStats::from_records(records.into_iter().collect::<Result<_>>()?))
}

/// Noise-free episodes of the guide alone.
pub fn evaluate_guide(
    guide: &MlpNetwork,
    env: &EnvConfig,
    episodes: usize,
    history_len: usize,
    seed: u64,
    base: u64,
) -> Result<EvalStats> {
    let records = par::map_range(episodes, |i| {
        let mut env = QuadrotorEnv::new(env.clone())?;
        let mut rng = stream_rng(seed, Stream::Eval, base + i as u64);
        guide_rollout(&mut env, guide, 0.0, history_len, &mut rng)
    });
    Ok(EvalStats::from_records(records.into_iter().collect::<Result<_>>()?))
}
