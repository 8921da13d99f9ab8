use std::fs::File;
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Method, RunConfig};
use super::guide::obtain_guide;
use super::learner::{sequence_transitions, ActorLearner, ActorObjective, TwinCritic};
use super::privileged::privileged_dim;
use super::rollout::{evaluate_policy, guide_rollout, jsrl_rollout, stream_rng, EvalStats, Stream};
use crate::env::{EnvConfig, QuadrotorEnv, ACT_DIM, OBS_DIM};
use crate::error::{Error, Result};
use crate::networks::{Checkpoint, MlpNetwork, SnnPolicy};
use crate::par;
use crate::replay::{ReplayBuffer, SequenceBatch};
use crate::surrogate::SlopeSchedule;

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean_reward: f64,
    pub mean_episode_len: f64,
    pub lambda: f64,
    pub k_slope: f64,
    pub curriculum_stage: usize,
    pub critic_loss: f64,
    pub actor_loss: f64,
}

/// Environment interaction counted by purpose.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StepCounters {
    /// Steps taken by the guide's own training.
    pub guide_training: usize,
    /// Steps taken to build an offline dataset.
    pub dataset: usize,
    /// Steps collected into the replay buffer during training epochs.
    pub collected: usize,
    pub evaluation: usize,
}

/// Mutable state of a training run.
#[derive(Debug)]
pub struct Trainer {
    cfg: RunConfig,
    pub actor: ActorLearner,
    pub critic: Option<TwinCritic>,
    pub guide: Option<MlpNetwork>,
    pub buffer: ReplayBuffer,
    slope: SlopeSchedule,
    sampler: ChaCha8Rng,
    epoch: usize,
    gradient_steps: usize,
    pub counters: StepCounters,
    pub history: Vec<EpochMetrics>,
    pub last_eval: Option<EvalStats>,
}

impl Trainer {
    /// Fresh networks from the run seed; no guide, empty buffer.
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let mut init = stream_rng(cfg.seed, Stream::Init, 0);
        let mut sizes = vec![OBS_DIM];
        sizes.extend_from_slice(&cfg.networks.actor_hidden);
        sizes.push(ACT_DIM);
        let slope = cfg.slope.build()?;
        let policy = SnnPolicy::new(&sizes, cfg.networks.lif, slope.k(), &mut init)?;
        let critic = match cfg.method {
            Method::Bc => None,
            _ => Some(TwinCritic::new(
                privileged_dim(OBS_DIM, cfg.networks.history_len, ACT_DIM),
                ACT_DIM,
                &cfg.networks.critic_hidden,
                cfg.td3.lr,
                &mut init,
            )?),
        };
        Ok(Self {
            actor: ActorLearner::new(policy, cfg.td3.lr),
            critic,
            guide: None,
            buffer: ReplayBuffer::new(cfg.replay.clone())?,
            slope,
            sampler: stream_rng(cfg.seed, Stream::Sampler, 0),
            epoch: 0,
            gradient_steps: 0,
            counters: StepCounters::default(),
            history: Vec::new(),
            last_eval: None,
            cfg,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn gradient_steps(&self) -> usize {
        self.gradient_steps
    }

    pub fn needs_guide(&self) -> bool {
        self.cfg.method.is_offline() && self.cfg.dataset.is_none()
            || self.cfg.method == Method::Td3bcJsrl && self.cfg.jsrl.use_jump_start
    }

    pub fn set_guide(&mut self, guide: MlpNetwork) -> Result<()> {
        let expected = privileged_dim(OBS_DIM, self.cfg.networks.history_len, ACT_DIM);
        if guide.input_dim() != expected || guide.output_dim() != ACT_DIM {
            return Err(Error::Contract(format!(
                "guide maps {} -> {}, need {expected} -> {ACT_DIM}",
                guide.input_dim(),
                guide.output_dim()
            )));
        }
        self.guide = Some(guide);
        Ok(())
    }

    /// Obtains the guide when the method needs one and fills the buffer
    /// for offline methods.
    pub fn prepare(&mut self) -> Result<()> {
        if self.needs_guide() && self.guide.is_none() {
            let report = obtain_guide(
                &self.env_for_stage(self.cfg.env.reward.stage)?,
                &self.cfg.networks,
                &self.cfg.td3,
                &self.cfg.guide,
                self.cfg.replay.n_warmup,
                self.cfg.seed,
            )?;
            log::info!(
                "guide ready after {} epochs, {} env steps",
                report.epochs,
                report.env_steps
            );
            self.counters.guide_training += report.env_steps;
            self.guide = Some(report.guide);
        }
        if self.cfg.method.is_offline() && self.buffer.is_empty() {
            match &self.cfg.dataset {
                Some(path) => self.buffer = ReplayBuffer::load_log(path, self.cfg.replay.clone())?,
                None => self.generate_dataset()?,
            }
            if self.buffer.num_slices() == 0 {
                return Err(Error::NotReady("offline dataset yields no training sequences".into()));
            }
        }
        Ok(())
    }

    fn generate_dataset(&mut self) -> Result<()> {
        let guide = self
            .guide
            .as_ref()
            .ok_or_else(|| Error::Contract("dataset generation needs a guide".into()))?;
        let env = self.env_for_stage(self.cfg.env.reward.stage)?;
        let (seed, sigma, h) = (self.cfg.seed, self.cfg.td3.explore_sigma, self.cfg.networks.history_len);
        let records = par::map_range(self.cfg.dataset_episodes, |i| {
            let mut e = QuadrotorEnv::new(env.clone())?;
            let mut rng = stream_rng(seed, Stream::Dataset, i as u64);
            guide_rollout(&mut e, guide, sigma, h, &mut rng)
        });
        for rec in records {
            let rec = rec?;
            self.counters.dataset += rec.len();
            self.buffer.push_episode(rec.transitions)?;
        }
        Ok(())
    }

    fn env_for_stage(&self, stage: usize) -> Result<EnvConfig> {
        let mut env = self.cfg.env.clone();
        env.reward = env.reward.with_stage(stage)?;
        Ok(env)
    }

    /// BC weight in effect during `epoch`.
    pub fn lambda_at(&self, epoch: usize) -> f64 {
        match self.cfg.method {
            Method::Bc | Method::Td3bc => 1.0,
            Method::Td3 => 0.0,
            Method::Td3bcJsrl if self.cfg.jsrl.use_bc_term => self.cfg.jsrl.lambda_at(epoch),
            Method::Td3bcJsrl => 0.0,
        }
    }

    fn objective(&self, lambda: f64) -> ActorObjective {
        ActorObjective {
            alpha: match self.cfg.method {
                Method::Bc => None,
                _ => Some(self.cfg.jsrl.alpha),
            },
            lambda_bc: lambda,
            bc_guide_only: self.cfg.jsrl.bc_guide_only,
        }
    }

    fn guide_steps(&self, epoch: usize) -> usize {
        match self.cfg.method {
            Method::Td3bcJsrl if self.cfg.jsrl.use_jump_start => self.cfg.guide_steps(epoch),
            _ => 0,
        }
    }

    fn collect(&mut self, env: &EnvConfig) -> Result<()> {
        let guide_steps = self.guide_steps(self.epoch);
        let (seed, sigma, h, n) = (
            self.cfg.seed,
            self.cfg.td3.explore_sigma,
            self.cfg.networks.history_len,
            self.cfg.episodes_per_epoch,
        );
        let guide = self.guide.as_ref();
        let policy = &self.actor.actor;
        let epoch = self.epoch;
        let records = par::map_range(n, |i| {
            let mut e = QuadrotorEnv::new(env.clone())?;
            let mut p = policy.clone();
            let mut rng = stream_rng(seed, Stream::Rollout, (epoch * n + i) as u64);
            jsrl_rollout(&mut e, guide, &mut p, guide_steps, sigma, h, &mut rng)
        });
        for rec in records {
            let rec = rec?;
            self.counters.collected += rec.len();
            self.buffer.push_episode(rec.transitions)?;
        }
        Ok(())
    }

    /// Gradient phase; returns mean critic and actor losses.
    fn learn(&mut self, lambda: f64) -> Result<(f64, f64)> {
        let objective = self.objective(lambda);
        let (mut critic_sum, mut critic_n, mut actor_sum, mut actor_n) = (0.0, 0, 0.0, 0);
        for step in 0..self.cfg.gradient_steps_per_epoch {
            let slices = match self.buffer.sample(self.cfg.batch_size, &mut self.sampler) {
                Ok(s) => s,
                Err(Error::NotReady(why)) => {
                    log::debug!("epoch {}: skipping updates, {why}", self.epoch);
                    break;
                }
                Err(e) => return Err(e),
            };
            let batch = SequenceBatch::from_slices(&slices, self.cfg.networks.history_len)?;
            let actor_turn = self.critic.is_none() || step % self.cfg.td3.actor_delay == 0;
            if let Some(critic) = self.critic.as_mut() {
                let tb = sequence_transitions(&batch, &self.actor.target, &self.cfg.td3, &mut self.sampler)?;
                critic_sum += critic.update(&tb, &self.cfg.td3)?.loss;
                critic_n += 1;
            }
            if actor_turn {
                actor_sum += self
                    .actor
                    .update(self.critic.as_ref(), &batch, &objective, self.cfg.td3.grad_clip)?;
                actor_n += 1;
                self.actor.soft_update_target(self.cfg.td3.tau);
                if let Some(critic) = self.critic.as_mut() {
                    critic.soft_update_targets(self.cfg.td3.tau);
                }
            }
            self.gradient_steps += 1;
        }
        let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
        Ok((mean(critic_sum, critic_n), mean(actor_sum, actor_n)))
    }

    /// Collect, learn, evaluate. Returns the metrics row when this epoch
    /// was evaluated.
    pub fn run_epoch(&mut self) -> Result<Option<EpochMetrics>> {
        let epoch = self.epoch;
        let stage = self.cfg.curriculum_stage(epoch);
        let env = self.env_for_stage(stage)?;
        let k = self.slope.begin_epoch(epoch);
        self.actor.set_slope(k);
        let lambda = self.lambda_at(epoch);

        if !self.cfg.method.is_offline() {
            self.collect(&env)?;
        }
        let (critic_loss, actor_loss) = self.learn(lambda)?;
        if !self.actor.actor.layers.iter().all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite())) {
            return Err(Error::Diverged(format!("actor parameters non-finite at epoch {epoch}")));
        }

        let evaluate = (epoch + 1) % self.cfg.eval_every == 0 || epoch + 1 == self.cfg.epochs;
        let row = if evaluate {
            let eval = evaluate_policy(
                &self.actor.actor,
                &env,
                self.cfg.eval_episodes,
                self.cfg.seed,
                (epoch * self.cfg.eval_episodes) as u64,
            )?;
            self.counters.evaluation += eval.env_steps();
            self.slope.end_epoch(eval.mean_reward(), &self.cfg.slope.normalizer)?;
            let row = EpochMetrics {
                epoch,
                mean_reward: eval.mean_reward(),
                mean_episode_len: eval.mean_len(),
                lambda,
                k_slope: k,
                curriculum_stage: stage,
                critic_loss,
                actor_loss,
            };
            self.last_eval = Some(eval);
            self.history.push(row.clone());
            Some(row)
        } else {
            None
        };
        self.epoch += 1;
        Ok(row)
    }

    /// Runs the remaining epochs, streaming metrics into `out` when given.
    pub fn run(&mut self, out: Option<&Path>) -> Result<()> {
        let mut writer = match out {
            Some(dir) => {
                let path = dir.join("metrics.csv");
                let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
                Some(csv::Writer::from_writer(file))
            }
            None => None,
        };
        while self.epoch < self.cfg.epochs {
            let row = match self.run_epoch() {
                Ok(r) => r,
                Err(Error::Diverged(why)) => {
                    if let Some(dir) = out {
                        self.dump_divergence(dir, &why)?;
                    }
                    return Err(Error::Diverged(why));
                }
                Err(e) => return Err(e),
            };
            if let Some(row) = row {
                log::info!(
                    "epoch {}: reward {:.2} len {:.1} k {:.2} lambda {:.4} critic {:.4} actor {:.4}",
                    row.epoch,
                    row.mean_reward,
                    row.mean_episode_len,
                    row.k_slope,
                    row.lambda,
                    row.critic_loss,
                    row.actor_loss
                );
                if let Some(w) = writer.as_mut() {
                    w.serialize(&row)?;
                    w.flush().map_err(|e| Error::io(out.unwrap_or(Path::new(".")), e))?;
                }
            }
            if let (Some(dir), Some(every)) = (out, self.cfg.checkpoint_every) {
                if every > 0 && self.epoch % every == 0 {
                    Checkpoint::from_snn(&self.actor.actor).save(&dir.join(format!("checkpoint_{:05}.json", self.epoch)))?;
                }
            }
        }
        Ok(())
    }

    fn dump_divergence(&self, dir: &Path, why: &str) -> Result<()> {
        #[derive(Serialize)]
        struct Dump<'a> {
            epoch: usize,
            reason: &'a str,
            gradient_steps: usize,
            k_slope: f64,
            last_metrics: Option<&'a EpochMetrics>,
        }
        let path = dir.join("diverged.json");
        let dump = Dump {
            epoch: self.epoch,
            reason: why,
            gradient_steps: self.gradient_steps,
            k_slope: self.actor.actor.slope,
            last_metrics: self.history.last(),
        };
        std::fs::write(&path, serde_json::to_string_pretty(&dump)?).map_err(|e| Error::io(&path, e))?;
        Checkpoint::from_snn(&self.actor.actor).save(&dir.join("checkpoint_diverged.json"))
    }
}

#[derive(Debug)]
pub struct TrainingReport {
    pub metrics: Vec<EpochMetrics>,
    pub counters: StepCounters,
    pub policy: SnnPolicy,
    pub guide: Option<MlpNetwork>,
    pub out: Option<PathBuf>,
}

pub const RUN_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

/// Full run: guide, training, and the run directory (config snapshot,
/// metrics, final checkpoints, version stamp) when `cfg.out` is set.
pub fn run_training(cfg: &RunConfig) -> Result<TrainingReport> {
    run_with_guide(cfg, None)
}

/// As [`run_training`], reusing an already trained guide.
pub fn run_with_guide(cfg: &RunConfig, guide: Option<MlpNetwork>) -> Result<TrainingReport> {
    par::with_threads(cfg.parallel_envs, || run_inner(cfg, guide))
}

fn run_inner(cfg: &RunConfig, guide: Option<MlpNetwork>) -> Result<TrainingReport> {
    let out = cfg.out.clone();
    if let Some(dir) = &out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("config.toml");
        std::fs::write(&path, cfg.to_toml()?).map_err(|e| Error::io(&path, e))?;
        let path = dir.join("VERSION");
        std::fs::write(&path, format!("{RUN_VERSION}\n")).map_err(|e| Error::io(&path, e))?;
    }
    let mut trainer = Trainer::new(cfg.clone())?;
    if let Some(g) = guide {
        trainer.set_guide(g)?;
    }
    trainer.prepare()?;
    if let (Some(dir), Some(g)) = (&out, &trainer.guide) {
        Checkpoint::from_mlp(g).save(&dir.join("guide.json"))?;
    }
    trainer.run(out.as_deref())?;
    if let Some(dir) = &out {
        Checkpoint::from_snn(&trainer.actor.actor).save(&dir.join("checkpoint_final.json"))?;
    }
    Ok(TrainingReport {
        metrics: trainer.history,
        counters: trainer.counters,
        policy: trainer.actor.actor,
        guide: trainer.guide,
        out,
    })
}
