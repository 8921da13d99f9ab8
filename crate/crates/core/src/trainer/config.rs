use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::networks::LifParams;
use crate::replay::ReplayConfig;
use crate::surrogate::{ScoreNormalizer, SlopeMode, SlopeSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Bc,
    Td3,
    Td3bc,
    Td3bcJsrl,
}

impl Method {
    pub fn is_offline(self) -> bool {
        matches!(self, Method::Bc | Method::Td3bc)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Bc => "bc",
            Method::Td3 => "td3",
            Method::Td3bc => "td3bc",
            Method::Td3bcJsrl => "td3bc_jsrl",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bc" => Ok(Method::Bc),
            "td3" => Ok(Method::Td3),
            "td3bc" => Ok(Method::Td3bc),
            "td3bc_jsrl" | "td3bc+jsrl" => Ok(Method::Td3bcJsrl),
            other => Err(Error::Config(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Td3Config {
    pub gamma: f64,
    pub tau: f64,
    /// Std of the target-policy smoothing noise.
    pub policy_noise: f64,
    pub noise_clip: f64,
    /// Std of the exploration noise added to acted commands.
    pub explore_sigma: f64,
    /// Critic steps per actor step.
    pub actor_delay: usize,
    pub lr: f64,
    /// Rescales gradients whose global L2 norm exceeds this.
    pub grad_clip: Option<f64>,
}

impl Default for Td3Config {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.01,
            policy_noise: 0.2,
            noise_clip: 0.5,
            explore_sigma: 0.1,
            actor_delay: 2,
            lr: 1e-3,
            grad_clip: None,
        }
    }
}

impl Td3Config {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config(format!("tau must lie in (0, 1], got {}", self.tau)));
        }
        if self.actor_delay == 0 || !(self.lr > 0.0) {
            return Err(Error::Config("actor delay and learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JsrlConfig {
    pub lambda0: f64,
    pub lambda_decay: f64,
    /// Weight of the Q-normalization `α / mean|Q|`.
    pub alpha: f64,
    /// Epochs over which `N` grows from 0 to `episode_len − warm_up`;
    /// `None` uses the run length.
    pub ramp_epochs: Option<usize>,
    /// Restrict the BC term to guide-tagged transitions.
    pub bc_guide_only: bool,
    pub use_bc_term: bool,
    pub use_jump_start: bool,
}

impl Default for JsrlConfig {
    fn default() -> Self {
        Self {
            lambda0: 0.2,
            lambda_decay: 0.99,
            alpha: 2.0,
            ramp_epochs: None,
            bc_guide_only: false,
            use_bc_term: true,
            use_jump_start: true,
        }
    }
}

impl JsrlConfig {
    /// `λ0 · decay^epoch`.
    pub fn lambda_at(&self, epoch: usize) -> f64 {
        self.lambda0 * self.lambda_decay.powi(epoch as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SlopeConfig {
    pub mode: SlopeMode,
    pub k_start: f64,
    /// Interval mode doubles `k` this often.
    pub interval_every: usize,
    pub normalizer: ScoreNormalizer,
    /// Opaque; carried through to the schedule.
    pub scheduling_order: u32,
}

impl Default for SlopeConfig {
    fn default() -> Self {
        Self {
            mode: SlopeMode::Adaptive,
            k_start: 2.0,
            interval_every: 100,
            normalizer: ScoreNormalizer::default(),
            scheduling_order: 3,
        }
    }
}

impl SlopeConfig {
    pub fn build(&self) -> Result<SlopeSchedule> {
        let mut s = match self.mode {
            SlopeMode::Fixed => SlopeSchedule::fixed(self.k_start),
            SlopeMode::Adaptive => SlopeSchedule::adaptive(self.k_start),
            SlopeMode::Interval => SlopeSchedule::doubling_interval(self.k_start, self.interval_every)?,
        };
        s.scheduling_order = self.scheduling_order;
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub guide_hidden: Vec<usize>,
    pub lif: LifParams,
    /// Steps of executed actions appended to the critic and guide input.
    pub history_len: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            actor_hidden: vec![256, 128],
            critic_hidden: vec![256, 256],
            guide_hidden: vec![256, 256],
            lif: LifParams::default(),
            history_len: 32,
        }
    }
}

/// TD3 training of the privileged dense guide.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuideConfig {
    pub batch_size: usize,
    pub episodes_per_epoch: usize,
    pub gradient_steps_per_epoch: usize,
    pub max_epochs: usize,
    pub buffer_capacity: usize,
    pub eval_episodes: usize,
    /// Every evaluation episode must last at least this many steps; `None`
    /// means the warm-up length.
    pub stop_len: Option<usize>,
    /// Initial output bias, in command units, so the untrained guide
    /// commands roughly hover thrust.
    pub init_action_bias: Option<f64>,
    /// Load a pre-trained guide checkpoint instead of training.
    pub checkpoint: Option<PathBuf>,
}

impl Default for GuideConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            episodes_per_epoch: 4,
            gradient_steps_per_epoch: 200,
            max_epochs: 500,
            buffer_capacity: 1_000_000,
            eval_episodes: 10,
            stop_len: None,
            init_action_bias: Some(0.667),
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurriculumSchedule {
    pub enabled: bool,
    /// Epochs between stage advances; `None` spreads the stages evenly over
    /// the run.
    pub every: Option<usize>,
}

impl Default for CurriculumSchedule {
    fn default() -> Self {
        Self {
            enabled: true,
            every: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub method: Method,
    pub seed: u64,
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    pub gradient_steps_per_epoch: usize,
    /// Sequences per gradient step.
    pub batch_size: usize,
    pub eval_episodes: usize,
    pub eval_every: usize,
    /// Worker threads for rollouts and evaluation; 0 uses the global pool.
    pub parallel_envs: usize,
    pub env: EnvConfig,
    pub replay: ReplayConfig,
    pub td3: Td3Config,
    pub jsrl: JsrlConfig,
    pub slope: SlopeConfig,
    pub networks: NetworkConfig,
    pub guide: GuideConfig,
    pub curriculum: CurriculumSchedule,
    /// Offline methods read this episode log; when absent the guide
    /// generates `dataset_episodes` episodes.
    pub dataset: Option<PathBuf>,
    pub dataset_episodes: usize,
    pub out: Option<PathBuf>,
    pub checkpoint_every: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::Td3bcJsrl,
            seed: 0,
            epochs: 1000,
            episodes_per_epoch: 4,
            gradient_steps_per_epoch: 100,
            batch_size: 32,
            eval_episodes: 20,
            eval_every: 1,
            parallel_envs: 0,
            env: EnvConfig::default(),
            replay: ReplayConfig::default(),
            td3: Td3Config::default(),
            jsrl: JsrlConfig::default(),
            slope: SlopeConfig::default(),
            networks: NetworkConfig::default(),
            guide: GuideConfig::default(),
            curriculum: CurriculumSchedule::default(),
            dataset: None,
            dataset_episodes: 200,
            out: None,
            checkpoint_every: None,
        }
    }
}

impl RunConfig {
    /// Reads TOML or JSON by file extension; missing keys take defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text)?,
            _ => toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
        };
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Method-specific defaults on top of `self`.
    pub fn with_method_defaults(mut self, method: Method) -> Self {
        self.method = method;
        match method {
            Method::Bc => {
                self.epochs = 300;
                self.replay.capacity = 1_000_000;
            }
            Method::Td3bc => {
                self.epochs = 300;
                self.replay.capacity = 1_000_000;
                self.networks.actor_hidden = vec![256, 256];
            }
            Method::Td3 => {
                self.epochs = 1000;
                self.replay.capacity = 2_000_000;
            }
            Method::Td3bcJsrl => {
                self.epochs = 1000;
                self.replay.capacity = 2_000_000;
            }
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.replay.validate()?;
        self.td3.validate()?;
        if self.epochs == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Config("epochs, batch size and eval interval must be positive".into()));
        }
        if self.replay.n_warmup >= self.env.termination.max_steps {
            return Err(Error::Config("warm-up must be shorter than an episode".into()));
        }
        if self.networks.actor_hidden.is_empty() {
            return Err(Error::Config("the spiking actor needs at least one hidden layer".into()));
        }
        Ok(())
    }

    pub fn ramp_epochs(&self) -> usize {
        self.jsrl.ramp_epochs.unwrap_or(self.epochs).max(1)
    }

    /// Curriculum stage in effect during `epoch`.
    pub fn curriculum_stage(&self, epoch: usize) -> usize {
        let last = self.env.reward.last_stage();
        if !self.curriculum.enabled {
            return self.env.reward.stage;
        }
        let every = self
            .curriculum
            .every
            .unwrap_or_else(|| self.epochs.div_ceil(self.env.reward.num_steps.max(1)))
            .max(1);
        (self.env.reward.stage + epoch / every).min(last)
    }

    /// Steps of each episode controlled by the guide after `epoch` epochs
    /// of the linear ramp.
    pub fn guide_steps(&self, epoch: usize) -> usize {
        let len = self.env.termination.max_steps;
        let warm = self.replay.n_warmup;
        let n_max = len - warm;
        let n = (len as f64 * epoch as f64 / self.ramp_epochs() as f64).min(n_max as f64);
        (len - n.floor() as usize).max(warm)
    }
}
