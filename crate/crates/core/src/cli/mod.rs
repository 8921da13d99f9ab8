//! `spikerl` subcommands. Config file values are overridden by flags.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::env::{QuadrotorEnv, TrajectoryLog};
use crate::error::{Error, Result};
use crate::metrics::{format_table, measure_activation_sparsity, OpsReport};
use crate::networks::{Activation, Checkpoint, MlpNetwork, NetworkRecord, SnnPolicy, REFERENCE_SIZES};
use crate::surrogate::{run_slope_sweep, ProbeKind, SlopeMode, SweepConfig};
use crate::trainer::{
    evaluate_guide, evaluate_policy, obtain_guide, privileged_input, run_with_guide, stream_rng, ActionHistory,
    EvalStats, Method, RunConfig, Stream,
};

mod ablate;

pub use ablate::{ablation_grid, AblationRow};

#[derive(Debug, Parser)]
#[command(name = "spikerl", version, about = "Spiking actor training and analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-layer gradient magnitude and cosine statistics across slopes.
    AnalyzeSlopes(SlopeArgs),
    /// Train a controller and write a run directory.
    Train(TrainArgs),
    /// Noise-free evaluation episodes of a checkpoint.
    Eval(EvalArgs),
    /// Footprint, SynOps and energy of a checkpoint against the dense baseline.
    Bench(BenchArgs),
    /// The 2×2 {BC term, jump start} grid.
    Ablate(TrainArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Bc,
    Td3,
    Td3bc,
    #[value(name = "td3bc_jsrl")]
    Td3bcJsrl,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Bc => Method::Bc,
            MethodArg::Td3 => Method::Td3,
            MethodArg::Td3bc => Method::Td3bc,
            MethodArg::Td3bcJsrl => Method::Td3bcJsrl,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SlopeModeArg {
    Fixed,
    Interval,
    Adaptive,
}

impl From<SlopeModeArg> for SlopeMode {
    fn from(m: SlopeModeArg) -> Self {
        match m {
            SlopeModeArg::Fixed => SlopeMode::Fixed,
            SlopeModeArg::Interval => SlopeMode::Interval,
            SlopeModeArg::Adaptive => SlopeMode::Adaptive,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProbeArg {
    Snn,
    Mlp,
}

#[derive(Debug, Clone, Args)]
pub struct SlopeArgs {
    /// TOML or JSON sweep config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated slopes.
    #[arg(long, value_delimiter = ',')]
    pub slopes: Option<Vec<f64>>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub neurons: Option<usize>,
    #[arg(long, value_enum)]
    pub network: Option<ProbeArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub parallel_envs: Option<usize>,
    #[arg(long, value_enum)]
    pub slope_mode: Option<SlopeModeArg>,
    /// Initial (or fixed) surrogate slope.
    #[arg(long)]
    pub slope_k: Option<f64>,
    /// Pre-trained guide checkpoint.
    #[arg(long)]
    pub guide: Option<PathBuf>,
}

impl TrainArgs {
    /// Config file (or defaults) with flag overrides applied.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => match self.method {
                Some(m) => RunConfig::default().with_method_defaults(m.into()),
                None => RunConfig::default(),
            },
        };
        if let Some(m) = self.method {
            cfg.method = m.into();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        if let Some(o) = &self.out {
            cfg.out = Some(o.clone());
        }
        if let Some(p) = self.parallel_envs {
            cfg.parallel_envs = p;
        }
        if let Some(m) = self.slope_mode {
            cfg.slope.mode = m.into();
        }
        if let Some(k) = self.slope_k {
            cfg.slope.k_start = k;
        }
        if let Some(g) = &self.guide {
            cfg.guide.checkpoint = Some(g.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Spiking actor or dense guide checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Run config supplying the environment; defaults otherwise.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub episodes: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Curriculum stage of the evaluation reward.
    #[arg(long)]
    pub stage: Option<usize>,
    /// Write the first episode as a trajectory CSV.
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
    /// Write the summary as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// Spiking actor checkpoint; a randomly initialized reference-size
    /// actor when absent.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Episodes whose observations feed the sparsity measurement.
    #[arg(long, default_value_t = 5)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the reports as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub network: &'static str,
    pub episodes: usize,
    pub mean_reward: f64,
    pub mean_episode_len: f64,
    pub min_episode_len: usize,
    pub lengths: Vec<usize>,
}

impl EvalSummary {
    fn new(network: &'static str, stats: &EvalStats) -> Self {
        Self {
            network,
            episodes: stats.lengths.len(),
            mean_reward: stats.mean_reward(),
            mean_episode_len: stats.mean_len(),
            min_episode_len: stats.lengths.iter().copied().min().unwrap_or(0),
            lengths: stats.lengths.clone(),
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(path, e))
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), RunConfig::from_file)
}

pub fn cmd_analyze_slopes(args: &SlopeArgs) -> Result<()> {
    let mut cfg: SweepConfig = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            if path.extension().is_some_and(|e| e == "json") {
                serde_json::from_str(&text)?
            } else {
                toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
        }
        None => SweepConfig::default(),
    };
    if let Some(s) = &args.slopes {
        cfg.slopes = s.clone();
    }
    if let Some(t) = args.trials {
        cfg.trials = t;
    }
    if let Some(l) = args.layers {
        cfg.probe.hidden_layers = l;
    }
    if let Some(n) = args.neurons {
        cfg.probe.neurons = n;
    }
    if let Some(k) = args.network {
        cfg.probe.kind = match k {
            ProbeArg::Snn => ProbeKind::Snn,
            ProbeArg::Mlp => ProbeKind::Mlp,
        };
    }
    if let Some(s) = args.seed {
        cfg.probe.seed = s;
    }
    if let Some(o) = &args.out {
        cfg.out = o.clone();
    }
    let rows = run_slope_sweep(&cfg)?;
    println!("{:>8} {:>6} {:>14} {:>10} {:>10}", "slope", "layer", "mean|grad|", "zero frac", "cosine");
    for r in &rows {
        let cos = r.cosine_to_ref.map_or("-".to_string(), |c| format!("{c:.4}"));
        println!(
            "{:>8} {:>6} {:>14.4e} {:>10.4} {:>10}",
            r.slope, r.layer, r.mean_abs_grad, r.zero_fraction, cos
        );
    }
    println!("wrote {}", cfg.out.display());
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let report = run_with_guide(&cfg, None)?;
    if let Some(last) = report.metrics.last() {
        println!(
            "{} epochs: mean reward {:.2}, mean episode length {:.1}",
            cfg.epochs, last.mean_reward, last.mean_episode_len
        );
    }
    if let Some(dir) = &report.out {
        println!("run directory {}", dir.display());
    }
    Ok(())
}

fn record_trajectory(policy: Option<&SnnPolicy>, guide: Option<&MlpNetwork>, cfg: &RunConfig, seed: u64, path: &Path) -> Result<()> {
    let mut env = QuadrotorEnv::new(cfg.env.clone())?;
    let mut rng = stream_rng(seed, Stream::Eval, 0);
    let mut obs = env.reset(&mut rng);
    let mut policy = policy.cloned();
    if let Some(p) = policy.as_mut() {
        p.reset_state();
    }
    let mut history = ActionHistory::new(cfg.networks.history_len, crate::env::ACT_DIM);
    let mut log = TrajectoryLog::new();
    let dt = env.config().drone.dt;
    loop {
        let action = match (policy.as_mut(), guide) {
            (Some(p), _) => p.act(&obs)?,
            (None, Some(g)) => g.forward(&privileged_input(&obs, &history))?,
            (None, None) => return Err(Error::Contract("nothing to evaluate".into())),
        };
        let action: Vec<f64> = action.into_iter().map(|a| a.clamp(-2.0, 2.0)).collect();
        let out = env.step(&action)?;
        history.push(&action);
        log.record(env.steps() as f64 * dt, env.state(), &action, out.reward, out.reason);
        obs = out.obs;
        if out.done {
            break;
        }
    }
    log.write_csv(path)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<EvalSummary> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(stage) = args.stage {
        cfg.env.reward = cfg.env.reward.clone().with_stage(stage)?;
    }
    let seed = args.seed.unwrap_or(cfg.seed);
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let summary = match &ckpt.network {
        NetworkRecord::Snn { .. } => {
            let policy = ckpt.to_snn()?;
            if let Some(path) = &args.trajectory {
                record_trajectory(Some(&policy), None, &cfg, seed, path)?;
            }
            EvalSummary::new("snn", &evaluate_policy(&policy, &cfg.env, args.episodes, seed, 0)?)
        }
        NetworkRecord::Mlp { .. } => {
            let guide = ckpt.to_mlp()?;
            if let Some(path) = &args.trajectory {
                record_trajectory(None, Some(&guide), &cfg, seed, path)?;
            }
            let stats = evaluate_guide(&guide, &cfg.env, args.episodes, cfg.networks.history_len, seed, 0)?;
            EvalSummary::new("guide", &stats)
        }
    };
    println!(
        "{} episodes ({}): mean reward {:.2}, mean episode length {:.1}, shortest {}",
        summary.episodes, summary.network, summary.mean_reward, summary.mean_episode_len, summary.min_episode_len
    );
    if let Some(out) = &args.out {
        write_json(out, &summary)?;
    }
    Ok(summary)
}

pub fn cmd_bench(args: &BenchArgs) -> Result<Vec<OpsReport>> {
    let cfg = load_config(args.config.as_deref())?;
    let policy = match &args.checkpoint {
        Some(path) => Checkpoint::load(path)?.to_snn()?,
        None => {
            let mut rng = stream_rng(args.seed, Stream::Init, 0);
            SnnPolicy::new(&REFERENCE_SIZES, cfg.networks.lif, cfg.slope.k_start, &mut rng)?
        }
    };
    let observations: Vec<Vec<Vec<f64>>> = (0..args.episodes)
        .map(|i| {
            let mut env = QuadrotorEnv::new(cfg.env.clone())?;
            let mut rng = stream_rng(args.seed, Stream::Eval, i as u64);
            let mut p = policy.clone();
            let mut obs = vec![env.reset(&mut rng)];
            p.reset_state();
            loop {
                let a: Vec<f64> = p.act(obs.last().expect("non-empty"))?.iter().map(|a| a.clamp(-2.0, 2.0)).collect();
                let out = env.step(&a)?;
                if out.done {
                    break;
                }
                obs.push(out.obs);
            }
            Ok(obs)
        })
        .collect::<Result<_>>()?;
    let mut per_layer = vec![0.0; policy.num_hidden()];
    let mut overall = 0.0;
    let mut n = 0.0;
    for ep in &observations {
        let s = measure_activation_sparsity(&policy, ep)?;
        let w = ep.len() as f64;
        overall += s.overall * w;
        for (acc, v) in per_layer.iter_mut().zip(&s.per_layer) {
            *acc += v * w;
        }
        n += w;
    }
    let sparsity = crate::metrics::SparsityReport {
        overall: overall / n.max(1.0),
        per_layer: per_layer.iter().map(|v| v / n.max(1.0)).collect(),
    };
    let ann = MlpNetwork::zeros(&[146, 64, 64, 4], Activation::Relu)?;
    let reports = vec![
        OpsReport::for_snn("SNN (actor)", &policy, &sparsity)?,
        OpsReport::for_mlp("ANN (privileged)", &ann),
    ];
    print!("{}", format_table(&reports));
    if let Some(out) = &args.out {
        write_json(out, &reports)?;
    }
    Ok(reports)
}

pub fn cmd_ablate(args: &TrainArgs) -> Result<Vec<AblationRow>> {
    let mut cfg = args.resolve()?;
    cfg.method = Method::Td3bcJsrl;
    let guide = obtain_guide(
        &cfg.env,
        &cfg.networks,
        &cfg.td3,
        &cfg.guide,
        cfg.replay.n_warmup,
        cfg.seed,
    )?
    .guide;
    let rows = ablation_grid(&cfg, &guide)?;
    print!("{}", ablate::format_ablation(&rows));
    if let Some(dir) = &cfg.out {
        ablate::write_ablation_csv(&rows, &dir.join("ablation.csv"))?;
    }
    Ok(rows)
}

/// Parses `args` and runs the chosen subcommand.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::AnalyzeSlopes(a) => cmd_analyze_slopes(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a).map(|_| ()),
        Command::Bench(a) => cmd_bench(a).map(|_| ()),
        Command::Ablate(a) => cmd_ablate(a).map(|_| ()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
