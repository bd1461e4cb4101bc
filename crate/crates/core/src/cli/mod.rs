//! The `proprio` command line: collection, training, planning, probing and
//! evaluation verbs over NDJSON datasets and JSON checkpoints.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage errors.

mod checks;
mod config;
mod files;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{Parser, Subcommand};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use checks::{overshoot_gradient_error, planner_gradient_errors, ENTROPY_TOLERANCE, FD_STEP, GRADIENT_TOLERANCE};
pub use config::{CollectSection, EvalSection, RunConfig};
pub use files::{
    env_hash, read_dataset, read_datasets, write_dataset, Checkpoint, Dataset, DatasetHeader, CHECKPOINT_FORMAT, DATASET_FORMAT,
    FORMAT_VERSION,
};

use crate::collect::{collect_passive, collect_random, episode_seeds, run_active, CollectError, NoiseKind};
use crate::entropy::{oracle_discrepancy, EntropyError};
use crate::env::{EnvError, GraspScript, Phase};
use crate::planner::{mpc_episode, CostKind, CostSpec, MpcNoise, PlanError};
use crate::preco::{train, PrecoConfig, PrecoError, PrecoModel};
use crate::probes::{eval_report, train_baseline, train_diagnostic, ModelLosses, ProbeError, ProbeKind, ProbeTask};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: line {line}: {message}", path.display())]
    Malformed { path: PathBuf, line: usize, message: String },
    #[error("{} and {} were recorded with different environment configs", first.display(), other.display())]
    EnvMismatch { first: PathBuf, other: PathBuf },
    #[error("{0}")]
    Check(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Model(#[from] PrecoError),
    #[error(transparent)]
    Entropy(#[from] EntropyError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Collect(#[from] CollectError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "proprio", version, about = "Proprioceptive dynamics models, active exploration and awareness probes")]
struct Cli {
    /// TOML run config; missing keys take desk defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Input dataset; repeat to concatenate files recorded in the same environment.
    #[arg(long, global = true)]
    data: Vec<PathBuf>,
    /// Model checkpoint.
    #[arg(long, global = true)]
    ckpt: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Record scripted grasp-and-release episodes.
    CollectPassive {
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Record random-action episodes.
    CollectRandom {
        #[arg(long, value_parser = PossibleValuesParser::new(["ind", "cor"]).map(|s| s.parse::<NoiseKind>().expect("listed value")))]
        kind: NoiseKind,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Train a PreCo model on --data and write the checkpoint to --out.
    Train {
        #[arg(long)]
        steps: Option<usize>,
        /// Per-step training loss CSV.
        #[arg(long)]
        losses: Option<PathBuf>,
    },
    /// Actor-learner collection with planning; --out is a directory.
    CollectActive {
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Train a probe on --data and write per-step losses of the --test episodes to --out.
    Probe {
        #[arg(long, value_parser = PossibleValuesParser::new(["shape", "orientation"]).map(|s| s.parse::<ProbeTask>().expect("listed value")))]
        task: ProbeTask,
        #[arg(long, value_parser = PossibleValuesParser::new(["preco", "mlp", "lstm", "randlstm"]).map(|s| s.parse::<ProbeKind>().expect("listed value")))]
        model: ProbeKind,
        /// Held-out episodes; defaults to --data.
        #[arg(long)]
        test: Vec<PathBuf>,
    },
    /// Receding-horizon control with a trained model; --out is a directory.
    Plan {
        #[arg(long, value_parser = PossibleValuesParser::new(["entropy_max", "entropy_min", "touch_max"]).map(|s| s.parse::<CostKind>().expect("listed value")))]
        cost: CostKind,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Compare per-step probe losses written by `probe`.
    Eval {
        /// Report CSV path.
        #[arg(long)]
        report: PathBuf,
        /// `name=path` of a probe loss CSV; the first is compared against the rest.
        #[arg(long = "losses", required = true)]
        losses: Vec<String>,
        /// Loss CDFs at the open markers.
        #[arg(long)]
        cdf: Option<PathBuf>,
    },
    /// Closed-form entropy against numerical quadrature.
    EntropyCheck {
        #[arg(long, default_value_t = 1000)]
        mixtures: usize,
    },
    /// Reverse-mode gradients against central differences.
    Gradcheck,
}

/// Parses `args` (program name first), runs the verb and returns the exit code.
pub fn run_command<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn required<'a>(value: &'a Option<PathBuf>, flag: &str, verb: &str) -> Result<&'a Path, CliError> {
    value.as_deref().ok_or_else(|| CliError::Usage(format!("{verb} requires --{flag}")))
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    let seed = config.seed;
    match cli.command {
        Command::CollectPassive { episodes } => {
            let out = required(&cli.out, "out", "collect-passive")?;
            let n = episodes.unwrap_or(config.collect.episodes);
            write_dataset(out, &config.env, &collect_passive(&config.env, n, seed)?)?;
            println!("wrote {n} episodes to {}", out.display());
        }
        Command::CollectRandom { kind, episodes } => {
            let out = required(&cli.out, "out", "collect-random")?;
            let n = episodes.unwrap_or(config.collect.episodes);
            write_dataset(out, &config.env, &collect_random(kind, &config.env, n, seed)?)?;
            println!("wrote {n} {kind} episodes to {}", out.display());
        }
        Command::Train { steps, losses } => {
            let out = required(&cli.out, "out", "train")?;
            let data = read_datasets(&cli.data)?;
            let model_config = PrecoConfig { train_steps: steps.unwrap_or(config.model.train_steps), ..config.model.clone() };
            let (model, params) = PrecoModel::init(model_config, data.env.num_fingers, data.env.obs_dim(), seed)?;
            let views: Vec<_> = data.episodes.iter().map(|t| t.sensorimotor()).collect();
            let outcome = train(&model, params, &views, seed)?;
            Checkpoint::new(&data.env, seed, model, outcome.params).write(out)?;
            if let Some(path) = losses {
                write_loss_csv(&path, &outcome.losses)?;
            }
            if let Some(last) = outcome.losses.last() {
                println!("final training loss {last}");
            }
        }
        Command::CollectActive { episodes } => {
            let dir = required(&cli.out, "out", "collect-active")?;
            let mut active = config.active();
            active.episodes_total = episodes.unwrap_or(active.episodes_total);
            let env = &config.env;
            let (model, params) = match &cli.ckpt {
                Some(p) => {
                    let ck = Checkpoint::read(p)?;
                    (ck.model, ck.params)
                }
                None => PrecoModel::init(config.model.clone(), env.num_fingers, env.obs_dim(), seed)?,
            };
            let out = run_active(env, &model, params, &active, seed)?;
            write_dataset(&dir.join("dataset.ndjson"), env, &out.dataset)?;
            write_loss_csv(&dir.join("losses.csv"), &out.losses)?;
            files::write_with(&dir.join("snapshots.csv"), |w| {
                writeln!(w, "episode_id,snapshot_version")?;
                for (id, v) in &out.snapshots.used {
                    writeln!(w, "{id},{v}")?;
                }
                Ok(())
            })?;
            Checkpoint::new(env, seed, model, out.params).write(&dir.join("final.ckpt.json"))?;
            println!("collected {} episodes, {} learner steps, {} snapshots", out.dataset.len(), out.losses.len(), out.snapshots.published.len());
        }
        Command::Probe { task, model: kind, test } => {
            let out = required(&cli.out, "out", "probe")?;
            let train_set = read_datasets(&cli.data)?;
            let test_set = if test.is_empty() { train_set.clone() } else { read_datasets(&test)? };
            if test_set.env != train_set.env {
                return Err(CliError::EnvMismatch { first: cli.data[0].clone(), other: test[0].clone() });
            }
            let train_eps = task.subset(&train_set.episodes)?;
            let test_eps = task.subset(&test_set.episodes)?;
            let probe = match kind {
                ProbeKind::Preco => {
                    let ck = Checkpoint::read(required(&cli.ckpt, "ckpt", "probe --model preco")?)?;
                    train_diagnostic(&ck.model, &ck.params, &train_eps, task, &config.probe, seed)?
                }
                other => train_baseline(other, &train_eps, task, &config.probe, seed)?,
            };
            let losses = probe.step_losses(&test_eps)?;
            let angles = match task {
                ProbeTask::Orientation => Some(probe.angular_errors(&test_eps)?),
                ProbeTask::Shape => None,
            };
            files::write_with(out, |w| {
                write!(w, "episode,timestep,loss")?;
                writeln!(w, "{}", if angles.is_some() { ",angular_error" } else { "" })?;
                for (e, row) in losses.iter().enumerate() {
                    for (t, l) in row.iter().enumerate() {
                        write!(w, "{e},{t},{l}")?;
                        match &angles {
                            Some(a) => writeln!(w, ",{}", a[e][t])?,
                            None => writeln!(w)?,
                        }
                    }
                }
                Ok(())
            })?;
            let all: Vec<f64> = losses.iter().flatten().copied().collect();
            println!("{kind} {task} probe: median held-out loss {}", crate::probes::median(&all));
        }
        Command::Plan { cost, episodes } => {
            let dir = required(&cli.out, "out", "plan")?;
            let ck = Checkpoint::read(required(&cli.ckpt, "ckpt", "plan")?)?;
            let env = &config.env;
            let spec = CostSpec::new(cost, env);
            let n = episodes.unwrap_or(config.eval.plan_episodes);
            let mut trajectories = Vec::with_capacity(n);
            let mut traces = Vec::with_capacity(n);
            for (i, s) in episode_seeds(seed, n).into_iter().enumerate() {
                let res = mpc_episode(env, i as u64, s, &ck.model, &ck.params, &spec, &config.planner, None::<MpcNoise<'_, ChaCha8Rng>>)?;
                traces.push(res.traces);
                trajectories.push(res.trajectory);
            }
            write_dataset(&dir.join("trajectories.ndjson"), env, &trajectories)?;
            files::write_with(&dir.join("traces.csv"), |w| {
                writeln!(w, "episode,step,iteration,objective")?;
                for (e, ep) in traces.iter().enumerate() {
                    for (t, trace) in ep.iter().enumerate() {
                        for (k, v) in trace.iter().enumerate() {
                            writeln!(w, "{e},{t},{k},{v}")?;
                        }
                    }
                }
                Ok(())
            })?;
            let mean = trajectories.iter().map(|t| t.cumulative_touch(env.touch_dims())).sum::<f64>() / n.max(1) as f64;
            println!("{cost}: mean cumulative touch {mean} over {n} episodes");
        }
        Command::Eval { report, losses, cdf } => {
            let models = losses.iter().map(|spec| read_loss_spec(spec)).collect::<Result<Vec<_>, _>>()?;
            let markers: Vec<usize> =
                GraspScript::markers(config.env.episode_length).iter().filter(|m| m.phase == Phase::Open && m.t > 0).map(|m| m.t).collect();
            let r = eval_report(&models, &markers, config.eval.bootstrap_samples, seed)?;
            files::write_with(&report, |w| r.write_csv(w))?;
            if let Some(path) = cdf {
                files::write_with(&path, |w| r.write_cdf_csv(w))?;
            }
            println!("wrote {} report rows to {}", r.rows.len(), report.display());
        }
        Command::EntropyCheck { mixtures } => {
            let worst = oracle_discrepancy(mixtures, seed)?;
            println!("max |closed form - quadrature| over {mixtures} mixtures: {worst:e}");
            if !(worst <= ENTROPY_TOLERANCE) {
                return Err(CliError::Check(format!("discrepancy {worst:e} exceeds {ENTROPY_TOLERANCE:e}")));
            }
        }
        Command::Gradcheck => {
            let mut worst = overshoot_gradient_error(seed)?;
            println!("overshoot_loss: {worst:e}");
            for (kind, err) in planner_gradient_errors(seed)? {
                println!("planner {kind}: {err:e}");
                worst = worst.max(err);
            }
            if !(worst < GRADIENT_TOLERANCE) {
                return Err(CliError::Check(format!("relative gradient error {worst:e} exceeds {GRADIENT_TOLERANCE:e}")));
            }
        }
    }
    Ok(())
}

fn write_loss_csv(path: &Path, losses: &[f64]) -> Result<(), CliError> {
    files::write_with(path, |w| {
        writeln!(w, "step,loss")?;
        for (i, l) in losses.iter().enumerate() {
            writeln!(w, "{i},{l}")?;
        }
        Ok(())
    })
}

/// Reads a `name=path` probe loss CSV into `[episode][timestep]` losses.
fn read_loss_spec(spec: &str) -> Result<ModelLosses, CliError> {
    let (name, path) = spec.split_once('=').ok_or_else(|| CliError::Usage(format!("--losses expects name=path, got '{spec}'")))?;
    let path = Path::new(path);
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let bad = |line: usize, message: &str| CliError::Malformed { path: path.to_path_buf(), line, message: message.into() };
    let mut lines = text.lines();
    if !lines.next().is_some_and(|h| h.starts_with("episode,timestep,loss")) {
        return Err(bad(1, "expected header episode,timestep,loss"));
    }
    let mut losses: Vec<Vec<f64>> = Vec::new();
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        let mut cols = line.split(',');
        let mut field = || cols.next().ok_or_else(|| bad(n, "too few columns"));
        let e: usize = field()?.parse().map_err(|_| bad(n, "bad episode index"))?;
        let t: usize = field()?.parse().map_err(|_| bad(n, "bad timestep"))?;
        let l: f64 = field()?.parse().map_err(|_| bad(n, "bad loss"))?;
        if e == losses.len() {
            losses.push(Vec::new());
        }
        if e + 1 != losses.len() || t != losses[e].len() {
            return Err(bad(n, "rows must be ordered by episode then timestep"));
        }
        losses[e].push(l);
    }
    Ok(ModelLosses::new(name, losses))
}
