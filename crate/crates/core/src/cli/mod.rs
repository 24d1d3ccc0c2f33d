//! `predmdp <command> --config <file> [--seed N] [--out DIR]`.

pub mod commands;
pub mod config;
pub mod output;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use commands::relative_to;
use config::*;
use output::RunOutput;

#[derive(Debug, Parser)]
#[command(name = "predmdp", version, about = "Tabular MDPs with multi-step transition predictions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML or JSON experiment config.
    #[arg(long)]
    pub config: PathBuf,
    /// Master seed; overrides the config's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (default `results/<command>`).
    #[arg(long, env = "PREDMDP_OUT")]
    pub out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, env = "PREDMDP_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate random MDPs in the text format.
    GenMdp(CommonArgs),
    /// Classical value iteration.
    Solve(CommonArgs),
    /// Bayesian value iteration with predictions.
    Bayes(CommonArgs),
    /// Offline learning and/or online evaluation.
    Bola(CommonArgs),
    /// Bellman-Jensen gap against the offline oracle.
    Gap(CommonArgs),
    /// Suboptimality bound terms and sample budgets.
    Bound(CommonArgs),
    /// Wind-farm storage experiment.
    Wind(CommonArgs),
    /// Write a synthetic wind / price series.
    GenWind(CommonArgs),
    /// Horizon sweep over random MDPs.
    Sweep(CommonArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenMdp(_) => "gen-mdp",
            Command::Solve(_) => "solve",
            Command::Bayes(_) => "bayes",
            Command::Bola(_) => "bola",
            Command::Gap(_) => "gap",
            Command::Bound(_) => "bound",
            Command::Wind(_) => "wind",
            Command::GenWind(_) => "gen-wind",
            Command::Sweep(_) => "sweep",
        }
    }

    pub fn args(&self) -> &CommonArgs {
        match self {
            Command::GenMdp(a)
            | Command::Solve(a)
            | Command::Bayes(a)
            | Command::Bola(a)
            | Command::Gap(a)
            | Command::Bound(a)
            | Command::Wind(a)
            | Command::GenWind(a)
            | Command::Sweep(a) => a,
        }
    }
}

/// What the driver needs from every command config.
trait CommandConfig: Serialize + DeserializeOwned {
    fn seed_mut(&mut self) -> &mut u64;
    fn check(&self) -> Result<()>;
    /// Makes relative input paths relative to the config file.
    fn resolve_paths(&mut self, _base: &Path) {}
}

macro_rules! command_config {
    ($($ty:ty),*) => {$(
        impl CommandConfig for $ty {
            fn seed_mut(&mut self) -> &mut u64 {
                &mut self.seed
            }
            fn check(&self) -> Result<()> {
                self.validate()
            }
            fn resolve_paths(&mut self, base: &Path) {
                resolve(self, base)
            }
        }
    )*};
}

command_config!(GenMdpConfig, SolveConfig, BayesConfig, BolaConfig, GapConfig, BoundConfig, WindConfig, GenWindConfig, SweepConfig);

trait Resolve {
    fn resolve_in(&mut self, _base: &Path) {}
}

fn resolve<T: Resolve>(config: &mut T, base: &Path) {
    config.resolve_in(base)
}

impl Resolve for GenMdpConfig {}
impl Resolve for BoundConfig {}
impl Resolve for GenWindConfig {}
impl Resolve for SweepConfig {}

impl Resolve for SolveConfig {
    fn resolve_in(&mut self, base: &Path) {
        self.mdp = self.mdp.resolved(base);
    }
}

impl Resolve for BayesConfig {
    fn resolve_in(&mut self, base: &Path) {
        self.mdp = self.mdp.resolved(base);
    }
}

impl Resolve for GapConfig {
    fn resolve_in(&mut self, base: &Path) {
        self.mdp = self.mdp.resolved(base);
    }
}

impl Resolve for BolaConfig {
    fn resolve_in(&mut self, base: &Path) {
        self.mdp = self.mdp.resolved(base);
        self.bundle = self.bundle.as_deref().map(|p| relative_to(base, p));
    }
}

impl Resolve for WindConfig {
    fn resolve_in(&mut self, base: &Path) {
        self.data = self.data.as_deref().map(|p| relative_to(base, p));
        self.format = self.format.as_deref().map(|p| relative_to(base, p));
    }
}

fn execute<T: CommandConfig>(
    args: &CommonArgs,
    out_dir: &Path,
    name: &str,
    body: fn(&T, &mut RunOutput) -> Result<()>,
) -> Result<()> {
    let mut config: T = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        *config.seed_mut() = seed;
    }
    let base = args.config.parent().unwrap_or(Path::new("."));
    config.resolve_paths(base);
    config.check()?;

    let mut out = RunOutput::create(out_dir, name, *config.seed_mut())?;
    let resolved = serde_json::to_value(&config)?;
    out.write_json("config.resolved.json", &resolved)?;
    body(&config, &mut out)?;
    out.finish(resolved)?;
    Ok(())
}

/// Runs one parsed invocation.
pub fn run(cli: &Cli) -> Result<()> {
    let args = cli.command.args();
    if let Some(threads) = args.threads {
        // A pool may already exist when called repeatedly in-process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    let out_dir = output_dir(&cli.command);
    let name = cli.command.name();
    match &cli.command {
        Command::GenMdp(a) => execute(a, &out_dir, name, commands::gen_mdp),
        Command::Solve(a) => execute(a, &out_dir, name, commands::solve),
        Command::Bayes(a) => execute(a, &out_dir, name, commands::bayes),
        Command::Bola(a) => execute(a, &out_dir, name, commands::bola),
        Command::Gap(a) => execute(a, &out_dir, name, commands::gap),
        Command::Bound(a) => execute(a, &out_dir, name, commands::bound),
        Command::Wind(a) => execute(a, &out_dir, name, commands::wind),
        Command::GenWind(a) => execute(a, &out_dir, name, commands::gen_wind),
        Command::Sweep(a) => execute(a, &out_dir, name, commands::sweep),
    }
}

pub fn output_dir(command: &Command) -> PathBuf {
    command
        .args()
        .out
        .clone()
        .unwrap_or_else(|| Path::new("results").join(command.name()))
}

/// Process exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidArgument { .. } | Error::Parse { .. } | Error::InvalidMdp(_) | Error::ShapeMismatch(_) => 2,
        Error::Io { .. } => 3,
        Error::EnumerationBudget { .. } => 4,
        _ => 1,
    }
}

/// Machine-readable error record.
pub fn error_record(err: &Error) -> serde_json::Value {
    let kind = match err {
        Error::InvalidMdp(_) => "invalid_mdp",
        Error::InvalidArgument { .. } => "invalid_argument",
        Error::ShapeMismatch(_) => "shape_mismatch",
        Error::NonConvergence { .. } => "non_convergence",
        Error::EnumerationBudget { .. } => "enumeration_budget",
        Error::Precondition(_) => "precondition",
        Error::Parse { .. } => "parse",
        Error::Io { .. } => "io",
        Error::Json(_) => "json",
        Error::Csv(_) => "csv",
    };
    let mut record = serde_json::json!({
        "error": kind,
        "message": err.to_string(),
        "exit_code": exit_code(err),
    });
    match err {
        Error::InvalidArgument { field, .. } => record["field"] = field.clone().into(),
        Error::Parse { path, line, .. } => {
            record["path"] = path.display().to_string().into();
            record["line"] = (*line).into();
        }
        Error::Io { path, .. } => record["path"] = path.display().to_string().into(),
        _ => {}
    }
    record
}

/// Binary entry point: parses arguments, runs, and returns the exit status.
pub fn main_entry() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => 0,
        Err(err) => {
            let record = error_record(&err);
            eprintln!("{record}");
            let dir = output_dir(&cli.command);
            if std::fs::create_dir_all(&dir).is_ok() {
                let _ = std::fs::write(dir.join("error.json"), format!("{record:#}\n"));
            }
            exit_code(&err)
        }
    }
}
