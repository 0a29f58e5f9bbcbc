//! The `sortflow` command line. Every artifact-producing command writes its
//! outputs and a `manifest.json` into `--out`.

mod commands;
mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sortflow::agents::ScriptedManagerConfig;
use sortflow::learn::{Method, TrainConfig};
use sortflow::prefgen::{Continuation, DEFAULT_HORIZON, DEFAULT_MARGIN};
use sortflow::sim::{ScenarioParams, SimConfig};
use sortflow_service::ServiceConfig;

pub use commands::{
    CALIBRATED_CONFIG_FILE, CALIBRATION_REPORT_FILE, CHECKPOINT_FILE, CORPUS_FILE, EVAL_REPORT_FILE, METRICS_FILE,
    SCATTER_FILE,
};
pub use manifest::{RunManifest, MANIFEST_FILE};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "sortflow",
    version,
    about = "Sortation staffing simulator and offline policy pipeline"
)]
pub struct Cli {
    /// JSON run configuration; every section is optional.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed; all sub-seeds are derived from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads. `1` is the deterministic mode used by tests.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a scripted-manager shift corpus.
    Generate(GenerateArgs),
    /// Train a policy checkpoint from a corpus.
    Train(TrainArgs),
    /// Compare checkpoints and baselines against the corpus's replay.
    Evaluate(EvaluateArgs),
    /// Generate versioned preference datasets.
    Prefgen(PrefgenArgs),
    /// Fit simulator parameters to a corpus.
    Calibrate(CalibrateArgs),
    /// Run the session HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 300)]
    pub shifts: usize,
    /// Shift-id prefix and seed stream; use distinct prefixes for train and eval corpora.
    #[arg(long, default_value = "train")]
    pub prefix: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Bc,
    Bcft,
    Ac,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Bc => Method::Bc,
            MethodArg::Bcft => Method::Bcft,
            MethodArg::Ac => Method::Ac,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub method: MethodArg,
    #[arg(long)]
    pub corpus: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Policy checkpoints to evaluate.
    #[arg(long = "checkpoint")]
    pub checkpoints: Vec<PathBuf>,
    /// Leave out the no-reallocation baseline.
    #[arg(long)]
    pub no_baseline: bool,
    /// Also evaluate the greedy bottleneck heuristic.
    #[arg(long)]
    pub greedy: bool,
    /// Also compare the replay with itself (a 0% sanity row).
    #[arg(long)]
    pub include_replay: bool,
}

#[derive(Debug, Args)]
pub struct PrefgenArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub rounds: u32,
    /// Policy checkpoint whose samples are proposed each round.
    #[arg(long, conflicts_with = "bridge")]
    pub checkpoint: Option<PathBuf>,
    /// External proposer: a command line or an http(s) URL.
    #[arg(long)]
    pub bridge: Option<String>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// JSON search space; defaults to a grid around the configured values.
    #[arg(long)]
    pub space: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Overrides the configured port; `SORTFLOW_PORT` overrides both.
    #[arg(long)]
    pub port: Option<u16>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrefgenConfig {
    pub horizon: u32,
    pub margin: f64,
    pub continuation: Continuation,
    /// Use every `stride`-th state of each shift.
    pub stride: usize,
    /// Random single moves proposed per state in addition to the policies.
    pub random_moves: usize,
}

impl Default for PrefgenConfig {
    fn default() -> Self {
        Self {
            horizon: DEFAULT_HORIZON,
            margin: DEFAULT_MARGIN,
            continuation: Continuation::default(),
            stride: 5,
            random_moves: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub bootstrap_resamples: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            bootstrap_resamples: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateConfig {
    /// Relative grid step around each current parameter value.
    pub rel_step: f64,
    pub steps: i32,
    pub max_sweeps: usize,
}

impl Default for CalibrateConfig {
    fn default() -> Self {
        Self {
            rel_step: 0.1,
            steps: 2,
            max_sweeps: 3,
        }
    }
}

/// Contents of the `--config` file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub scenario: ScenarioParams,
    pub manager: ScriptedManagerConfig,
    pub train: TrainConfig,
    pub prefgen: PrefgenConfig,
    pub eval: EvalConfig,
    pub calibrate: CalibrateConfig,
    pub service: ServiceConfig,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(sortflow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(e) if e.is_numeric() => EXIT_NUMERIC,
            CliError::Core(_) => EXIT_DATA,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<sortflow::Error> for CliError {
    fn from(e: sortflow::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let config = match &cli.config {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).map_err(|e| sortflow::Error::Data(format!("{}: {e}", p.display())))?;
            serde_json::from_str::<RunConfig>(&text)
                .map_err(|e| sortflow::Error::Data(format!("{}: {e}", p.display())))?
        }
        None => RunConfig::default(),
    };
    let threads = cli.threads.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {threads} threads: {e}")))?;
    pool.install(|| commands::dispatch(cli, &config))
}
