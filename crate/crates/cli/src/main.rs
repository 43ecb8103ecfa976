//! `jfm`: fit, tune, simulate and evaluate joint fairness models.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use jfm_core::simulation::Scenario;
use jfm_core::tuning::Criterion;
use jfm_core::ModelKind;

#[derive(Debug, Parser)]
#[command(name = "jfm", version, about = "Joint fairness model: fitting, tuning, simulation and evaluation")]
struct Cli {
    /// Worker threads for CV cells and simulation replicates (default: all cores).
    #[arg(long, global = true, env = "JF_WORKERS")]
    workers: Option<usize>,

    /// Log verbosity: -v info, -vv debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit one model on a CSV file and write the fit as JSON.
    Fit(FitArgs),
    /// Cross-validated grid search; writes the score table and the best cell.
    Cv(CvArgs),
    /// Run a simulation scenario and write median/IQR summaries.
    Simulate(SimulateArgs),
    /// Evaluate a saved fit on a labelled CSV file.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Column holding the group id.
    #[arg(long)]
    pub group_col: Option<String>,
    /// Column holding the 0/1 outcome.
    #[arg(long)]
    pub label_col: Option<String>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Training data: group column, feature columns, label column.
    pub data: PathBuf,
    #[command(flatten)]
    pub columns: DataArgs,
    /// Model to fit.
    #[arg(long, value_parser = parse_model)]
    pub model: Option<ModelKind>,
    /// JSON config with any of: model, group_col, label_col, lambda_f,
    /// lambda_sim, lambda_sp, options. Flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Fairness penalty weight (jfm, sfm).
    #[arg(long)]
    pub lambda_f: Option<f64>,
    /// Fusion penalty weight (jfm).
    #[arg(long)]
    pub lambda_sim: Option<f64>,
    /// Sparsity weights: one value, or one per group (jfm, separate).
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    pub lambda_sp: Option<Vec<f64>>,
    /// Solver iteration cap.
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Stopping tolerance on the iterate change.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Fit on the raw feature scale.
    #[arg(long)]
    pub no_standardize: bool,
    /// Write the dense stacked penalty matrix of a jfm fit to this CSV.
    #[arg(long)]
    pub dump_operator: Option<PathBuf>,
    /// Output fit JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Manifest path (default: <out stem>.manifest.json).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    /// Training data CSV.
    pub data: PathBuf,
    #[command(flatten)]
    pub columns: DataArgs,
    #[arg(long, value_parser = parse_model)]
    pub model: ModelKind,
    /// Grid JSON: either {lambda_f, lambda_sim, lambda_sp, c_mode} or
    /// {grid: {...}, cv: {folds, seed, criterion, cutoff}}. Default: 8 log-spaced
    /// points on [1e-3, 10] per dimension.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Selection criterion (default depends on the model).
    #[arg(long, value_parser = parse_criterion)]
    pub criterion: Option<Criterion>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output score table CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Best-cell JSON (default: best.json next to --out).
    #[arg(long)]
    pub best: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// 1: shared-fraction sweep, 2: minority-size sweep, 3: dimensionality sweep.
    #[arg(long, value_parser = parse_scenario)]
    pub scenario: Scenario,
    /// Scenario spec JSON; omitted fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Study JSON: models, hypers ({"fixed": {...}} or {"tuned": {grid, cv}}),
    /// fit options, cutoff. Default: all models with λ = 0.01.
    #[arg(long)]
    pub study: Option<PathBuf>,
    /// Comma-separated models, or "all".
    #[arg(long)]
    pub models: Option<String>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Sweep values, comma-separated.
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    pub sweep: Option<Vec<f64>>,
    /// Also write every replicate's training and test CSVs.
    #[arg(long)]
    pub write_data: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Fit JSON from `jfm fit`.
    pub fit: PathBuf,
    /// Labelled data CSV.
    pub data: PathBuf,
    #[command(flatten)]
    pub columns: DataArgs,
    /// Probability cutoff for the confusion rates.
    #[arg(long, default_value_t = 0.5)]
    pub cutoff: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: jfm_core::JfmError| e.to_string())
}

fn parse_criterion(s: &str) -> Result<Criterion, String> {
    s.parse().map_err(|e: jfm_core::JfmError| e.to_string())
}

fn parse_scenario(s: &str) -> Result<Scenario, String> {
    s.parse().map_err(|e: jfm_core::JfmError| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: could not start {n} workers: {e}");
            return ExitCode::from(3);
        }
    }

    let result = match &cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Cv(a) => commands::cv(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Evaluate(a) => commands::evaluate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
