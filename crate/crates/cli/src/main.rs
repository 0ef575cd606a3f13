mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::{FormArg, LambdaArg, ModelArg, SchemeArg};
use crate::config::{ConfigError, Resolver, RunConfig};

const LONG_VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    "\ntarget: ",
    env!("CELLPRED_BUILD_TARGET"),
    "\nprofile: ",
    env!("CELLPRED_BUILD_PROFILE"),
    "\nrustc: ",
    env!("CELLPRED_BUILD_RUSTC"),
);

/// Fit, validate, and simulate regression and causal models of drug
/// perturbation responses.
#[derive(Debug, Parser)]
#[command(name = "cellpred", version, long_version = LONG_VERSION)]
struct Cli {
    /// Flat `key = value` configuration file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for repetitions and folds (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Output directory.
    #[arg(long, global = true, env = "CELLPRED_OUT_DIR")]
    out_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the five-response benchmark system and simulated responses.
    Simulate(SimulateArgs),
    /// Fit a model and write its parameters with a fit report.
    Fit(FitArgs),
    /// Predict responses for new conditions from fitted parameters.
    Predict(PredictArgs),
    /// Cross-validate a model with random folds or leave-one-drug-out.
    Cv(CvArgs),
    /// Export a fitted interaction matrix as an edge list and Graphviz graph.
    ExportNetwork(ExportArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Conditions CSV (rows: conditions, columns: drugs).
    #[arg(long)]
    pub conditions: Option<PathBuf>,
    /// Responses CSV (rows: conditions, columns: responses).
    #[arg(long)]
    pub responses: Option<PathBuf>,
    /// Target map CSV (rows: responses, columns: drugs).
    #[arg(long)]
    pub targets: Option<PathBuf>,
    /// Two-column `from,to` CSV renaming headers and row labels on load.
    #[arg(long)]
    pub renames: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitOptions {
    #[arg(long, value_enum)]
    pub model: Option<ModelArg>,
    /// L1 penalty, or `auto` to choose by k-fold cross-validation.
    #[arg(long)]
    pub lambda: Option<LambdaArg>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    /// identity, clipped-linear[:bound], or sigmoid.
    #[arg(long)]
    pub envelope: Option<String>,
    /// Edge mask CSV (rows: sources, columns: targets; nonzero = allowed).
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Folds for `--lambda auto`.
    #[arg(long)]
    pub cv_folds: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub noise_sd: Option<f64>,
    /// Also run the three validation scenarios and write `scenarios.json`.
    #[arg(long)]
    pub scenarios: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitOptions,
    /// Seed for `--lambda auto` fold assignment.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long, value_enum)]
    pub model: Option<ModelArg>,
    /// Fitted parameters: regression coefficients or W-form interaction matrix.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Saturation rates written by `fit --model causal-ode`.
    #[arg(long)]
    pub epsilon: Option<PathBuf>,
    #[arg(long)]
    pub envelope: Option<String>,
    #[arg(long)]
    pub conditions: Option<PathBuf>,
    #[arg(long)]
    pub targets: Option<PathBuf>,
    #[arg(long)]
    pub renames: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitOptions,
    #[arg(long, value_enum)]
    pub scheme: Option<SchemeArg>,
    /// Random-fold repetitions.
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Interaction matrix CSV (rows and columns: responses).
    #[arg(long)]
    pub interaction: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub form: Option<FormArg>,
    #[arg(long)]
    pub threshold: Option<f64>,
}

/// Exit codes: 2 for unreadable input, 3 for mismatched dimensions, 4 when a
/// fit or steady state does not converge, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    use cellpred_core::Error as E;
    if err.downcast_ref::<ConfigError>().is_some() {
        return 2;
    }
    if err.downcast_ref::<commands::NotConverged>().is_some() {
        return 4;
    }
    match err.downcast_ref::<E>() {
        Some(E::Parse { .. } | E::Csv(_)) => 2,
        Some(E::Dimension { .. }) => 3,
        Some(E::NotConverged(_) | E::NoFeasibleStep { .. } | E::Divergence { .. }) => 4,
        _ => 1,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = cli.config.as_deref().map(RunConfig::load).transpose()?;
    let mut settings = Resolver::new(file);
    let out_dir = settings.value("out-dir", cli.out_dir, PathBuf::from("."))?;
    let jobs = settings.optional("jobs", cli.jobs)?;
    if let Some(jobs) = jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()?;
    }
    std::fs::create_dir_all(&out_dir)?;
    match cli.command {
        Command::Simulate(args) => commands::simulate(args, &mut settings, &out_dir),
        Command::Fit(args) => commands::fit(args, &mut settings, &out_dir),
        Command::Predict(args) => commands::predict(args, &mut settings, &out_dir),
        Command::Cv(args) => commands::cv(args, &mut settings, &out_dir),
        Command::ExportNetwork(args) => commands::export_network(args, &mut settings, &out_dir),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
