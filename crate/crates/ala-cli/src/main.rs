//! `ala` — fit exponential throughput models to LLM inference benchmarks,
//! predict unseen workloads, explore training subsets with simulated
//! annealing, and estimate prediction error with a similarity-based
//! confidence score.
//!
//! Exit codes: 0 success, 1 domain error (fit failure, empty results),
//! 2 usage or I/O error. Log verbosity comes from `ALA_LOG_LEVEL`
//! (error, warn, info, debug).

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "ala",
    version,
    about = "Throughput modeling and uncertainty estimation for LLM inference benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Boosted-tree hyperparameters shared by training commands.
#[derive(Args, Debug)]
pub struct GbtArgs {
    /// Number of boosting rounds.
    #[arg(long, default_value_t = 200)]
    trees: usize,
    /// Maximum tree depth.
    #[arg(long, default_value_t = 4)]
    max_depth: usize,
    /// Shrinkage applied to each tree.
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f64,
    /// Minimum samples per leaf.
    #[arg(long, default_value_t = 2)]
    min_samples_leaf: usize,
    /// Row subsampling fraction per tree.
    #[arg(long, default_value_t = 1.0)]
    subsample: f64,
}

#[derive(Args, Debug)]
pub struct AnnealArgs {
    /// Initial temperature.
    #[arg(long, default_value_t = 1.0)]
    tau0: f64,
    /// Cooling rate in (0, 1).
    #[arg(long, default_value_t = 0.95)]
    alpha: f64,
    /// Number of annealing iterations.
    #[arg(long, default_value_t = 100)]
    iters: usize,
    /// Seed for proposals, acceptance draws, and the initial subset.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Input token counts (comma separated).
    #[arg(long, value_delimiter = ',', default_value = "16,32,64,128,256")]
    ii: Vec<u32>,
    /// Output token counts (comma separated).
    #[arg(long, value_delimiter = ',', default_value = "16,32,64,128,256")]
    oo: Vec<u32>,
    /// Batch sizes (comma separated).
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32,64")]
    bb: Vec<u32>,
    /// Coefficient on ln(1+ii) in the scale surface.
    #[arg(long, default_value_t = 8.0)]
    alpha: f64,
    /// Coefficient on ln(1+oo) in the scale surface.
    #[arg(long, default_value_t = 4.0)]
    beta: f64,
    /// Rate surface numerator.
    #[arg(long, default_value_t = 0.25)]
    gamma: f64,
    /// Saturation offset above the scale surface.
    #[arg(long, default_value_t = 40.0)]
    delta: f64,
    /// Relative Gaussian noise scale.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Measurements per workload/batch-size combination.
    #[arg(long, default_value_t = 1)]
    replicates: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Configuration stamped onto generated records.
    #[arg(long, default_value = "na")]
    model: String,
    #[arg(long, default_value = "na")]
    back: String,
    #[arg(long, default_value = "na")]
    dev: String,
    #[arg(long, default_value = "na")]
    acc: String,
    #[arg(long, default_value_t = 0)]
    acc_count: u32,
    #[arg(long, default_value = "na")]
    cpu: String,
    #[arg(long, default_value_t = 0)]
    cpu_count: u32,
    #[arg(long, default_value = "na")]
    mode: String,
    #[arg(long, default_value = "na")]
    prec: String,
}

#[derive(Subcommand)]
enum Command {
    /// Fit per-configuration parameter databases and predictors from a CSV.
    Fit {
        /// Benchmark CSV (columns bb, ii, oo, thpt; config columns optional).
        input: PathBuf,
        /// Output directory for per-configuration artifacts.
        out_dir: PathBuf,
        #[command(flatten)]
        gbt: GbtArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Predict throughput for one workload from fitted artifacts.
    Predict {
        /// Artifact directory produced by `fit`.
        artifacts: PathBuf,
        #[arg(long)]
        bb: u32,
        #[arg(long)]
        ii: u32,
        #[arg(long)]
        oo: u32,
        /// Configuration selector (substring of the artifact subdirectory).
        #[arg(long)]
        config: Option<String>,
        /// Emit a single JSON line instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Explore training subsets with simulated annealing; write a JSONL log.
    Anneal {
        input: PathBuf,
        /// Output JSON Lines log.
        out_log: PathBuf,
        #[command(flatten)]
        anneal: AnnealArgs,
        /// Configuration selector when the CSV holds several.
        #[arg(long)]
        config: Option<String>,
        #[command(flatten)]
        gbt: GbtArgs,
    },
    /// Train the error predictor on an annealing log.
    TrainErrorPredictor {
        /// Annealing log (JSONL).
        log: PathBuf,
        /// Training CSV the log was produced from.
        train: PathBuf,
        /// Output model file (JSON).
        out_model: PathBuf,
        #[arg(long)]
        config: Option<String>,
        #[command(flatten)]
        gbt: GbtArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Estimate prediction error and confidence for a new dataset.
    Estimate {
        /// Query CSV (thpt column optional).
        new: PathBuf,
        /// Error predictor produced by `train-error-predictor`.
        error_model: PathBuf,
        /// Annealing log (JSONL).
        log: PathBuf,
        /// Training CSV behind the log.
        train: PathBuf,
        #[arg(long)]
        config: Option<String>,
        #[command(flatten)]
        gbt: GbtArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        json: bool,
    },
    /// Generate a synthetic benchmark CSV with known ground truth.
    Synth {
        /// Output CSV path; ground truth lands next to it.
        out: PathBuf,
        #[command(flatten)]
        args: SynthArgs,
    },
    /// Train/test split and a median-percent-error report.
    Eval {
        input: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        gbt: GbtArgs,
        #[arg(long)]
        json: bool,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Fit {
            input,
            out_dir,
            gbt,
            seed,
        } => commands::cmd_fit(&input, &out_dir, &gbt, seed),
        Command::Predict {
            artifacts,
            bb,
            ii,
            oo,
            config,
            json,
        } => commands::cmd_predict(&artifacts, bb, ii, oo, config.as_deref(), json),
        Command::Anneal {
            input,
            out_log,
            anneal,
            config,
            gbt,
        } => commands::cmd_anneal(&input, &out_log, &anneal, config.as_deref(), &gbt),
        Command::TrainErrorPredictor {
            log,
            train,
            out_model,
            config,
            gbt,
            seed,
        } => commands::cmd_train_error_predictor(
            &log,
            &train,
            &out_model,
            config.as_deref(),
            &gbt,
            seed,
        ),
        Command::Estimate {
            new,
            error_model,
            log,
            train,
            config,
            gbt,
            seed,
            json,
        } => commands::cmd_estimate(
            &new,
            &error_model,
            &log,
            &train,
            config.as_deref(),
            &gbt,
            seed,
            json,
        ),
        Command::Synth { out, args } => commands::cmd_synth(&out, &args),
        Command::Eval {
            input,
            test_fraction,
            seed,
            gbt,
            json,
        } => commands::cmd_eval(&input, test_fraction, seed, &gbt, json),
    }
}

/// Map an error to the documented exit codes: 2 for usage/IO problems,
/// 1 for domain failures.
fn classify(err: &anyhow::Error) -> u8 {
    if let Some(core) = err.downcast_ref::<ala_core::Error>() {
        return if core.is_usage() { 2 } else { 1 };
    }
    if err.downcast_ref::<std::io::Error>().is_some() {
        return 2;
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::new()
            .filter_or("ALA_LOG_LEVEL", "warn")
            .write_style("ALA_LOG_STYLE"),
    )
    .init();

    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify(&err))
        }
    }
}
