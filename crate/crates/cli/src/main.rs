//! `banditsim` — run distributed-bandit experiments, check their
//! statistical diagnostics, and factorize ratings data.
//!
//! Exit codes: 0 on success, 1 on configuration or data errors, 2 when the
//! diagnostics suite reports a failing check.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use banditsim::config::{parse_protocol, ExperimentConfig, ObservationMode};
use banditsim::data;
use banditsim::diag;
use banditsim::sim;

#[derive(Parser)]
#[command(name = "banditsim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and emit its trace as CSV.
    Run(RunArgs),
    /// Run the statistical diagnostics suite for a config.
    Diagnose(DiagnoseArgs),
    /// Factorize a ratings file into user/item factors.
    Factorize(FactorizeArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config file (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Output CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config trial count.
    #[arg(long)]
    trials: Option<usize>,
    /// Override the observation mode (hidden|observed|exact).
    #[arg(long)]
    mode: Option<String>,
    /// Override the protocol (sync|immediate|none).
    #[arg(long)]
    protocol: Option<String>,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct FactorizeArgs {
    /// Ratings file in `UserID::MovieID::Rating::Timestamp` format.
    #[arg(long)]
    ratings: PathBuf,
    /// Factorization rank.
    #[arg(long, default_value_t = 6)]
    rank: usize,
    /// Output factors file.
    #[arg(long)]
    out: PathBuf,
    /// ALS sweeps.
    #[arg(long, default_value_t = sim::DEFAULT_ALS_ITERATIONS)]
    iterations: usize,
    /// Ridge regularization per half-step.
    #[arg(long, default_value_t = sim::DEFAULT_ALS_REGULARIZATION)]
    reg: f64,
    /// Initialization seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run(args) => run(args),
        Command::Diagnose(args) => diagnose(args),
        Command::Factorize(args) => factorize(args),
    }
}

fn load_config(path: &PathBuf) -> Result<ExperimentConfig, String> {
    ExperimentConfig::from_file(path).map_err(|e| e.to_string())
}

fn apply_overrides(cfg: &mut ExperimentConfig, args: &RunArgs) -> Result<(), String> {
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(trials) = args.trials {
        cfg.trials = trials;
    }
    if let Some(mode) = &args.mode {
        cfg.mode = ObservationMode::parse(mode)
            .ok_or_else(|| format!("bad --mode `{mode}`: expected hidden, observed, or exact"))?;
    }
    if let Some(protocol) = &args.protocol {
        cfg.protocol = parse_protocol(protocol).ok_or_else(|| {
            format!("bad --protocol `{protocol}`: expected sync, immediate, or none")
        })?;
    }
    cfg.validate().map_err(|e| e.to_string())
}

fn run(args: RunArgs) -> ExitCode {
    let mut cfg = match load_config(&args.config) {
        Ok(cfg) => cfg,
        Err(e) => return config_error(&e),
    };
    if let Err(e) = apply_overrides(&mut cfg, &args) {
        return config_error(&e);
    }
    let trace = match sim::run_experiment(&cfg) {
        Ok(trace) => trace,
        Err(e) => return config_error(&e.to_string()),
    };
    match &args.out {
        Some(path) => {
            if let Err(e) = trace.write_csv_file(path) {
                eprintln!("error: {e}");
                return ExitCode::from(1);
            }
            eprintln!(
                "wrote {} ({} trials x {} rounds, mean final regret {:.6})",
                path.display(),
                cfg.trials,
                cfg.horizon,
                trace.mean_final_regret()
            );
        }
        None => {
            let stdout = std::io::stdout();
            if let Err(e) = trace.write_csv(stdout.lock()) {
                eprintln!("error: {e}");
                return ExitCode::from(1);
            }
        }
    }
    ExitCode::SUCCESS
}

fn diagnose(args: DiagnoseArgs) -> ExitCode {
    let cfg = match load_config(&args.config) {
        Ok(cfg) => cfg,
        Err(e) => return config_error(&e),
    };
    let report = match diag::diagnostics_suite(&cfg) {
        Ok(report) => report,
        Err(e) => return config_error(&e.to_string()),
    };
    for check in &report.checks {
        println!(
            "{} {}: statistic {:.6} vs threshold {:.6} ({})",
            if check.passed { "PASS" } else { "FAIL" },
            check.name,
            check.statistic,
            check.threshold,
            check.detail
        );
    }
    if report.all_passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}

fn factorize(args: FactorizeArgs) -> ExitCode {
    let dataset = match data::ingest_ratings(&args.ratings) {
        Ok(ds) => ds,
        Err(e) => return config_error(&e.to_string()),
    };
    let result = match data::factorize(&dataset, args.rank, args.iterations, args.reg, args.seed) {
        Ok(f) => f,
        Err(e) => return config_error(&e.to_string()),
    };
    if let Err(e) = data::write_factors_file(&args.out, &result.user_factors, &result.item_factors)
    {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    eprintln!(
        "factorized {} ratings ({} users x {} items, rank {}) training rmse {:.6}",
        dataset.ratings.len(),
        dataset.num_users(),
        dataset.num_items(),
        args.rank,
        result.train_rmse
    );
    ExitCode::SUCCESS
}

fn config_error(message: &str) -> ExitCode {
    eprintln!("error: {message}");
    ExitCode::from(1)
}
