use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use metatrace::dp;
use metatrace::harness::{self, ExperimentConfig, Metric, PlotKind, SweepOutcome};
use metatrace::mdp::{DiscountFunction, FiniteMdp, TabularPolicy};
use metatrace::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_ALL_DIVERGENT: u8 = 3;

#[derive(Parser)]
#[command(name = "metatrace", version, about = "TD(λ) learners with meta-learned state-based λ")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact values and state frequencies of a policy on a JSON MDP.
    DpSolve {
        #[arg(long)]
        mdp: PathBuf,
        /// JSON matrix of action probabilities, one row per state.
        #[arg(long)]
        policy: PathBuf,
        /// A scalar, or a JSON file holding one discount per state.
        #[arg(long)]
        gamma: String,
    },
    /// Runs a prediction config and prints the per-cell summary.
    Predict {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        metric: Option<Metric>,
    },
    /// Runs a control config and prints the per-cell summary.
    Control {
        #[arg(long)]
        config: PathBuf,
    },
    /// Runs a config and writes CSV tables and metadata into a directory.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        metric: Option<Metric>,
    },
    /// Draws an SVG plot (plus its CSV) from a sweep directory.
    Plot {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        kind: PlotKind,
    },
}

fn load_config(path: &Path, metric: Option<Metric>) -> metatrace::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(m) = metric {
        cfg.metric = m;
    }
    Ok(cfg)
}

fn parse_gamma(mdp: &FiniteMdp, arg: &str) -> metatrace::Result<DiscountFunction> {
    if let Ok(g) = arg.parse::<f64>() {
        return DiscountFunction::constant(mdp, g);
    }
    let values: Vec<f64> = serde_json::from_str(&std::fs::read_to_string(arg)?)?;
    DiscountFunction::new(mdp, values)
}

fn print_summary(outcome: &SweepOutcome) {
    println!("{:<40} {:>14} {:>14} {:>6} {:>9}", "cell", "mean", "std", "runs", "divergent");
    for s in &outcome.summaries {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.6e}"));
        println!("{:<40} {:>14} {:>14} {:>6} {:>9}", s.cell, fmt(s.mean), fmt(s.std), s.runs, s.divergent);
    }
}

fn finish(outcome: &SweepOutcome) -> ExitCode {
    for s in outcome.summaries.iter().filter(|s| s.divergent > 0) {
        log::warn!("{}: {} of {} runs diverged", s.cell, s.divergent, s.runs);
    }
    if outcome.all_cells_divergent() {
        eprintln!("every cell diverged");
        ExitCode::from(EXIT_ALL_DIVERGENT)
    } else {
        ExitCode::SUCCESS
    }
}

fn run(cli: Cli) -> metatrace::Result<ExitCode> {
    match cli.command {
        Command::DpSolve { mdp, policy, gamma } => {
            let m = FiniteMdp::load(&mdp)?;
            let pi = TabularPolicy::load(&m, &policy)?;
            let g = parse_gamma(&m, &gamma)?;
            let values = dp::solve_values_direct(&m, &pi, &g)?;
            let freq = dp::solve_state_frequencies(&m, &pi, dp::DEFAULT_THETA, dp::DEFAULT_MAX_SWEEPS)?;
            let out = serde_json::json!({ "values": values.v, "frequencies": freq.d });
            println!("{}", serde_json::to_string_pretty(&out)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Predict { config, metric } => {
            let cfg = load_config(&config, metric)?;
            if cfg.env.is_control() {
                return Err(Error::Config("predict needs a prediction environment; use `control`".into()));
            }
            let outcome = harness::run_and_aggregate(&cfg)?;
            print_summary(&outcome);
            Ok(finish(&outcome))
        }
        Command::Control { config } => {
            let cfg = load_config(&config, None)?;
            if !cfg.env.is_control() {
                return Err(Error::Config("control needs a control environment; use `predict`".into()));
            }
            let outcome = harness::run_and_aggregate(&cfg)?;
            print_summary(&outcome);
            Ok(finish(&outcome))
        }
        Command::Sweep { config, out, metric } => {
            let cfg = load_config(&config, metric)?;
            let outcome = harness::sweep_to_dir(&cfg, &out)?;
            print_summary(&outcome);
            Ok(finish(&outcome))
        }
        Command::Plot { input, kind } => {
            harness::emit_plots(&input, kind)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Json(_) => ExitCode::from(EXIT_CONFIG),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
