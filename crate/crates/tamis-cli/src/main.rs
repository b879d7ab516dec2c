//! Experiment runner for the tamis library: runs JSON-described experiments
//! across seeded replicates, verifies built-in numerical identities, and
//! renders diagnostic charts from trace CSVs.

mod config;
mod runner;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::ExperimentConfig;
use runner::RunOptions;

#[derive(Parser)]
#[command(name = "tamis", version, about = "Adaptive importance sampling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config file.
    Run {
        /// Experiment config (JSON).
        config: PathBuf,
        /// Output directory; defaults to the config's `output`, then to the
        /// experiment name.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for replicates; defaults to one per core.
        #[arg(long)]
        workers: Option<usize>,
        /// Override the config's base seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write per-replicate particle and proposal dumps.
        #[arg(long)]
        dump_particles: bool,
    },
    /// Run the built-in numerical identity checks and report each one.
    Verify,
    /// Render beta and kl_hat SVG charts from a trace CSV.
    Plot {
        /// Trace CSV produced by `run`.
        trace: PathBuf,
        /// Output directory; defaults to the trace's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

// Exit codes: 0 success, 1 run or check failure, 2 invalid config or usage.
fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { config, out, workers, seed, dump_particles } => {
            cmd_run(&config, out, workers, seed, dump_particles)
        }
        Command::Verify => cmd_verify(),
        Command::Plot { trace, out } => cmd_plot(&trace, out),
    }
}

fn cmd_run(
    path: &std::path::Path,
    out: Option<PathBuf>,
    workers: Option<usize>,
    seed: Option<u64>,
    dump_particles: bool,
) -> ExitCode {
    let mut cfg = match ExperimentConfig::load(path) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("invalid config: {e:#}");
            return ExitCode::from(2);
        }
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let warnings = match cfg.validate() {
        Ok(w) => w,
        Err(e) => {
            eprintln!("invalid config: {e:#}");
            return ExitCode::from(2);
        }
    };
    for w in &warnings {
        eprintln!("warning: {w}");
    }

    let out_dir = out
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from(&cfg.experiment));
    let opts = RunOptions { out_dir, workers, dump_particles };
    match runner::run_experiment(&cfg, &opts) {
        Ok(true) => {
            println!(
                "{}: {} replicate(s) done, results in {}",
                cfg.experiment,
                cfg.replicates,
                opts.out_dir.display()
            );
            ExitCode::SUCCESS
        }
        Ok(false) => {
            eprintln!(
                "{}: some replicates failed; see {}",
                cfg.experiment,
                opts.out_dir.join("aggregate.csv").display()
            );
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("run failed: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn cmd_verify() -> ExitCode {
    let checks = tamis::oracle::run_appendix_checks();
    let mut all_passed = true;
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        all_passed &= c.passed;
    }
    println!(
        "{}/{} checks passed",
        checks.iter().filter(|c| c.passed).count(),
        checks.len()
    );
    if all_passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn cmd_plot(trace: &std::path::Path, out: Option<PathBuf>) -> ExitCode {
    match runner::plot_trace(trace, out.as_deref()) {
        Ok(paths) => {
            for p in &paths {
                println!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("plot failed: {e:#}");
            ExitCode::from(1)
        }
    }
}
