//! `foliation` command line: run configured experiments, check the gap
//! condition, emit the built-in preset.

// `!(x > 0)` rather than `x <= 0`: the negated form also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

mod config;
mod runner;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use foliation_core::lp::{fiber_lipschitz_bound, gap_condition};

const OUT_DIR_ENV: &str = "FOLIATION_OUT_DIR";

#[derive(Parser)]
#[command(name = "foliation", version, about = "Invariant foliations for two-block systems with multiplicative heavy-tailed noise")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute the experiments in a configuration document.
    Run {
        /// Path to the TOML configuration.
        config: PathBuf,
        /// Output directory (overrides config and the FOLIATION_OUT_DIR env var).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker count (0 = all cores; overrides the config).
        #[arg(long)]
        workers: Option<usize>,
        /// Offset added to every seed in the config.
        #[arg(long, default_value_t = 0)]
        seed_offset: u64,
    },
    /// Evaluate the contraction constant rho and the gap condition.
    CheckGap {
        #[arg(long, allow_negative_numbers = true)]
        a: f64,
        #[arg(long, allow_negative_numbers = true)]
        b: f64,
        #[arg(long = "K", alias = "k", allow_negative_numbers = true)]
        k: f64,
        #[arg(long, allow_negative_numbers = true)]
        eta: f64,
    },
    /// Print a complete configuration document for a named preset.
    Preset {
        /// Preset name (available: example5).
        name: String,
        /// Coupling strength for the benchmark system.
        #[arg(long, default_value_t = 1.0)]
        epsilon: f64,
        /// Write to a file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match Cli::parse().cmd {
        Cmd::Run {
            config,
            out,
            workers,
            seed_offset,
        } => cmd_run(&config, out, workers, seed_offset),
        Cmd::CheckGap { a, b, k, eta } => cmd_check_gap(a, b, k, eta),
        Cmd::Preset { name, epsilon, out } => cmd_preset(&name, epsilon, out),
    }
}

fn cmd_run(
    config_path: &PathBuf,
    out: Option<PathBuf>,
    workers: Option<usize>,
    seed_offset: u64,
) -> ExitCode {
    let text = match std::fs::read_to_string(config_path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("config error: cannot read {}: {e}", config_path.display());
            return ExitCode::from(2);
        }
    };
    let cfg = match config::parse_config(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };
    let out_dir = out
        .or_else(|| cfg.out_dir.as_ref().map(PathBuf::from))
        .or_else(|| std::env::var(OUT_DIR_ENV).ok().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    if let Err(e) = std::fs::create_dir_all(&out_dir) {
        eprintln!("config error: cannot create output dir {}: {e}", out_dir.display());
        return ExitCode::from(2);
    }

    let cache_dir = cfg.cache_paths.then(|| out_dir.join("cache"));
    let outcome = runner::execute(&cfg, &text, seed_offset, workers, cache_dir.as_deref());

    for (name, content) in &outcome.files {
        let path = out_dir.join(name);
        if let Err(e) = std::fs::write(&path, content) {
            eprintln!("io error: cannot write {}: {e}", path.display());
            return ExitCode::from(1);
        }
    }
    let report_path = out_dir.join("report.json");
    let report_text = serde_json::to_string_pretty(&outcome.report).expect("report json");
    if let Err(e) = std::fs::write(&report_path, report_text) {
        eprintln!("io error: cannot write {}: {e}", report_path.display());
        return ExitCode::from(1);
    }

    for exp in outcome.report["experiments"].as_array().unwrap() {
        println!(
            "{}: {}",
            exp["name"].as_str().unwrap(),
            exp["status"].as_str().unwrap()
        );
    }
    println!("report: {}", report_path.display());
    if outcome.any_failed {
        eprintln!("one or more experiments failed; see {}", report_path.display());
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}

fn cmd_check_gap(a: f64, b: f64, k: f64, eta: f64) -> ExitCode {
    match gap_condition(a, b, k, eta) {
        Ok((rho, holds)) => {
            println!("rho = {rho}");
            println!("gap condition holds: {holds}");
            if holds {
                if let Ok(lip) = fiber_lipschitz_bound(a, b, k, eta) {
                    println!("graph Lipschitz bound: {lip}");
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
    }
}

fn cmd_preset(name: &str, epsilon: f64, out: Option<PathBuf>) -> ExitCode {
    if name != "example5" {
        eprintln!("config error: unknown preset {name:?}; available: example5");
        return ExitCode::from(2);
    }
    if !(epsilon >= 0.0) {
        eprintln!("config error: epsilon must be nonnegative, got {epsilon}");
        return ExitCode::from(2);
    }
    let doc = config::preset_example5(epsilon);
    match out {
        None => {
            print!("{doc}");
            ExitCode::SUCCESS
        }
        Some(path) => match std::fs::write(&path, doc) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("io error: cannot write {}: {e}", path.display());
                ExitCode::from(1)
            }
        },
    }
}
