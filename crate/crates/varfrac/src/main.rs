//! Command-line front end: solve / cascade / check / kernel-stats / bench.
//!
//! Exit status: 0 on success with all verdicts passing, 1 on solver or check
//! failure, 2 on configuration problems.

use clap::{Parser, Subcommand};
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use varfrac::config::{parse_config, ConfigError, ExperimentConfig};
use varfrac::report::fmt_f64;
use varfrac::runner::{
    run_bench, run_cascade, run_checks, run_kernel_stats, run_solve, RunError,
};

#[derive(Parser)]
#[command(
    name = "varfrac",
    about = "Variable-order nonlocal p-diffusion: solver, truncation cascade and property checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Configuration file; omitted means all defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: config output.dir, then ./out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the configured random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for assembly, operator applies and cascade levels.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the configured initial-value problem and write trajectory.csv.
    Solve,
    /// Run the data-truncation cascade and write cascade.csv.
    Cascade,
    /// Evaluate the selected property checks and write checks.csv.
    Check,
    /// Assemble the kernel and write kernel_stats.csv.
    KernelStats,
    /// Time kernel assembly and operator applies; write bench.csv.
    Bench,
}

fn load(cli: &Cli) -> Result<(ExperimentConfig, String), ConfigError> {
    let text = match &cli.config {
        Some(path) => match fs::read_to_string(path) {
            Ok(text) => text,
            Err(e) => {
                return Err(ConfigError::Invalid(vec![format!(
                    "cannot read {}: {e}",
                    path.display()
                )]))
            }
        },
        None => String::new(),
    };
    let mut config = parse_config(&text)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok((config, text))
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("cannot configure {threads} threads: {e}");
            return ExitCode::from(2);
        }
    }

    let (config, text) = match load(&cli) {
        Ok(loaded) => loaded,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };

    let out = cli
        .out
        .clone()
        .or_else(|| config.output_dir.clone().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    if let Err(e) = fs::create_dir_all(&out) {
        eprintln!("cannot create output directory {}: {e}", out.display());
        return ExitCode::from(2);
    }

    let outcome: Result<bool, RunError> = match cli.command {
        Command::Solve => run_solve(&config, &text, &out).map(|m| {
            println!(
                "solved {} steps, {} solver iterations -> {}",
                config.steps,
                m.solver_iterations,
                out.join("trajectory.csv").display()
            );
            true
        }),
        Command::Cascade => run_cascade(&config, &text, &out).map(|m| {
            println!(
                "cascade over levels {:?}, {} solver iterations -> {}",
                config.cascade_levels,
                m.solver_iterations,
                out.join("cascade.csv").display()
            );
            true
        }),
        Command::Check => run_checks(&config, &text, &out).map(|(_, all_pass)| {
            match fs::read_to_string(out.join("checks.csv")) {
                Ok(csv) => {
                    for line in csv.lines().skip(1) {
                        let cols: Vec<&str> = line.split(',').collect();
                        if cols.len() == 6 {
                            println!(
                                "{:<24} lhs {:<24} rhs {:<24} slack {:<24} {}",
                                cols[0], cols[1], cols[2], cols[3], cols[4]
                            );
                        }
                    }
                }
                Err(e) => eprintln!("checks.csv written but unreadable: {e}"),
            }
            println!("verdict: {}", if all_pass { "all pass" } else { "FAILED" });
            all_pass
        }),
        Command::KernelStats => run_kernel_stats(&config, &text, &out).map(|m| {
            println!(
                "kernel assembled in {} -> {}",
                m.timings
                    .iter()
                    .find(|(s, _)| s == "assembly")
                    .map(|(_, t)| format!("{} s", fmt_f64(*t)))
                    .unwrap_or_default(),
                out.join("kernel_stats.csv").display()
            );
            true
        }),
        Command::Bench => run_bench(&config, &text, &out).map(|_| {
            println!("bench -> {}", out.join("bench.csv").display());
            true
        }),
    };

    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(1)
        }
    }
}
