use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use classil::harness::{exit_code, inspect, run_config, verify_theory, RunOverrides, VerifyOptions};

#[derive(Parser)]
#[command(name = "classil", version, about = "Class-incremental loss-matrix experiments")]
struct Cli {
    /// Base seed (overrides the config's `base_seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Concurrent runs.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory (`run`) or report file (`verify`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write its outputs.
    Run { config: PathBuf },
    /// Run the theory checks.
    Verify {
        /// Drop off-diagonal blocks from the union-optimality check.
        #[arg(long)]
        sabotage_offdiag: bool,
        /// Repeats for the upper-bound check.
        #[arg(long, default_value_t = 3)]
        repeats: usize,
    },
    /// Summarize a run record JSON file.
    Inspect { record: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let code = match cli.command {
        Command::Run { config } => {
            let overrides = RunOverrides {
                seed: cli.seed,
                workers: cli.workers,
                out: cli.out,
            };
            match run_config(&config, &overrides) {
                Ok(outcome) => {
                    print!("{}", outcome.table.to_csv());
                    eprintln!("outputs in {}", outcome.config.out_dir.display());
                    if outcome.complete() {
                        0
                    } else {
                        for f in outcome.failures() {
                            eprintln!("failed: {f}");
                        }
                        1
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    exit_code(&e)
                }
            }
        }
        Command::Verify {
            sabotage_offdiag,
            repeats,
        } => {
            let opts = VerifyOptions {
                seed: cli.seed.unwrap_or(0),
                repeats,
                sabotage_offdiag,
            };
            match verify_theory(&opts) {
                Ok(report) => {
                    for c in &report.checks {
                        println!("{} {} ({})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.tolerance);
                    }
                    let json = serde_json::to_string_pretty(&report).expect("report serializes");
                    match &cli.out {
                        Some(path) => {
                            if let Err(e) = std::fs::write(path, json + "\n") {
                                eprintln!("error: cannot write {}: {e}", path.display());
                                return ExitCode::from(1);
                            }
                        }
                        None => println!("{json}"),
                    }
                    let failing = report.failing();
                    if failing.is_empty() {
                        0
                    } else {
                        eprintln!("failed checks: {}", failing.join(", "));
                        1
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    exit_code(&e)
                }
            }
        }
        Command::Inspect { record } => match inspect(&record) {
            Ok(text) => {
                print!("{text}");
                0
            }
            Err(e) => {
                eprintln!("error: {e}");
                exit_code(&e)
            }
        },
    };
    ExitCode::from(code as u8)
}
