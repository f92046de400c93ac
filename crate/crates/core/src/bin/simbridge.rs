use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use simbridge::service::headless::{self, RunOptions};

#[derive(Parser)]
#[command(name = "simbridge", version, about = "Controller/simulator bridge")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario headless or behind the operator server.
    Run {
        scenario: PathBuf,
        /// Sim-time budget in seconds (defaults to the scenario's).
        #[arg(long)]
        duration: Option<f64>,
        /// JSONL trajectory log.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Run report (JSON).
        #[arg(long)]
        report: Option<PathBuf>,
        /// Serve /ws and /api on this port.
        #[arg(long, env = "SIMBRIDGE_PORT")]
        serve: Option<u16>,
        /// Real-time factor.
        #[arg(long)]
        speed: Option<f64>,
        /// Never start the server, even when SIMBRIDGE_PORT is set.
        #[arg(long)]
        headless: bool,
    },
    /// Convert a trajectory log to per-joint CSV files.
    Export {
        #[arg(long = "csv", value_name = "LOG")]
        log: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();

    match Cli::parse().command {
        Cmd::Run {
            scenario,
            duration,
            log,
            report,
            serve,
            speed,
            headless,
        } => {
            let opts = RunOptions {
                scenario,
                duration,
                log,
                report: report.clone(),
                speed,
                serve: if headless { None } else { serve },
            };
            let outcome = headless::run(&opts);
            if let (Some(r), None) = (&outcome.report, report) {
                println!("{}", serde_json::to_string_pretty(r).expect("report serializes"));
            }
            ExitCode::from(outcome.code as u8)
        }
        Cmd::Export { log, out } => {
            let file = match std::fs::File::open(&log) {
                Ok(f) => f,
                Err(e) => {
                    eprintln!("simbridge: {}: {e}", log.display());
                    return ExitCode::from(1);
                }
            };
            match simbridge::export::export_csv(std::io::BufReader::new(file), &out) {
                Ok(paths) => {
                    for p in paths {
                        println!("{}", p.display());
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("simbridge: {e}");
                    ExitCode::from(2)
                }
            }
        }
    }
}
