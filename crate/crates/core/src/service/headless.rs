//! Command-line runs: headless to completion, or serving operators.

use std::path::PathBuf;

use crate::bridge::{Bridge, RunReport, StopCondition};
use crate::scenario::Scenario;
use crate::trajectory::TrajectoryLog;

use super::server::{attach_telemetry, serve, AppState};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// Used when neither the command line nor the scenario sets a duration.
pub const DEFAULT_DURATION: f64 = 60.0;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub scenario: PathBuf,
    pub duration: Option<f64>,
    pub log: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub speed: Option<f64>,
    /// Port for the operator server; `None` runs headless.
    pub serve: Option<u16>,
}

/// Outcome of a run, with the process exit code it maps to.
#[derive(Debug)]
pub struct RunOutcome {
    pub code: i32,
    pub report: Option<RunReport>,
}

fn fail(code: i32, msg: impl std::fmt::Display) -> RunOutcome {
    eprintln!("simbridge: {msg}");
    RunOutcome { code, report: None }
}

/// Loads, runs and reports. A headless run exits 0 when the declared success
/// state is reached, or when the duration elapses without error if none is
/// declared. A served run exits 0 unless the loop fails.
pub fn run(opts: &RunOptions) -> RunOutcome {
    let built = match Scenario::load(&opts.scenario) {
        Ok(b) => b,
        Err(e) => return fail(EXIT_INVALID, e),
    };
    for w in &built.warnings {
        eprintln!("simbridge: warning: {w}");
    }
    let duration = opts.duration.or(built.scenario.duration).unwrap_or(DEFAULT_DURATION);
    if !(duration.is_finite() && duration >= 0.0) {
        return fail(EXIT_INVALID, format!("duration must be >= 0 (got {duration})"));
    }
    if let Some(f) = opts.speed {
        if !(f.is_finite() && f > 0.0) {
            return fail(EXIT_INVALID, format!("speed must be > 0 (got {f})"));
        }
    }
    let telemetry_hz = built.scenario.telemetry_hz;
    let declares_success = built.scenario.fsm.success.is_some();
    let mut built = built;
    if opts.speed.is_some() {
        built.scenario.sim.realtime_factor = opts.speed;
    } else if opts.serve.is_some() && built.scenario.sim.realtime_factor.is_none() {
        // an unpaced served run would race through sim time unobserved
        built.scenario.sim.realtime_factor = Some(1.0);
    }

    let mut bridge = match Bridge::new(built) {
        Ok(b) => b,
        Err(e) => return fail(EXIT_RUNTIME, e),
    };
    if let Some(path) = &opts.log {
        let log = match TrajectoryLog::create(path) {
            Ok(l) => l,
            Err(e) => return fail(EXIT_RUNTIME, format!("{}: {e}", path.display())),
        };
        if let Err(e) = bridge.set_log(log) {
            return fail(EXIT_RUNTIME, e);
        }
    }

    let result = match opts.serve {
        None => {
            if duration == 0.0 {
                bridge.flush_log().map(|()| {
                    let r = bridge.report();
                    (r, true)
                })
            } else {
                let stop = StopCondition {
                    max_time: Some(duration),
                    until_terminal: true,
                };
                bridge.run(stop).map(|r| (r, false))
            }
        }
        Some(port) => serve_blocking(bridge, port, opts.duration, telemetry_hz).map(|r| (r, false)),
    };
    let (report, degenerate) = match result {
        Ok(r) => r,
        Err(e) => return fail(EXIT_RUNTIME, e),
    };

    if let Some(path) = &opts.report {
        let text = serde_json::to_string_pretty(&report).expect("report serializes");
        if let Err(e) = std::fs::write(path, text + "\n") {
            return fail(EXIT_RUNTIME, format!("{}: {e}", path.display()));
        }
    }
    let ok = degenerate || opts.serve.is_some() || !declares_success || report.success == Some(true);
    if !ok {
        eprintln!(
            "simbridge: ended in state `{}` at t={:.3}s without reaching success",
            report.final_state, report.t_final
        );
    }
    RunOutcome {
        code: if ok { EXIT_OK } else { EXIT_RUNTIME },
        report: Some(report),
    }
}

/// Runs the loop on this thread and the server on a runtime thread. The
/// loop stops on Ctrl-C or when an explicit duration elapses.
fn serve_blocking(
    mut bridge: Bridge,
    port: u16,
    duration: Option<f64>,
    telemetry_hz: f64,
) -> Result<RunReport, crate::bridge::BridgeError> {
    let telemetry = attach_telemetry(&mut bridge, telemetry_hz);
    let handle = bridge.handle();
    let state = AppState {
        handle: handle.clone(),
        telemetry,
    };
    let rt = tokio::runtime::Runtime::new()?;
    let listener = rt.block_on(tokio::net::TcpListener::bind(("0.0.0.0", port)))?;
    eprintln!("simbridge: listening on {}", listener.local_addr()?);
    let (done_tx, done_rx) = tokio::sync::oneshot::channel::<()>();
    let stopper = handle.clone();
    rt.spawn(async move {
        if tokio::signal::ctrl_c().await.is_ok() {
            stopper.stop();
        }
    });
    rt.spawn(async move {
        let shutdown = async {
            let _ = done_rx.await;
        };
        if let Err(e) = serve(listener, state, shutdown).await {
            tracing::error!(error = %e, "server failed");
        }
    });
    let report = bridge.run(StopCondition {
        max_time: duration,
        until_terminal: false,
    });
    let _ = done_tx.send(());
    rt.shutdown_timeout(std::time::Duration::from_secs(1));
    report
}
