//! The five experiment commands. Each one builds its artifacts in memory,
//! writes them into the output directory, and reports what it wrote on
//! stdout; failures are classified so the binary can map them to exit codes.

use std::fmt;
use std::path::Path;

use slip_sim::experiments::{analyze_return_map, find_limit_cycle, robustness_sweep};
use slip_sim::gait::GaitExecutor;
use slip_sim::model::FlightState;
use slip_sim::validate::run_validate;

use crate::config::{ConfigError, RunConfig};
use crate::output;

/// Touchdown-listener noise levels swept by `cmd_robustness`.
pub const ROBUSTNESS_LEVELS: [f64; 3] = [0.0, 0.05, 0.10];
/// Independent seeded runs per noise level.
pub const ROBUSTNESS_SEEDS_PER_LEVEL: u32 = 50;
/// Gait cycles per seeded run.
pub const ROBUSTNESS_STEPS_PER_RUN: usize = 20;
/// Sup-norm apex band (height in m, velocity in m/s) counted as recaptured.
/// Velocity scatter dominates the deviation, so the band is sized to it.
pub const ROBUSTNESS_APEX_BAND: f64 = 0.30;

/// Finite-difference offset for the return-map linearization; the analysis
/// itself re-differences at half this value to confirm convergence.
pub const RETURN_MAP_DELTA: f64 = 1e-5;

#[derive(Debug)]
pub enum CmdError {
    Config(ConfigError),
    Sim(String),
    Io(String),
    Validation(String),
}

impl fmt::Display for CmdError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CmdError::Config(e) => write!(f, "configuration error:\n{e}"),
            CmdError::Sim(msg) => write!(f, "{msg}"),
            CmdError::Io(msg) => write!(f, "{msg}"),
            CmdError::Validation(msg) => write!(f, "{msg}"),
        }
    }
}

impl CmdError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CmdError::Config(_) => 1,
            CmdError::Sim(_) | CmdError::Io(_) => 2,
            CmdError::Validation(_) => 3,
        }
    }
}

fn write_artifact(out_dir: &Path, name: &str, content: &str) -> Result<(), CmdError> {
    let path = out_dir.join(name);
    std::fs::write(&path, content)
        .map_err(|e| CmdError::Io(format!("cannot write {}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(())
}

/// The apex state a gait run launches from: the commanded apex, at the
/// configured forward speed, with the horizontal origin at zero.
pub fn start_state(cfg: &RunConfig) -> FlightState {
    FlightState {
        x: 0.0,
        vx: cfg.setup.command.desired_velocity,
        y: cfg.setup.command.desired_apex,
        vy: 0.0,
    }
}

/// Simulates `n_steps` gait cycles and writes the trajectory CSV and the
/// step summary. A gait failure still writes both artifacts, so the partial
/// run can be inspected, and is then reported as the command's failure.
pub fn cmd_run(cfg: &RunConfig, out_dir: &Path) -> Result<(), CmdError> {
    let mut executor = GaitExecutor::new(cfg.setup)
        .map_err(|e| CmdError::Sim(output::gait_error_message(&e)))?;
    let log = executor.run_gait(start_state(cfg), cfg.n_steps);
    write_artifact(out_dir, &cfg.trajectory_csv, &output::trajectory_csv(cfg, &log))?;
    write_artifact(out_dir, &cfg.step_summary, &output::step_summary(cfg, &log))?;
    if let Some(f) = &log.failure {
        return Err(CmdError::Sim(output::failure_message(f)));
    }
    Ok(())
}

/// Iterates the apex return map from the commanded apex until it settles,
/// then writes the report and the iteration history table.
pub fn cmd_limit_cycle(cfg: &RunConfig, out_dir: &Path) -> Result<(), CmdError> {
    let initial = (
        cfg.setup.command.desired_apex,
        cfg.setup.command.desired_velocity,
    );
    let result = find_limit_cycle(&cfg.setup, initial)
        .map_err(|e| CmdError::Sim(output::gait_error_message(&e)))?;
    write_artifact(out_dir, "limit_cycle.txt", &output::limit_cycle_report(cfg, &result))?;
    write_artifact(
        out_dir,
        "limit_cycle_history.csv",
        &output::limit_cycle_history_csv(cfg, &result),
    )?;
    if !result.converged {
        return Err(CmdError::Sim(format!(
            "apex iteration did not settle within {} applications; last apex ({}, {})",
            result.iterations, result.apex.0, result.apex.1
        )));
    }
    Ok(())
}

/// Finds the gait's fixed point, linearizes the return map around it at two
/// difference offsets, and writes the stability report and Jacobian table.
pub fn cmd_return_map(cfg: &RunConfig, out_dir: &Path) -> Result<(), CmdError> {
    let initial = (
        cfg.setup.command.desired_apex,
        cfg.setup.command.desired_velocity,
    );
    let cycle = find_limit_cycle(&cfg.setup, initial)
        .map_err(|e| CmdError::Sim(output::gait_error_message(&e)))?;
    if !cycle.converged {
        return Err(CmdError::Sim(
            "no fixed point to linearize around: apex iteration did not settle".into(),
        ));
    }
    let analysis = analyze_return_map(&cfg.setup, cycle.apex, RETURN_MAP_DELTA)
        .map_err(|e| CmdError::Sim(output::gait_error_message(&e)))?;
    write_artifact(out_dir, "return_map.txt", &output::return_map_report(cfg, &analysis))?;
    write_artifact(out_dir, "return_map.csv", &output::return_map_csv(cfg, &analysis))?;
    Ok(())
}

/// Sweeps touchdown noise over `ROBUSTNESS_LEVELS`, 50 seeded runs of 20
/// cycles each per level, and writes the summary report and per-run table.
pub fn cmd_robustness(cfg: &RunConfig, out_dir: &Path) -> Result<(), CmdError> {
    let report = robustness_sweep(
        &cfg.setup,
        &ROBUSTNESS_LEVELS,
        ROBUSTNESS_SEEDS_PER_LEVEL,
        ROBUSTNESS_STEPS_PER_RUN,
        ROBUSTNESS_APEX_BAND,
    )
    .map_err(|e| CmdError::Sim(output::gait_error_message(&e)))?;
    write_artifact(out_dir, "robustness.txt", &output::robustness_report(cfg, &report))?;
    write_artifact(out_dir, "robustness.csv", &output::robustness_csv(cfg, &report))?;
    Ok(())
}

/// Runs the library's self-check suites against the configuration, echoes
/// one PASS/FAIL line per check, writes the report, and fails the command
/// when any check failed.
pub fn cmd_validate(cfg: &RunConfig, out_dir: &Path) -> Result<(), CmdError> {
    let report = run_validate(&cfg.setup);
    let rendered = output::validate_report(cfg, &report);
    for c in &report.checks {
        let verdict = if c.passed { "PASS" } else { "FAIL" };
        println!("{verdict} {}: {}", c.name, c.detail);
    }
    write_artifact(out_dir, "validate.txt", &rendered)?;
    if !report.passed() {
        let failed: Vec<&str> = report.failures().map(|c| c.name).collect();
        return Err(CmdError::Validation(format!(
            "{} of {} checks failed: {}",
            failed.len(),
            report.checks.len(),
            failed.join(", ")
        )));
    }
    Ok(())
}
