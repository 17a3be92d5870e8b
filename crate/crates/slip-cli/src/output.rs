//! Fixed-format artifacts: trajectory CSV, step summaries, and experiment
//! reports. Every file opens with the effective configuration and seed so
//! artifacts are self-describing, and all numbers are printed with 17
//! significant digits and a `.` separator so identical runs produce
//! byte-identical files and diffs between runs are meaningful.

use slip_sim::experiments::{LimitCycleResult, ReturnMapAnalysis, RobustnessReport};
use slip_sim::gait::GaitError;
use slip_sim::log::{GaitLog, SamplePhase, StepRecord};
use slip_sim::validate::ValidationReport;

use crate::config::{echo_toml, RunConfig};

/// 17 significant digits in scientific notation; enough to reproduce any
/// finite double exactly when parsed back.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

fn config_comment_block(cfg: &RunConfig) -> String {
    let mut out = String::from("# effective configuration\n");
    for line in echo_toml(cfg).lines() {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    out
}

/// Renders the trajectory table. Leg and controller columns apply only in
/// stance; their fields are left empty in flight rows, and the controller
/// columns are empty whenever the tracking loop was off.
pub fn trajectory_csv(cfg: &RunConfig, log: &GaitLog) -> String {
    let mut out = config_comment_block(cfg);
    out.push_str("time_s,phase,x_m,y_m,vx_m_s,vy_m_s,r_m,theta_rad,u1,u2,e2_1,e2_2,H_J\n");
    for s in &log.trajectory {
        let phase = match s.phase {
            SamplePhase::Flight => "flight",
            SamplePhase::Stance => "stance",
        };
        let opt = |v: Option<f64>| v.map(fmt17).unwrap_or_default();
        let pair = |v: Option<[f64; 2]>, i: usize| v.map(|p| fmt17(p[i])).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            fmt17(s.time),
            phase,
            fmt17(s.x),
            fmt17(s.y),
            fmt17(s.vx),
            fmt17(s.vy),
            opt(s.r),
            opt(s.theta),
            pair(s.u, 0),
            pair(s.u, 1),
            pair(s.e2, 0),
            pair(s.e2, 1),
            fmt17(s.total_energy),
        ));
    }
    out
}

fn push_kv(out: &mut String, key: &str, v: f64) {
    out.push_str(key);
    out.push_str(" = ");
    out.push_str(&fmt17(v));
    out.push('\n');
}

fn push_opt(out: &mut String, key: &str, v: Option<f64>) {
    out.push_str(key);
    out.push_str(" = ");
    match v {
        Some(v) => out.push_str(&fmt17(v)),
        None => out.push_str("none"),
    }
    out.push('\n');
}

fn push_step(out: &mut String, step: &StepRecord) {
    out.push_str(&format!("[step {}]\n", step.index));
    push_kv(out, "apex_time_s", step.apex.time);
    push_kv(out, "apex_x_m", step.apex.x);
    push_kv(out, "apex_height_m", step.apex.height);
    push_kv(out, "apex_vx_m_per_s", step.apex.vx);
    push_kv(out, "touchdown_time_s", step.touchdown.time);
    push_kv(out, "touchdown_x_m", step.touchdown.state.x);
    push_kv(out, "touchdown_y_m", step.touchdown.state.y);
    push_kv(out, "touchdown_vx_m_per_s", step.touchdown.state.vx);
    push_kv(out, "touchdown_vy_m_per_s", step.touchdown.state.vy);
    push_kv(out, "touchdown_perceived_time_s", step.touchdown.perceived_time);
    push_kv(out, "liftoff_time_s", step.liftoff.time);
    push_kv(out, "liftoff_x_m", step.liftoff.state.x);
    push_kv(out, "liftoff_y_m", step.liftoff.state.y);
    push_kv(out, "liftoff_vx_m_per_s", step.liftoff.state.vx);
    push_kv(out, "liftoff_vy_m_per_s", step.liftoff.state.vy);
    push_kv(out, "liftoff_perceived_time_s", step.liftoff.perceived_time);
    push_opt(out, "e2_touchdown", step.e2_touchdown);
    push_opt(out, "e2_max", step.e2_max);
    push_opt(out, "e2_liftoff", step.e2_liftoff);
    push_kv(out, "energy_apex_total_j", step.energy_at_apex.total);
    push_kv(out, "energy_drift_j", step.energy_at_apex.nonconservative);
    out.push_str(&format!("saturated_steps = {}\n", step.saturated_steps));
    out.push_str(&format!("clamped_steps = {}\n", step.clamped_steps));
    out.push_str(&format!("servo_clamped = {}\n", step.servo_clamped));
    out.push('\n');
}

/// Renders the per-cycle summary: one block per completed step, then a
/// failure block when the run stopped early.
pub fn step_summary(cfg: &RunConfig, log: &GaitLog) -> String {
    let mut out = config_comment_block(cfg);
    out.push('\n');
    for step in &log.steps {
        push_step(&mut out, step);
    }
    if let Some(f) = &log.failure {
        out.push_str("[failure]\n");
        out.push_str(&format!("step = {}\n", f.step));
        out.push_str(&format!("reason = {:?}\n", f.reason.to_string()));
    }
    out
}

/// Renders the fixed-point search report.
pub fn limit_cycle_report(cfg: &RunConfig, r: &LimitCycleResult) -> String {
    let mut out = config_comment_block(cfg);
    out.push('\n');
    out.push_str("[limit_cycle]\n");
    out.push_str(&format!("converged = {}\n", r.converged));
    out.push_str(&format!("iterations = {}\n", r.iterations));
    push_kv(&mut out, "apex_height_m", r.apex.0);
    push_kv(&mut out, "apex_vx_m_per_s", r.apex.1);
    push_kv(&mut out, "commanded_apex_error_m", r.commanded_apex_error);
    push_kv(
        &mut out,
        "commanded_velocity_error_m_per_s",
        r.commanded_velocity_error,
    );
    out
}

/// Renders the apex history of the fixed-point search as a CSV table.
pub fn limit_cycle_history_csv(cfg: &RunConfig, r: &LimitCycleResult) -> String {
    let mut out = config_comment_block(cfg);
    out.push_str("iteration,apex_height_m,apex_vx_m_per_s\n");
    for (i, (y, vx)) in r.history.iter().enumerate() {
        out.push_str(&format!("{},{},{}\n", i, fmt17(*y), fmt17(*vx)));
    }
    out
}

/// Renders the return-map linearization report.
pub fn return_map_report(cfg: &RunConfig, a: &ReturnMapAnalysis) -> String {
    let mut out = config_comment_block(cfg);
    out.push('\n');
    out.push_str("[return_map]\n");
    push_kv(&mut out, "fixed_point_height_m", a.fixed_point.0);
    push_kv(&mut out, "fixed_point_vx_m_per_s", a.fixed_point.1);
    push_kv(&mut out, "delta", a.delta);
    push_kv(&mut out, "confirm_delta", a.confirm_delta);
    out.push_str(&format!("stable = {}\n", a.stable));
    push_kv(&mut out, "eigenvalue_magnitude_1", a.eigenvalue_magnitudes[0]);
    push_kv(&mut out, "eigenvalue_magnitude_2", a.eigenvalue_magnitudes[1]);
    push_kv(&mut out, "max_entry_disagreement", a.max_entry_disagreement);
    out
}

/// Renders both difference quotients of the return-map Jacobian as a CSV
/// table, one row per matrix entry.
pub fn return_map_csv(cfg: &RunConfig, a: &ReturnMapAnalysis) -> String {
    let mut out = config_comment_block(cfg);
    out.push_str("row,col,jacobian,confirm_jacobian\n");
    for row in 0..2 {
        for col in 0..2 {
            out.push_str(&format!(
                "{},{},{},{}\n",
                row,
                col,
                fmt17(a.jacobian[row][col]),
                fmt17(a.confirm_jacobian[row][col]),
            ));
        }
    }
    out
}

/// Renders the noise-sweep report: per-level success rates, then the raw
/// cells as a CSV table via [`robustness_csv`].
pub fn robustness_report(cfg: &RunConfig, r: &RobustnessReport) -> String {
    let mut out = config_comment_block(cfg);
    out.push('\n');
    out.push_str("[robustness]\n");
    push_kv(&mut out, "reference_apex_height_m", r.reference_apex.0);
    push_kv(&mut out, "reference_apex_vx_m_per_s", r.reference_apex.1);
    out.push_str(&format!("seeds_per_level = {}\n", r.seeds_per_level));
    out.push_str(&format!("steps_per_run = {}\n", r.steps_per_run));
    push_kv(&mut out, "apex_band", r.band);
    out.push('\n');
    for &level in &r.levels {
        out.push_str(&format!("[level {}]\n", fmt17(level)));
        push_kv(&mut out, "success_rate", r.success_rate(level));
        let cells: Vec<_> = r.cells.iter().filter(|c| c.level == level).collect();
        let contracted = cells.iter().filter(|c| c.all_stances_contracted).count();
        out.push_str(&format!(
            "runs_with_every_stance_contracting = {} of {}\n",
            contracted,
            cells.len()
        ));
        out.push('\n');
    }
    out
}

/// Renders every sweep cell as one CSV row.
pub fn robustness_csv(cfg: &RunConfig, r: &RobustnessReport) -> String {
    let mut out = config_comment_block(cfg);
    out.push_str(
        "level,seed,completed_steps,success,all_stances_contracted,max_liftoff_e2,max_apex_deviation,cycles_to_band\n",
    );
    for c in &r.cells {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            fmt17(c.level),
            c.seed,
            c.completed_steps,
            c.success,
            c.all_stances_contracted,
            fmt17(c.max_liftoff_e2),
            fmt17(c.max_apex_deviation),
            c.cycles_to_band.map(|n| n.to_string()).unwrap_or_default(),
        ));
    }
    out
}

/// Renders the self-check suite report, one PASS/FAIL line per check.
pub fn validate_report(cfg: &RunConfig, r: &ValidationReport) -> String {
    let mut out = config_comment_block(cfg);
    out.push('\n');
    for c in &r.checks {
        let verdict = if c.passed { "PASS" } else { "FAIL" };
        out.push_str(&format!("{verdict} {}: {}\n", c.name, c.detail));
    }
    out.push_str(&format!(
        "\n{} of {} checks passed\n",
        r.checks.iter().filter(|c| c.passed).count(),
        r.checks.len()
    ));
    out
}

/// Error-channel text for a gait run that stopped early.
pub fn failure_message(f: &slip_sim::log::GaitFailure) -> String {
    format!("gait failed at step {}: {}", f.step, f.reason)
}

/// Human-readable rendering of a simulation error outside a gait run.
pub fn gait_error_message(e: &GaitError) -> String {
    format!("simulation failed: {e}")
}
