//! Runtime self-check suite: re-derives the library's core identities with
//! independent closed forms so an installed binary can vouch for itself on
//! the configuration it was given.

use nalgebra::{Vector2, Vector4};

use crate::control::{assemble_error_dynamics, build_plant, observer_gains, tracking_gains};
use crate::gait::{GaitExecutor, GaitSetup};
use crate::integrate::{integrate_until_event, step_rk4, Crossing, IntegratorConfig};
use crate::model::{
    energy_ledger, stance_accel_cartesian, stance_derivative_passive, stance_to_cartesian,
    FlightState, HybridState, Phase, StanceState,
};
use crate::reference::{
    build_reference, compute_compression, fit_parabola, reference_output, stance_waypoints,
};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

fn check(
    checks: &mut Vec<CheckResult>,
    name: &'static str,
    body: impl FnOnce() -> Result<String, String>,
) {
    let (passed, detail) = match body() {
        Ok(detail) => (true, detail),
        Err(detail) => (false, detail),
    };
    checks.push(CheckResult {
        name,
        passed,
        detail,
    });
}

/// Runs every self-check against the given setup. Physics identities use
/// the setup's model parameters; controller identities use its gains.
pub fn run_validate(setup: &GaitSetup) -> ValidationReport {
    let mut checks = Vec::new();

    check(&mut checks, "model parameters accepted", || {
        setup.params.validate().map_err(|e| e.to_string())?;
        setup
            .command
            .validate(&setup.params)
            .map_err(|e| e.to_string())?;
        Ok("parameter and command invariants hold".into())
    });

    check(&mut checks, "stance radial acceleration closed form", || {
        // Independent evaluation of the radial balance at a vertical leg:
        // centripetal + spring - gravity - damping, all per unit mass.
        let p = &setup.params;
        let s = StanceState {
            r: p.rest_length * 0.8,
            theta: std::f64::consts::FRAC_PI_2,
            r_dot: -0.3,
            theta_dot: 0.4,
            foot_x: 0.0,
        };
        let d = stance_derivative_passive(&s, p).map_err(|e| e.to_string())?;
        let expected = s.r * s.theta_dot * s.theta_dot - p.gravity
            - p.damping / p.mass * s.r_dot
            + p.stiffness / p.mass * (p.rest_length - s.r);
        let err = (d.r_dot - expected).abs();
        if err < 1e-12 {
            Ok(format!("residual {err:.3e}"))
        } else {
            Err(format!("residual {err:.3e} exceeds 1e-12"))
        }
    });

    check(&mut checks, "polar and planar stance charts agree", || {
        let p = &setup.params;
        let s = StanceState {
            r: p.rest_length * 0.85,
            theta: 1.9,
            r_dot: -0.25,
            theta_dot: 1.1,
            foot_x: 0.4,
        };
        let d = stance_derivative_passive(&s, p).map_err(|e| e.to_string())?;
        let f = stance_to_cartesian(&s);
        let (ax, ay) = stance_accel_cartesian(f.x - s.foot_x, f.y, f.vx, f.vy, p);
        // Chain rule from polar rates to planar acceleration.
        let (sin, cos) = s.theta.sin_cos();
        let ax_polar = d.r_dot * cos
            - 2.0 * s.r_dot * s.theta_dot * sin
            - s.r * d.theta_dot * sin
            - s.r * s.theta_dot * s.theta_dot * cos;
        let ay_polar = d.r_dot * sin + 2.0 * s.r_dot * s.theta_dot * cos + s.r * d.theta_dot * cos
            - s.r * s.theta_dot * s.theta_dot * sin;
        let err = (ax - ax_polar).abs().max((ay - ay_polar).abs());
        if err < 1e-10 {
            Ok(format!("max acceleration mismatch {err:.3e}"))
        } else {
            Err(format!("max acceleration mismatch {err:.3e} exceeds 1e-10"))
        }
    });

    check(&mut checks, "integrator matches exponential decay", || {
        let one_step = step_rk4(&[1.0], 0.1, &|s: &[f64; 1]| [-s[0]]).map_err(|e| e.to_string())?;
        let expected = 0.904_837_5;
        let err = (one_step[0] - expected).abs();
        if err < 5e-8 {
            Ok(format!("single-step error {err:.3e}"))
        } else {
            Err(format!("single-step error {err:.3e} exceeds 5e-8"))
        }
    });

    check(&mut checks, "event location matches ballistic drop", || {
        let g = setup.params.gravity;
        let y0 = 1.0;
        let target = 0.5;
        let ev = integrate_until_event(
            0.0,
            [y0, 0.0],
            5.0,
            &|s: &[f64; 2]| [s[1], -g],
            |s: &[f64; 2]| s[0] - target,
            Crossing::Falling,
            &IntegratorConfig::default(),
            |_, _| {},
        )
        .map_err(|e| e.to_string())?;
        let exact = (2.0 * (y0 - target) / g).sqrt();
        let err = (ev.time - exact).abs();
        if err < 1e-9 {
            Ok(format!("drop-time error {err:.3e} s"))
        } else {
            Err(format!("drop-time error {err:.3e} s exceeds 1e-9"))
        }
    });

    check(&mut checks, "compression depth balances energies", || {
        let p = &setup.params;
        let drop = setup.command.desired_apex
            - p.rest_length * setup.command.attack_angle.sin();
        if drop <= 0.0 {
            return Err(format!(
                "commanded apex leaves no drop above touchdown (drop {drop} m)"
            ));
        }
        let dy = compute_compression(drop, p).map_err(|e| e.to_string())?;
        let stored = 0.5 * p.stiffness * dy * dy;
        let released = p.mass * p.gravity * drop;
        let rel = ((stored - released) / released).abs();
        if rel < 1e-12 {
            Ok(format!("relative energy mismatch {rel:.3e}"))
        } else {
            Err(format!("relative energy mismatch {rel:.3e} exceeds 1e-12"))
        }
    });

    check(&mut checks, "stance plan interpolates its waypoints", || {
        let p = &setup.params;
        let touchdown = FlightState {
            x: 0.0,
            vx: setup.command.desired_velocity.max(0.1),
            y: p.rest_length * setup.command.attack_angle.sin(),
            vy: -1.0,
        };
        let foot_x = touchdown.x - p.rest_length * setup.command.attack_angle.cos();
        let wp = stance_waypoints(&setup.command, &touchdown, foot_x, p)
            .map_err(|e| e.to_string())?;
        let (qa, qb, qc) = fit_parabola(&wp).map_err(|e| e.to_string())?;
        let mut worst = 0.0f64;
        for w in &wp {
            let y = qa * w.x * w.x + qb * w.x + qc;
            worst = worst.max((y - w.y).abs());
        }
        if worst < 1e-12 {
            Ok(format!("max waypoint residual {worst:.3e}"))
        } else {
            Err(format!("max waypoint residual {worst:.3e} exceeds 1e-12"))
        }
    });

    check(&mut checks, "reference holds commanded speed", || {
        let p = &setup.params;
        let touchdown = FlightState {
            x: 0.0,
            vx: setup.command.desired_velocity.max(0.1),
            y: p.rest_length * setup.command.attack_angle.sin(),
            vy: -1.0,
        };
        let foot_x = touchdown.x - p.rest_length * setup.command.attack_angle.cos();
        let traj = build_reference(&setup.command, &touchdown, foot_x, 0.0, p)
            .map_err(|e| e.to_string())?;
        let mut worst = 0.0f64;
        for i in 0..=10 {
            let t = traj.t_stance * f64::from(i) / 10.0;
            let out = reference_output(&traj, traj.start_time + t);
            worst = worst.max((out.vel[0] - setup.command.desired_velocity).abs());
        }
        if worst < 1e-12 {
            Ok(format!("max horizontal speed deviation {worst:.3e}"))
        } else {
            Err(format!("max horizontal speed deviation {worst:.3e} exceeds 1e-12"))
        }
    });

    check(&mut checks, "output feedback gain places its poles", || {
        let gains = tracking_gains(setup.controller.eta1, setup.controller.eta2)
            .map_err(|e| e.to_string())?;
        // The closed output map -CK must carry trace eta1 + eta2 and
        // determinant eta1 * eta2.
        let tr = -(gains.ck[(0, 0)] + gains.ck[(1, 1)]);
        let det = gains.ck[(0, 0)] * gains.ck[(1, 1)] - gains.ck[(0, 1)] * gains.ck[(1, 0)];
        let tr_err = (tr - (setup.controller.eta1 + setup.controller.eta2)).abs();
        let det_err = (det - setup.controller.eta1 * setup.controller.eta2).abs();
        if tr_err < 1e-9 && det_err < 1e-9 {
            Ok(format!("trace error {tr_err:.3e}, determinant error {det_err:.3e}"))
        } else {
            Err(format!(
                "trace error {tr_err:.3e} or determinant error {det_err:.3e} exceeds 1e-9"
            ))
        }
    });

    check(&mut checks, "estimator and tracking poles stay separate", || {
        let plant = build_plant();
        let gains = tracking_gains(setup.controller.eta1, setup.controller.eta2)
            .map_err(|e| e.to_string())?;
        let ke = observer_gains(&plant, &setup.controller.observer_poles)
            .map_err(|e| e.to_string())?;
        let dynamics = assemble_error_dynamics(&plant, &gains, &ke).map_err(|e| e.to_string())?;
        Ok(format!(
            "combined spectrum holds {} eigenvalues as designed",
            dynamics.spectrum.len()
        ))
    });

    check(&mut checks, "estimator converges on ballistic flight", || {
        let plant = build_plant();
        let ke = observer_gains(&plant, &setup.controller.observer_poles)
            .map_err(|e| e.to_string())?;
        let p = setup.params;
        let mut truth = Vector4::new(0.0, 0.5, 0.4, 0.2);
        let mut obs = crate::control::Observer::new(
            truth + Vector4::new(0.02, -0.05, -0.03, 0.04),
            ke,
        );
        let h = 1e-4;
        let drift = |_: &Vector4<f64>| Vector4::new(0.0, 0.0, 0.0, -p.gravity);
        let initial_err = (obs.estimate - truth).norm();
        for _ in 0..2000 {
            let y = Vector2::new(truth[0], truth[2]);
            obs.estimate = crate::control::observer_update(
                &obs,
                &plant,
                &Vector2::zeros(),
                &y,
                drift,
                h,
            )
            .map_err(|e| e.to_string())?;
            truth = step_vec4(&truth, h, p.gravity);
        }
        let final_err = (obs.estimate - truth).norm();
        // Measurements are held across each step, so the error cannot fall
        // below a discretization floor that scales with (pole * h)^2 times
        // the body speed; faster poles trade a larger floor for a faster
        // transient.
        let speed = truth[1].hypot(truth[3]).max(1.0);
        let pole_mag = setup
            .controller
            .observer_poles
            .iter()
            .fold(0.0_f64, |m, p| m.max(p.abs()));
        let hold_floor = 4.0 * (pole_mag * h) * (pole_mag * h) * speed;
        let bound = (1e-4 * initial_err).max(hold_floor);
        if final_err < bound {
            Ok(format!(
                "estimate error shrank from {initial_err:.3e} to {final_err:.3e} (bound {bound:.3e})"
            ))
        } else {
            Err(format!(
                "estimate error only shrank from {initial_err:.3e} to {final_err:.3e} (bound {bound:.3e})"
            ))
        }
    });

    check(&mut checks, "gait runs and conserves the books", || {
        let mut quiet = *setup;
        quiet.noise.touchdown_fraction = 0.0;
        quiet.noise.liftoff_fraction = 0.0;
        quiet.sample_every = 10;
        let mut ex = GaitExecutor::new(quiet).map_err(|e| e.to_string())?;
        let start = FlightState {
            x: 0.0,
            vx: quiet.command.desired_velocity,
            y: quiet.command.desired_apex,
            vy: 0.0,
        };
        let log = ex.run_gait(start, 2);
        if let Some(f) = &log.failure {
            return Err(format!("gait failed at step {}: {}", f.step, f.reason));
        }
        for w in log.trajectory.windows(2) {
            // Phase handoffs log a coincident row in each chart; time must
            // advance everywhere else.
            let ok = if w[0].phase != w[1].phase {
                w[1].time >= w[0].time
            } else {
                w[1].time > w[0].time
            };
            if !ok {
                return Err(format!(
                    "trajectory times not increasing at {} s",
                    w[0].time
                ));
            }
        }
        let h0 = energy_ledger(
            &HybridState {
                phase: Phase::Flight {
                    body: start,
                    leg_angle: quiet.servo.attack_angle,
                },
                time: 0.0,
            },
            &quiet.params,
        )
        .total;
        let last = log.steps.last().expect("two steps recorded");
        let implied = last.energy_at_apex.total - last.energy_at_apex.nonconservative;
        let rel = ((implied - h0) / h0).abs();
        if rel < 1e-9 {
            Ok(format!(
                "2 cycles, {} samples, ledger closes to {rel:.3e}",
                log.trajectory.len()
            ))
        } else {
            Err(format!("energy ledger does not close: {rel:.3e}"))
        }
    });

    check(&mut checks, "repeated runs agree exactly", || {
        let mut quiet = *setup;
        quiet.sample_every = 25;
        let start = FlightState {
            x: 0.0,
            vx: quiet.command.desired_velocity,
            y: quiet.command.desired_apex,
            vy: 0.0,
        };
        let mut a = GaitExecutor::new(quiet).map_err(|e| e.to_string())?;
        let mut b = GaitExecutor::new(quiet).map_err(|e| e.to_string())?;
        let la = a.run_gait(start, 2);
        let lb = b.run_gait(start, 2);
        if la == lb {
            Ok("two runs produced identical logs".into())
        } else {
            Err("two identically configured runs diverged".into())
        }
    });

    ValidationReport { checks }
}

fn step_vec4(s: &Vector4<f64>, h: f64, g: f64) -> Vector4<f64> {
    // Exact ballistic propagation for the estimator check.
    Vector4::new(
        s[0] + s[1] * h,
        s[1],
        s[2] + s[3] * h - 0.5 * g * h * h,
        s[3] - g * h,
    )
}
