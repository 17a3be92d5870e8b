//! Stance reference synthesis.
//!
//! Each stance gets a parabolic vertical plan through three waypoints:
//! touchdown, bottom, and a mirrored takeoff point, swept at constant
//! horizontal speed. The bottom depth comes from trading the desired apex
//! rise against spring compression energy.

use crate::model::ModelParams;
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ReferenceError {
    #[error("invalid gait command: {0}")]
    BadCommand(String),
    #[error("desired apex {apex} m does not rise above touchdown height {touchdown} m")]
    NoApexRise { apex: f64, touchdown: f64 },
    #[error("planned bottom {bottom} m is at or below the ground")]
    BottomUnderground { bottom: f64 },
    #[error("takeoff waypoint does not lie ahead of touchdown; attack angle gives no travel")]
    NoForwardTravel,
    #[error("parabola fit needs three distinct abscissae")]
    CoincidentAbscissae,
    #[error("parabola fit residual {residual} exceeds {tolerance}; waypoints are badly scaled")]
    FitResidual { residual: f64, tolerance: f64 },
}

/// What the gait is asked to do, held fixed over a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaitCommand {
    /// Forward speed the stance sweep is planned at, m/s.
    pub desired_velocity: f64,
    /// Apex height the vertical plan aims for, m.
    pub desired_apex: f64,
    /// Leg angle commanded for touchdown, rad, in (pi/2, pi): the foot lands
    /// ahead of the body.
    pub attack_angle: f64,
}

impl GaitCommand {
    pub fn validate(&self, p: &ModelParams) -> Result<(), ReferenceError> {
        if !self.desired_velocity.is_finite() || self.desired_velocity <= 0.0 {
            return Err(ReferenceError::BadCommand(format!(
                "desired_velocity must be > 0 m/s, got {}",
                self.desired_velocity
            )));
        }
        if !self.attack_angle.is_finite()
            || self.attack_angle <= std::f64::consts::FRAC_PI_2
            || self.attack_angle >= std::f64::consts::PI
        {
            return Err(ReferenceError::BadCommand(format!(
                "attack_angle must lie strictly between pi/2 and pi rad, got {}",
                self.attack_angle
            )));
        }
        if !self.desired_apex.is_finite() {
            return Err(ReferenceError::BadCommand(format!(
                "desired_apex must be finite, got {}",
                self.desired_apex
            )));
        }
        let touchdown_height = p.rest_length * self.attack_angle.sin();
        if self.desired_apex <= touchdown_height {
            return Err(ReferenceError::NoApexRise {
                apex: self.desired_apex,
                touchdown: touchdown_height,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
}

/// Parabolic stance plan y(x) with its constant-rate time parameterization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceTrajectory {
    pub quad_a: f64,
    pub quad_b: f64,
    pub quad_c: f64,
    /// Touchdown, bottom, takeoff.
    pub waypoints: [Waypoint; 3],
    /// Planned stance duration, s.
    pub t_stance: f64,
    /// Horizontal sweep rate, m/s.
    pub v_h: f64,
    /// Absolute time the plan starts at, s.
    pub start_time: f64,
}

/// Reference signals at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceOutput {
    /// Desired position (x_d, y_d), m.
    pub pos: [f64; 2],
    /// Desired velocity, m/s.
    pub vel: [f64; 2],
    /// Desired acceleration, m/s^2.
    pub acc: [f64; 2],
    /// Set when the query time fell outside the planned window and was
    /// evaluated at the nearer endpoint instead.
    pub clamped: bool,
}

/// Spring compression that stores the energy of raising the mass by
/// `delta_h_apex`: sqrt(2 m g dh / k).
pub fn compute_compression(delta_h_apex: f64, p: &ModelParams) -> Result<f64, ReferenceError> {
    if !(delta_h_apex > 0.0) {
        return Err(ReferenceError::NoApexRise { apex: delta_h_apex, touchdown: 0.0 });
    }
    Ok((2.0 * p.mass * p.gravity * delta_h_apex / p.stiffness).sqrt())
}

/// Geometric stance waypoints for a foot pinned at `foot_x`.
///
/// `touchdown` is the body state the plan is anchored to; the waypoints
/// themselves follow from the leg geometry: the plan enters at the attack
/// angle, bottoms out below the foot, and exits through the mirror image of
/// the entry point.
pub fn stance_waypoints(
    cmd: &GaitCommand,
    touchdown: &crate::model::FlightState,
    foot_x: f64,
    p: &ModelParams,
) -> Result<[Waypoint; 3], ReferenceError> {
    cmd.validate(p)?;
    debug_assert!(
        (touchdown.y - p.rest_length * cmd.attack_angle.sin()).abs() < p.rest_length,
        "touchdown state is nowhere near the touchdown surface"
    );
    let (sin_a, cos_a) = cmd.attack_angle.sin_cos();
    let x0 = foot_x + p.rest_length * cos_a;
    let y0 = p.rest_length * sin_a;
    let x2 = foot_x - p.rest_length * cos_a;
    if x2 <= x0 {
        return Err(ReferenceError::NoForwardTravel);
    }
    let delta_h_apex = cmd.desired_apex - y0;
    let dip = compute_compression(delta_h_apex, p)?;
    let y1 = y0 - dip;
    if y1 <= 0.0 {
        return Err(ReferenceError::BottomUnderground { bottom: y1 });
    }
    Ok([
        Waypoint { x: x0, y: y0 },
        Waypoint { x: foot_x, y: y1 },
        Waypoint { x: x2, y: y0 },
    ])
}

/// Coefficients (a, b, c) of the parabola y = a x^2 + b x + c through three
/// points, by 3x3 elimination with partial pivoting.
///
/// The abscissae are first shifted by their mean so the eliminated system
/// stays well conditioned when the waypoints sit far from the origin; the
/// coefficients are then expanded back to the unshifted frame.
pub fn fit_parabola(w: &[Waypoint; 3]) -> Result<(f64, f64, f64), ReferenceError> {
    let xm = (w[0].x + w[1].x + w[2].x) / 3.0;
    let mut m = [[0.0_f64; 4]; 3];
    for (row, wp) in m.iter_mut().zip(w.iter()) {
        let xi = wp.x - xm;
        *row = [xi * xi, xi, 1.0, wp.y];
    }
    for col in 0..3 {
        let pivot_row = (col..3)
            .max_by(|&a, &b| m[a][col].abs().partial_cmp(&m[b][col].abs()).unwrap())
            .unwrap();
        if m[pivot_row][col].abs() < 1e-30 {
            return Err(ReferenceError::CoincidentAbscissae);
        }
        m.swap(col, pivot_row);
        for row in col + 1..3 {
            let factor = m[row][col] / m[col][col];
            for k in col..4 {
                m[row][k] -= factor * m[col][k];
            }
        }
    }
    let mut sol = [0.0_f64; 3];
    for row in (0..3).rev() {
        let mut acc = m[row][3];
        for k in row + 1..3 {
            acc -= m[row][k] * sol[k];
        }
        sol[row] = acc / m[row][row];
    }
    let (sa, sb, sc) = (sol[0], sol[1], sol[2]);
    let a = sa;
    let b = sb - 2.0 * sa * xm;
    let c = sc - sb * xm + sa * xm * xm;

    for wp in w {
        let residual = (a * wp.x * wp.x + b * wp.x + c - wp.y).abs();
        // Far from the origin the quadratic and linear terms grow as x^2 and
        // nearly cancel, so the smallest representable residual grows with
        // them; the tolerance has to follow that scale.
        let scale = (a * wp.x * wp.x).abs() + (b * wp.x).abs() + c.abs();
        let tolerance = 1e-12 * (1.0 + scale);
        if residual > tolerance {
            return Err(ReferenceError::FitResidual { residual, tolerance });
        }
    }
    Ok((a, b, c))
}

/// Assemble the full stance reference for a foot at `foot_x`, starting at
/// `start_time`.
pub fn build_reference(
    cmd: &GaitCommand,
    touchdown: &crate::model::FlightState,
    foot_x: f64,
    start_time: f64,
    p: &ModelParams,
) -> Result<ReferenceTrajectory, ReferenceError> {
    let waypoints = stance_waypoints(cmd, touchdown, foot_x, p)?;
    let (quad_a, quad_b, quad_c) = fit_parabola(&waypoints)?;
    let t_stance = (waypoints[2].x - waypoints[0].x) / cmd.desired_velocity;
    Ok(ReferenceTrajectory {
        quad_a,
        quad_b,
        quad_c,
        waypoints,
        t_stance,
        v_h: cmd.desired_velocity,
        start_time,
    })
}

/// Evaluate the reference at absolute time t. Queries outside the planned
/// window evaluate at the nearer endpoint and set `clamped`.
pub fn reference_output(traj: &ReferenceTrajectory, t: f64) -> ReferenceOutput {
    let end = traj.start_time + traj.t_stance;
    let tau = t.clamp(traj.start_time, end);
    let clamped = tau != t;
    let x = traj.waypoints[0].x + traj.v_h * (tau - traj.start_time);
    let slope = 2.0 * traj.quad_a * x + traj.quad_b;
    ReferenceOutput {
        pos: [x, traj.quad_a * x * x + traj.quad_b * x + traj.quad_c],
        vel: [traj.v_h, slope * traj.v_h],
        acc: [0.0, 2.0 * traj.quad_a * traj.v_h * traj.v_h],
        clamped,
    }
}
