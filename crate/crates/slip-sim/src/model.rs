//! Planar spring-loaded inverted pendulum: a point mass on a massless springy leg.
//!
//! Flight is ballistic. In stance the foot is pinned and the body state is
//! polar about the foot (leg length r, leg angle theta measured from the
//! ground plane, counterclockwise). All quantities are SI.

use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ModelError {
    #[error("{name} must be > 0, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("{name} must be >= 0, got {value}")]
    Negative { name: &'static str, value: f64 },
    #[error("{name} must be finite, got {value}")]
    NonFinite { name: &'static str, value: f64 },
    #[error("leg length is zero: body coincides with the foot")]
    ZeroLegLength,
}

/// Physical constants of the hopper.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Body mass in kg.
    pub mass: f64,
    /// Leg spring stiffness in N/m.
    pub stiffness: f64,
    /// Spring rest length in m; also the rigid leg length during flight.
    pub rest_length: f64,
    /// Radial damping coefficient in N*s/m. Acts on the leg extension rate only.
    pub damping: f64,
    /// Gravitational acceleration in m/s^2, positive down.
    pub gravity: f64,
}

impl ModelParams {
    pub fn new(
        mass: f64,
        stiffness: f64,
        rest_length: f64,
        damping: f64,
        gravity: f64,
    ) -> Result<Self, ModelError> {
        let p = ModelParams { mass, stiffness, rest_length, damping, gravity };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("mass", self.mass),
            ("stiffness", self.stiffness),
            ("rest_length", self.rest_length),
            ("gravity", self.gravity),
        ];
        for (name, value) in positive {
            if !value.is_finite() {
                return Err(ModelError::NonFinite { name, value });
            }
            if value <= 0.0 {
                return Err(ModelError::NonPositive { name, value });
            }
        }
        if !self.damping.is_finite() {
            return Err(ModelError::NonFinite { name: "damping", value: self.damping });
        }
        if self.damping < 0.0 {
            return Err(ModelError::Negative { name: "damping", value: self.damping });
        }
        Ok(())
    }
}

/// Ballistic body state: position and velocity of the center of mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlightState {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
}

/// Stance body state, polar about the pinned foot.
///
/// theta is the leg angle from the positive x axis of the ground plane, so a
/// vertical leg has theta = pi/2 and a leg angled forward of the body (foot
/// ahead) has theta > pi/2 at touchdown.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StanceState {
    pub r: f64,
    pub theta: f64,
    pub r_dot: f64,
    pub theta_dot: f64,
    /// Ground coordinate of the pinned foot.
    pub foot_x: f64,
}

/// Which dynamics regime the hybrid system is in, with the matching body state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Phase {
    Flight {
        body: FlightState,
        /// Current leg angle held by the flight servo, rad.
        leg_angle: f64,
    },
    Stance { body: StanceState },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HybridState {
    pub phase: Phase,
    pub time: f64,
}

/// Instantaneous energy bookkeeping for one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyLedger {
    /// Kinetic energy, J.
    pub kinetic: f64,
    /// Gravitational potential, J, zero at ground level.
    pub gravitational: f64,
    /// Spring potential, J; zero in flight where the leg is unloaded.
    pub spring: f64,
    /// Mechanical total: kinetic + gravitational + spring.
    pub total: f64,
    /// Accumulated nonconservative work, J. Zero for a bare state; the gait
    /// executor fills it with H(t) - H(start) along the simulated trajectory.
    pub nonconservative: f64,
}

/// Time derivative of the ballistic flight state.
pub fn flight_derivative(f: &FlightState, p: &ModelParams) -> FlightState {
    FlightState { x: f.vx, y: f.vy, vx: 0.0, vy: -p.gravity }
}

/// Time derivative of the unactuated stance state.
///
/// Radial: mass * r_ddot balances the centrifugal term, gravity along the leg,
/// radial damping, and the spring. Angular: the only torque about the foot is
/// gravity, and with theta counterclockwise from the positive x axis a body at
/// (r cos theta, r sin theta) feels d/dt(m r^2 theta_dot) = -m g r cos(theta),
/// tipping the leg away from vertical on either side.
pub fn stance_derivative_passive(
    s: &StanceState,
    p: &ModelParams,
) -> Result<StanceState, ModelError> {
    if s.r <= 0.0 {
        return Err(ModelError::ZeroLegLength);
    }
    let r_ddot = s.r * s.theta_dot * s.theta_dot - p.gravity * s.theta.sin()
        - p.damping / p.mass * s.r_dot
        + spring_force(s.r, p) / p.mass;
    let theta_ddot = (-p.gravity * s.theta.cos() - 2.0 * s.r_dot * s.theta_dot) / s.r;
    Ok(StanceState {
        r: s.r_dot,
        theta: s.theta_dot,
        r_dot: r_ddot,
        theta_dot: theta_ddot,
        foot_x: 0.0,
    })
}

/// Spring potential energy 0.5 * k * (r0 - r)^2.
pub fn spring_potential(r: f64, p: &ModelParams) -> f64 {
    let c = p.rest_length - r;
    0.5 * p.stiffness * c * c
}

/// Radial spring force k * (r0 - r), positive pushing the body away from the foot.
pub fn spring_force(r: f64, p: &ModelParams) -> f64 {
    p.stiffness * (p.rest_length - r)
}

/// Acceleration of the center of mass in ground coordinates during stance.
///
/// (lx, ly) is the leg vector from the foot to the body. The spring and the
/// radial damper act along the leg; gravity acts straight down. This is the
/// same force balance as `stance_derivative_passive` written in the other chart.
pub fn stance_accel_cartesian(
    lx: f64,
    ly: f64,
    vx: f64,
    vy: f64,
    p: &ModelParams,
) -> (f64, f64) {
    let r = (lx * lx + ly * ly).sqrt();
    let r_dot = (lx * vx + ly * vy) / r;
    let radial = (spring_force(r, p) - p.damping * r_dot) / p.mass / r;
    (radial * lx, radial * ly - p.gravity)
}

/// Map a stance state to the equivalent ballistic state of the body.
pub fn stance_to_cartesian(s: &StanceState) -> FlightState {
    let (sin_t, cos_t) = s.theta.sin_cos();
    FlightState {
        x: s.foot_x + s.r * cos_t,
        y: s.r * sin_t,
        vx: s.r_dot * cos_t - s.r * s.theta_dot * sin_t,
        vy: s.r_dot * sin_t + s.r * s.theta_dot * cos_t,
    }
}

/// Map a ballistic body state to stance polar form about a foot at foot_x.
pub fn cartesian_to_stance(f: &FlightState, foot_x: f64) -> Result<StanceState, ModelError> {
    let lx = f.x - foot_x;
    let ly = f.y;
    let r2 = lx * lx + ly * ly;
    if r2 == 0.0 {
        return Err(ModelError::ZeroLegLength);
    }
    let r = r2.sqrt();
    Ok(StanceState {
        r,
        theta: ly.atan2(lx),
        r_dot: (lx * f.vx + ly * f.vy) / r,
        theta_dot: (lx * f.vy - ly * f.vx) / r2,
        foot_x,
    })
}

/// Touchdown guard: body height above the point where a rigid leg at
/// `leg_angle` meets the ground. Positive above, negative below; touchdown is
/// the guard crossing negative while descending.
pub fn touchdown_guard(f: &FlightState, leg_angle: f64, p: &ModelParams) -> f64 {
    f.y - p.rest_length * leg_angle.sin()
}

/// Liftoff guard: remaining spring compression. Positive while the spring is
/// shorter than rest length; liftoff is the guard crossing negative while the
/// leg extends.
pub fn liftoff_guard(s: &StanceState, p: &ModelParams) -> f64 {
    p.rest_length - s.r
}

/// Energy content of a single hybrid state. `nonconservative` is zero here;
/// only a trajectory can accumulate it.
pub fn energy_ledger(state: &HybridState, p: &ModelParams) -> EnergyLedger {
    let (kinetic, gravitational, spring) = match &state.phase {
        Phase::Flight { body, .. } => {
            let t = 0.5 * p.mass * (body.vx * body.vx + body.vy * body.vy);
            (t, p.mass * p.gravity * body.y, 0.0)
        }
        Phase::Stance { body } => {
            let speed2 =
                body.r_dot * body.r_dot + body.r * body.r * body.theta_dot * body.theta_dot;
            let t = 0.5 * p.mass * speed2;
            let y = body.r * body.theta.sin();
            (t, p.mass * p.gravity * y, spring_potential(body.r, p))
        }
    };
    EnergyLedger {
        kinetic,
        gravitational,
        spring,
        total: kinetic + gravitational + spring,
        nonconservative: 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    fn params() -> ModelParams {
        ModelParams::new(6.0, 2200.0, 0.25, 5.0, 9.81).unwrap()
    }

    #[test]
    fn rejects_bad_params() {
        assert!(matches!(
            ModelParams::new(-1.0, 2200.0, 0.25, 5.0, 9.81),
            Err(ModelError::NonPositive { name: "mass", .. })
        ));
        assert!(matches!(
            ModelParams::new(6.0, 2200.0, 0.25, -0.1, 9.81),
            Err(ModelError::Negative { name: "damping", .. })
        ));
        assert!(ModelParams::new(6.0, f64::NAN, 0.25, 5.0, 9.81).is_err());
    }

    #[test]
    fn flight_derivative_is_ballistic() {
        let p = params();
        let f = FlightState { x: 1.0, y: 2.0, vx: 3.0, vy: -4.0 };
        let d = flight_derivative(&f, &p);
        assert_eq!(d.x, 3.0);
        assert_eq!(d.y, -4.0);
        assert_eq!(d.vx, 0.0);
        assert_eq!(d.vy, -9.81);
    }

    #[test]
    fn vertical_compressed_stance_accelerates_as_spring_minus_gravity() {
        // Vertical leg compressed 0.05 m, at rest: r_ddot = k*0.05/m - g,
        // theta_ddot vanishes because gravity has no moment about the foot.
        let p = ModelParams::new(1.0, 100.0, 1.0, 0.0, 9.81).unwrap();
        let s = StanceState {
            r: p.rest_length - 0.05,
            theta: std::f64::consts::FRAC_PI_2,
            r_dot: 0.0,
            theta_dot: 0.0,
            foot_x: 0.0,
        };
        let d = stance_derivative_passive(&s, &p).unwrap();
        assert_abs_diff_eq!(d.r_dot, -4.81, epsilon = 1e-12);
        assert_abs_diff_eq!(d.theta_dot, 0.0, epsilon = 1e-12);
        assert_eq!(d.r, 0.0);
        assert_eq!(d.theta, 0.0);
    }

    #[test]
    fn gravity_tips_the_leg_away_from_vertical() {
        // An inverted pendulum is unstable: lean the leg forward of vertical
        // (theta below pi/2) and gravity drives theta further down; lean it
        // back and gravity drives theta up. Rates start at zero so the only
        // angular action is the gravity torque.
        let p = ModelParams::new(1.0, 100.0, 1.0, 0.0, 9.81).unwrap();
        let lean_forward = StanceState {
            r: 1.0,
            theta: std::f64::consts::FRAC_PI_2 - 0.3,
            r_dot: 0.0,
            theta_dot: 0.0,
            foot_x: 0.0,
        };
        let lean_back = StanceState {
            theta: std::f64::consts::FRAC_PI_2 + 0.3,
            ..lean_forward
        };
        assert!(stance_derivative_passive(&lean_forward, &p).unwrap().theta_dot < 0.0);
        assert!(stance_derivative_passive(&lean_back, &p).unwrap().theta_dot > 0.0);
    }

    #[test]
    fn spring_is_unloaded_at_rest_length() {
        let p = params();
        assert_eq!(spring_potential(p.rest_length, &p), 0.0);
        assert_eq!(spring_force(p.rest_length, &p), 0.0);
    }

    #[test]
    fn spring_force_is_negative_potential_gradient() {
        // Central difference of a quadratic potential is exact up to roundoff.
        let p = params();
        let h = 1e-6;
        for r in [0.1, 0.2, 0.25, 0.3] {
            let fd = (spring_potential(r - h, &p) - spring_potential(r + h, &p)) / (2.0 * h);
            assert_relative_eq!(fd, spring_force(r, &p), epsilon = 1e-6, max_relative = 1e-8);
        }
    }

    #[test]
    fn zero_radius_states_are_rejected() {
        let p = params();
        let s = StanceState { r: 0.0, theta: 1.0, r_dot: 0.0, theta_dot: 0.0, foot_x: 0.0 };
        assert_eq!(stance_derivative_passive(&s, &p), Err(ModelError::ZeroLegLength));
        let f = FlightState { x: 1.0, y: 0.0, vx: 0.0, vy: 0.0 };
        assert_eq!(cartesian_to_stance(&f, 1.0), Err(ModelError::ZeroLegLength));
    }

    #[test]
    fn guards_vanish_on_their_surfaces() {
        let p = params();
        let angle = 2.0_f64;
        let on = FlightState { x: 0.0, y: p.rest_length * angle.sin(), vx: 0.0, vy: -1.0 };
        assert_eq!(touchdown_guard(&on, angle, &p), 0.0);
        let above = FlightState { y: on.y + 0.1, ..on };
        let below = FlightState { y: on.y - 0.1, ..on };
        assert!(touchdown_guard(&above, angle, &p) > 0.0);
        assert!(touchdown_guard(&below, angle, &p) < 0.0);

        let s = StanceState { r: p.rest_length, theta: 1.5, r_dot: 1.0, theta_dot: 0.0, foot_x: 0.0 };
        assert_eq!(liftoff_guard(&s, &p), 0.0);
        let compressed = StanceState { r: 0.8 * p.rest_length, ..s };
        assert!(liftoff_guard(&compressed, &p) > 0.0);
        let overextended = StanceState { r: 1.1 * p.rest_length, ..s };
        assert!(liftoff_guard(&overextended, &p) < 0.0);
    }

    /// Second time derivative of (x, y) implied by the polar derivative,
    /// through the chain rule of the stance chart.
    fn polar_accel_to_cartesian(s: &StanceState, d: &StanceState) -> (f64, f64) {
        let (sin_t, cos_t) = s.theta.sin_cos();
        let (rd, td) = (s.r_dot, s.theta_dot);
        let (rdd, tdd) = (d.r_dot, d.theta_dot);
        let ax = rdd * cos_t - 2.0 * rd * td * sin_t - s.r * tdd * sin_t - s.r * td * td * cos_t;
        let ay = rdd * sin_t + 2.0 * rd * td * cos_t + s.r * tdd * cos_t - s.r * td * td * sin_t;
        (ax, ay)
    }

    proptest! {
        #[test]
        fn polar_and_cartesian_stance_dynamics_agree(
            r in 0.05f64..0.6,
            theta in 0.3f64..2.8,
            r_dot in -3.0f64..3.0,
            theta_dot in -20.0f64..20.0,
            foot_x in -5.0f64..5.0,
        ) {
            let p = params();
            let s = StanceState { r, theta, r_dot, theta_dot, foot_x };
            let d = stance_derivative_passive(&s, &p).unwrap();
            let (ax_polar, ay_polar) = polar_accel_to_cartesian(&s, &d);

            let f = stance_to_cartesian(&s);
            let (ax, ay) = stance_accel_cartesian(f.x - foot_x, f.y, f.vx, f.vy, &p);
            let scale = 1.0 + ax.abs().max(ay.abs());
            prop_assert!((ax - ax_polar).abs() <= 1e-10 * scale);
            prop_assert!((ay - ay_polar).abs() <= 1e-10 * scale);
        }

        #[test]
        fn stance_round_trip_is_identity(
            r in 0.05f64..0.6,
            theta in 0.3f64..2.8,
            r_dot in -3.0f64..3.0,
            theta_dot in -20.0f64..20.0,
            foot_x in -5.0f64..5.0,
        ) {
            let s = StanceState { r, theta, r_dot, theta_dot, foot_x };
            let back = cartesian_to_stance(&stance_to_cartesian(&s), foot_x).unwrap();
            prop_assert!((back.r - s.r).abs() <= 1e-12 * (1.0 + s.r.abs()));
            prop_assert!((back.theta - s.theta).abs() <= 1e-12 * (1.0 + s.theta.abs()));
            prop_assert!((back.r_dot - s.r_dot).abs() <= 1e-11 * (1.0 + s.r_dot.abs()));
            prop_assert!((back.theta_dot - s.theta_dot).abs() <= 1e-11 * (1.0 + s.theta_dot.abs()));
        }

        #[test]
        fn flight_round_trip_is_identity(
            x in -5.0f64..5.0,
            y in 0.05f64..1.0,
            vx in -5.0f64..5.0,
            vy in -5.0f64..5.0,
            foot_x in -5.0f64..5.0,
        ) {
            prop_assume!((x - foot_x).abs() + y.abs() > 1e-3);
            let f = FlightState { x, y, vx, vy };
            let back = stance_to_cartesian(&cartesian_to_stance(&f, foot_x).unwrap());
            prop_assert!((back.x - f.x).abs() <= 1e-11 * (1.0 + f.x.abs()));
            prop_assert!((back.y - f.y).abs() <= 1e-11 * (1.0 + f.y.abs()));
            prop_assert!((back.vx - f.vx).abs() <= 1e-10 * (1.0 + f.vx.abs()));
            prop_assert!((back.vy - f.vy).abs() <= 1e-10 * (1.0 + f.vy.abs()));
        }

        #[test]
        fn energy_is_chart_independent(
            r in 0.05f64..0.6,
            theta in 0.3f64..2.8,
            r_dot in -3.0f64..3.0,
            theta_dot in -20.0f64..20.0,
            foot_x in -5.0f64..5.0,
        ) {
            // Same body point described in both charts carries the same kinetic
            // and gravitational energy; only the spring term is stance-specific.
            let p = params();
            let s = StanceState { r, theta, r_dot, theta_dot, foot_x };
            let stance = energy_ledger(&HybridState { phase: Phase::Stance { body: s }, time: 0.0 }, &p);
            let flight = energy_ledger(
                &HybridState {
                    phase: Phase::Flight { body: stance_to_cartesian(&s), leg_angle: theta },
                    time: 0.0,
                },
                &p,
            );
            let scale = 1.0 + stance.total.abs();
            prop_assert!((stance.kinetic - flight.kinetic).abs() <= 1e-11 * scale);
            prop_assert!((stance.gravitational - flight.gravitational).abs() <= 1e-11 * scale);
            prop_assert!(
                (stance.total - (flight.total + spring_potential(s.r, &p))).abs() <= 1e-11 * scale
            );
            prop_assert_eq!(flight.spring, 0.0);
        }
    }

    #[test]
    fn energy_ledger_of_resting_stance_is_pure_potential() {
        let p = params();
        let s = StanceState {
            r: 0.2,
            theta: std::f64::consts::FRAC_PI_2,
            r_dot: 0.0,
            theta_dot: 0.0,
            foot_x: 0.0,
        };
        let e = energy_ledger(&HybridState { phase: Phase::Stance { body: s }, time: 0.0 }, &p);
        assert_eq!(e.kinetic, 0.0);
        assert_abs_diff_eq!(e.gravitational, 6.0 * 9.81 * 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(e.spring, 0.5 * 2200.0 * 0.05 * 0.05, epsilon = 1e-12);
        assert_abs_diff_eq!(e.total, e.kinetic + e.gravitational + e.spring, epsilon = 1e-12);
        assert_eq!(e.nonconservative, 0.0);
    }
}
