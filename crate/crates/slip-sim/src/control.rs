//! Output-tracking controller and state observer for the stance phase.
//!
//! The stance plant is modeled in ground coordinates with state
//! z = (x, xdot, y, ydot). The actuator is a velocity source: its two
//! channels add directly to the position rates, so C*B is the identity and
//! the control law can cancel the plant terms seen by the output exactly.
//! Spring, gravity, and damping enter the velocity rows as a nonlinear drift
//! d(z); the output matrix C selects positions, so C*d = 0 and the drift
//! never reaches the output error equation.

use nalgebra::{Complex, Matrix2, Matrix2x4, Matrix4, Matrix4x2, Matrix6, Vector2, Vector4};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ControlError {
    #[error("tracking rate eta must be finite and < 0, got {value}")]
    BadEta { value: f64 },
    #[error("observer pole must be finite and < 0, got {value}")]
    BadPole { value: f64 },
    #[error("placed spectrum missed its target: expected {expected:?}, computed {computed:?}")]
    SpectrumMismatch { expected: Vec<f64>, computed: Vec<(f64, f64)> },
}

/// Double-integrator stance plant with velocity-source actuation.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPlant {
    pub a: Matrix4<f64>,
    pub b: Matrix4x2<f64>,
    pub c: Matrix2x4<f64>,
    /// Cached (C*B)^-1; the identity for this plant, kept explicit so the
    /// control law reads like its formula.
    pub cb_inv: Matrix2<f64>,
}

/// Build the stance plant and check its two structural guarantees: C*B is
/// invertible and (A, C) is observable.
pub fn build_plant() -> LinearPlant {
    let a = Matrix4::new(
        0.0, 1.0, 0.0, 0.0, //
        0.0, 0.0, 0.0, 0.0, //
        0.0, 0.0, 0.0, 1.0, //
        0.0, 0.0, 0.0, 0.0,
    );
    let b = Matrix4x2::new(
        1.0, 0.0, //
        0.0, 0.0, //
        0.0, 1.0, //
        0.0, 0.0,
    );
    let c = Matrix2x4::new(
        1.0, 0.0, 0.0, 0.0, //
        0.0, 0.0, 1.0, 0.0,
    );
    let cb = c * b;
    let cb_inv = cb.try_inverse().expect("C*B must be invertible");

    let mut observability = nalgebra::SMatrix::<f64, 8, 4>::zeros();
    let ca = c * a;
    observability.fixed_view_mut::<2, 4>(0, 0).copy_from(&c);
    observability.fixed_view_mut::<2, 4>(2, 0).copy_from(&ca);
    observability.fixed_view_mut::<2, 4>(4, 0).copy_from(&(ca * a));
    observability.fixed_view_mut::<2, 4>(6, 0).copy_from(&(ca * a * a));
    assert_eq!(observability.rank(1e-9), 4, "(A, C) must be observable");

    LinearPlant { a, b, c, cb_inv }
}

/// Output-error feedback gains shaping the tracking dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingGains {
    pub eta1: f64,
    pub eta2: f64,
    /// Full 4x2 gain; rows 2 and 4 are zero, row 3 is (1, 1).
    pub k: Matrix4x2<f64>,
    /// C*K, the 2x2 gain actually seen by the output error.
    pub ck: Matrix2<f64>,
}

/// Build the tracking gains for error rates eta1, eta2 (both < 0). The
/// construction pins -C*K to have exactly {eta1, eta2} as eigenvalues, which
/// is re-verified numerically before returning.
pub fn tracking_gains(eta1: f64, eta2: f64) -> Result<TrackingGains, ControlError> {
    for eta in [eta1, eta2] {
        if !eta.is_finite() || eta >= 0.0 {
            return Err(ControlError::BadEta { value: eta });
        }
    }
    let k11 = -(eta1 + eta2 + 1.0);
    let k12 = -(eta1 + eta2 + eta1 * eta2 + 1.0);
    let k = Matrix4x2::new(
        k11, k12, //
        0.0, 0.0, //
        1.0, 1.0, //
        0.0, 0.0,
    );
    let ck = Matrix2::new(k11, k12, 1.0, 1.0);
    let expected = [eta1, eta2];
    let computed: Vec<Complex<f64>> = (-ck).complex_eigenvalues().iter().copied().collect();
    let tol = defect_tol((-ck).norm());
    if !real_spectrum_matches(&expected, &computed, tol) {
        return Err(spectrum_error(&expected, &computed));
    }
    Ok(TrackingGains { eta1, eta2, k, ck })
}

/// Observer gain placing eig(A - Ke*C) at `poles` (all < 0). The plant
/// decouples into an x chain (states 0, 1 seen by output 0) and a y chain
/// (states 2, 3 seen by output 1); poles[0..2] go to the x chain, poles[2..4]
/// to the y chain. For a chain with poles p, q the gains are -(p+q) and p*q.
pub fn observer_gains(
    plant: &LinearPlant,
    poles: &[f64; 4],
) -> Result<Matrix4x2<f64>, ControlError> {
    for &pole in poles {
        if !pole.is_finite() || pole >= 0.0 {
            return Err(ControlError::BadPole { value: pole });
        }
    }
    let ke = Matrix4x2::new(
        -(poles[0] + poles[1]), 0.0, //
        poles[0] * poles[1], 0.0, //
        0.0, -(poles[2] + poles[3]), //
        0.0, poles[2] * poles[3],
    );
    let closed = plant.a - ke * plant.c;
    let computed: Vec<Complex<f64>> = closed.complex_eigenvalues().iter().copied().collect();
    let tol = defect_tol(closed.norm());
    if !real_spectrum_matches(poles, &computed, tol) {
        return Err(spectrum_error(poles, &computed));
    }
    Ok(ke)
}

/// Running state estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Observer {
    pub estimate: Vector4<f64>,
    pub gain: Matrix4x2<f64>,
}

impl Observer {
    pub fn new(initial: Vector4<f64>, gain: Matrix4x2<f64>) -> Self {
        Observer { estimate: initial, gain }
    }
}

/// Advance the estimate one step of size h under held input and measurement:
/// zhat' = A zhat + B u + d(zhat) + Ke (y_meas - C zhat).
pub fn observer_update(
    obs: &Observer,
    plant: &LinearPlant,
    u: &Vector2<f64>,
    y_meas: &Vector2<f64>,
    drift_model: impl Fn(&Vector4<f64>) -> Vector4<f64>,
    h: f64,
) -> Result<Vector4<f64>, crate::integrate::IntegrateError> {
    let deriv = |state: &[f64; 4]| -> [f64; 4] {
        let z = Vector4::from(*state);
        let dz = plant.a * z + plant.b * u + drift_model(&z) + obs.gain * (y_meas - plant.c * z);
        dz.into()
    };
    let next = crate::integrate::step_rk4(&obs.estimate.into(), h, deriv)?;
    Ok(Vector4::from(next))
}

/// Feedback-cancellation tracking law:
/// u = (CB)^-1 (vel_ref - C A zhat + (C K) e2) with e2 = pos_ref - y_meas.
///
/// K itself is 4x2 while e2 is a 2-vector, so the gain acts on the output
/// error through C: every term inside the inverse is then a 2-vector, and the
/// closed-loop output error obeys e2' = -(C K) e2 when the estimate is exact.
pub fn control_law(
    plant: &LinearPlant,
    gains: &TrackingGains,
    estimate: &Vector4<f64>,
    pos_ref: &Vector2<f64>,
    vel_ref: &Vector2<f64>,
    y_meas: &Vector2<f64>,
) -> Vector2<f64> {
    let e2 = pos_ref - y_meas;
    plant.cb_inv * (vel_ref - plant.c * (plant.a * estimate) + gains.ck * e2)
}

/// Combined estimation/tracking error dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorDynamics {
    /// Block lower-triangular 6x6: diag(A - Ke C, -C K) with -C A coupling
    /// the estimation error into the output error.
    pub matrix: Matrix6<f64>,
    pub spectrum: Vec<Complex<f64>>,
}

/// Assemble the error dynamics for one controller configuration and verify
/// that its spectrum is the union of the two block spectra.
pub fn assemble_error_dynamics(
    plant: &LinearPlant,
    gains: &TrackingGains,
    ke: &Matrix4x2<f64>,
) -> Result<ErrorDynamics, ControlError> {
    let mut e = Matrix6::zeros();
    let top = plant.a - ke * plant.c;
    e.fixed_view_mut::<4, 4>(0, 0).copy_from(&top);
    e.fixed_view_mut::<2, 4>(4, 0).copy_from(&(-(plant.c * plant.a)));
    e.fixed_view_mut::<2, 2>(4, 4).copy_from(&(-gains.ck));

    let spectrum: Vec<Complex<f64>> = e.complex_eigenvalues().iter().copied().collect();
    let mut expected: Vec<Complex<f64>> =
        top.complex_eigenvalues().iter().copied().collect();
    expected.extend((-gains.ck).complex_eigenvalues().iter().copied());
    let tol = defect_tol(e.norm());
    if !spectra_match(&expected, &spectrum, tol) {
        return Err(ControlError::SpectrumMismatch {
            expected: expected.iter().map(|z| z.re).collect(),
            computed: spectrum.iter().map(|z| (z.re, z.im)).collect(),
        });
    }
    Ok(ErrorDynamics { matrix: e, spectrum })
}

/// Tolerance for comparing numerically computed spectra. Repeated poles make
/// the closed-loop matrices defective, and a defective eigenvalue can only be
/// located to about sqrt(eps) * scale, not eps * scale.
fn defect_tol(norm: f64) -> f64 {
    1e-9 + f64::EPSILON.sqrt() * (1.0 + norm)
}

/// Multiset comparison between an expected and a computed spectrum: each
/// expected value claims the nearest unclaimed computed value.
pub fn spectra_match(expected: &[Complex<f64>], computed: &[Complex<f64>], tol: f64) -> bool {
    if expected.len() != computed.len() {
        return false;
    }
    let mut expected = expected.to_vec();
    expected.sort_by(|a, b| (a.re, a.im).partial_cmp(&(b.re, b.im)).unwrap());
    let mut taken = vec![false; computed.len()];
    for want in &expected {
        let mut best: Option<(usize, f64)> = None;
        for (i, got) in computed.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let dist = (want - got).norm();
            if best.map_or(true, |(_, d)| dist < d) {
                best = Some((i, dist));
            }
        }
        match best {
            Some((i, dist)) if dist <= tol => taken[i] = true,
            _ => return false,
        }
    }
    true
}

fn real_spectrum_matches(expected: &[f64], computed: &[Complex<f64>], tol: f64) -> bool {
    let expected: Vec<Complex<f64>> =
        expected.iter().map(|&re| Complex::new(re, 0.0)).collect();
    spectra_match(&expected, computed, tol)
}

fn spectrum_error(expected: &[f64], computed: &[Complex<f64>]) -> ControlError {
    ControlError::SpectrumMismatch {
        expected: expected.to_vec(),
        computed: computed.iter().map(|z| (z.re, z.im)).collect(),
    }
}
