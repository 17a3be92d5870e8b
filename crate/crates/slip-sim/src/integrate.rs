//! Fixed-step classical RK4 with guard-crossing localization.
//!
//! Phases of the hopper are integrated at a constant step; a guard function
//! watches for the phase boundary and the crossing step is bisected on its
//! step fraction until the event time is bracketed tighter than the
//! configured tolerance. Everything here is deterministic: same inputs, same
//! bits out.

use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum IntegrateError {
    #[error("non-finite state after step at t = {time}")]
    NonFinite { time: f64 },
    #[error("no guard crossing within {horizon} s")]
    NoEvent { horizon: f64 },
    #[error("invalid integrator config: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    /// Fixed integration step, s.
    pub step_size: f64,
    /// Width the event-time bracket is bisected down to, s.
    pub event_tolerance: f64,
    /// Cap on bisection iterations per event.
    pub max_bisection_iters: u32,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig { step_size: 1e-4, event_tolerance: 1e-9, max_bisection_iters: 60 }
    }
}

impl IntegratorConfig {
    pub fn new(
        step_size: f64,
        event_tolerance: f64,
        max_bisection_iters: u32,
    ) -> Result<Self, IntegrateError> {
        let cfg = IntegratorConfig { step_size, event_tolerance, max_bisection_iters };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), IntegrateError> {
        if !self.step_size.is_finite() || self.step_size <= 0.0 {
            return Err(IntegrateError::BadConfig(format!(
                "step_size must be a positive finite time in s, got {}",
                self.step_size
            )));
        }
        if !self.event_tolerance.is_finite()
            || self.event_tolerance <= 0.0
            || self.event_tolerance >= self.step_size
        {
            return Err(IntegrateError::BadConfig(format!(
                "event_tolerance must lie in (0, step_size), got {}",
                self.event_tolerance
            )));
        }
        let needed = (self.step_size / self.event_tolerance).log2().ceil() as u32;
        if self.max_bisection_iters < needed {
            return Err(IntegrateError::BadConfig(format!(
                "max_bisection_iters = {} cannot bracket {} s down to {} s; need at least {}",
                self.max_bisection_iters, self.step_size, self.event_tolerance, needed
            )));
        }
        Ok(())
    }
}

/// Sign-change direction that counts as an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Crossing {
    /// Guard moves from positive to non-positive.
    Falling,
    /// Guard moves from negative to non-negative.
    Rising,
}

impl Crossing {
    pub fn crossed(self, before: f64, after: f64) -> bool {
        match self {
            Crossing::Falling => before > 0.0 && after <= 0.0,
            Crossing::Rising => before < 0.0 && after >= 0.0,
        }
    }
}

/// One classical RK4 step of size h for an autonomous system.
pub fn step_rk4<const N: usize>(
    state: &[f64; N],
    h: f64,
    f: impl Fn(&[f64; N]) -> [f64; N],
) -> Result<[f64; N], IntegrateError> {
    let k1 = f(state);
    let mut probe = [0.0; N];
    for i in 0..N {
        probe[i] = state[i] + 0.5 * h * k1[i];
    }
    let k2 = f(&probe);
    for i in 0..N {
        probe[i] = state[i] + 0.5 * h * k2[i];
    }
    let k3 = f(&probe);
    for i in 0..N {
        probe[i] = state[i] + h * k3[i];
    }
    let k4 = f(&probe);
    let mut out = [0.0; N];
    for i in 0..N {
        out[i] = state[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        if !out[i].is_finite() {
            return Err(IntegrateError::NonFinite { time: 0.0 });
        }
    }
    Ok(out)
}

/// A guard crossing pinned down inside a single step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocatedCrossing<const N: usize> {
    /// State at the event, on the crossed side of the guard.
    pub state: [f64; N],
    /// Offset of the event from the step start, in (0, h].
    pub dt: f64,
    /// Guard residual at `state`.
    pub guard_value: f64,
    /// Final width of the time bracket, s.
    pub bracket: f64,
}

/// Bisect the step fraction of a step known to cross the guard.
///
/// `g0` is the guard at `s0` and must be on the un-crossed side. Each probe
/// integrates a single fractional RK4 step from `s0`, so the located state is
/// a smooth function of the initial condition.
pub fn locate_crossing_in_step<const N: usize>(
    s0: &[f64; N],
    g0: f64,
    h: f64,
    f: &impl Fn(&[f64; N]) -> [f64; N],
    guard: &impl Fn(&[f64; N]) -> f64,
    direction: Crossing,
    cfg: &IntegratorConfig,
) -> Result<LocatedCrossing<N>, IntegrateError> {
    debug_assert!(!direction.crossed(g0, g0));
    let full = step_rk4(s0, h, f)?;
    let g_full = guard(&full);
    debug_assert!(direction.crossed(g0, g_full));

    let mut lo = 0.0_f64;
    let mut hi = 1.0_f64;
    let mut state_hi = full;
    let mut g_hi = g_full;
    for _ in 0..cfg.max_bisection_iters {
        if (hi - lo) * h <= cfg.event_tolerance {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let probe = step_rk4(s0, mid * h, f)?;
        let g_mid = guard(&probe);
        if direction.crossed(g0, g_mid) {
            hi = mid;
            state_hi = probe;
            g_hi = g_mid;
        } else {
            lo = mid;
        }
    }
    Ok(LocatedCrossing { state: state_hi, dt: hi * h, guard_value: g_hi, bracket: (hi - lo) * h })
}

/// A guard crossing found while integrating forward from t0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventResult<const N: usize> {
    pub state: [f64; N],
    /// Absolute event time.
    pub time: f64,
    /// Guard residual at the returned state.
    pub guard_value: f64,
    /// Final width of the event-time bracket, s.
    pub bracket: f64,
    /// Full steps taken before the crossing step.
    pub steps: u64,
}

/// Step the system until the guard crosses in `direction`, then localize the
/// crossing. `on_step` sees every accepted full step (not bisection probes and
/// not the event state). A crossing in the opposite direction is not an event;
/// integration continues through it.
pub fn integrate_until_event<const N: usize>(
    t0: f64,
    start: [f64; N],
    horizon: f64,
    f: impl Fn(&[f64; N]) -> [f64; N],
    guard: impl Fn(&[f64; N]) -> f64,
    direction: Crossing,
    cfg: &IntegratorConfig,
    mut on_step: impl FnMut(f64, &[f64; N]),
) -> Result<EventResult<N>, IntegrateError> {
    let h = cfg.step_size;
    let mut state = start;
    let mut g_prev = guard(&state);
    let mut n: u64 = 0;
    while (n as f64) * h < horizon {
        let next = match step_rk4(&state, h, &f) {
            Ok(s) => s,
            Err(IntegrateError::NonFinite { .. }) => {
                return Err(IntegrateError::NonFinite { time: t0 + (n as f64) * h })
            }
            Err(e) => return Err(e),
        };
        let g_next = guard(&next);
        if direction.crossed(g_prev, g_next) {
            let located = locate_crossing_in_step(&state, g_prev, h, &f, &guard, direction, cfg)?;
            return Ok(EventResult {
                state: located.state,
                time: t0 + (n as f64) * h + located.dt,
                guard_value: located.guard_value,
                bracket: located.bracket,
                steps: n,
            });
        }
        state = next;
        g_prev = g_next;
        n += 1;
        on_step(t0 + (n as f64) * h, &state);
    }
    Err(IntegrateError::NoEvent { horizon })
}
