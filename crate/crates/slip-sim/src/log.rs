//! Records produced by gait simulation: per-step summaries and a decimated
//! trajectory trace.

use crate::model::{EnergyLedger, FlightState, HybridState};
use crate::reference::ReferenceTrajectory;

/// One guard event. `state`/`time` belong to the unperturbed guard; the
/// perceived pair is what the (possibly noisy) event listener reported. With
/// zero noise both pairs are identical.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventRecord {
    pub time: f64,
    pub state: FlightState,
    pub perceived_time: f64,
    pub perceived_state: FlightState,
}

/// Highest point of one flight arc.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApexRecord {
    pub time: f64,
    pub x: f64,
    pub height: f64,
    pub vx: f64,
}

/// Summary of one full gait cycle: the flight arc and the stance that ends it.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub index: usize,
    pub apex: ApexRecord,
    pub touchdown: EventRecord,
    pub liftoff: EventRecord,
    /// Stance tracking plan; absent when the controller is disabled.
    pub reference: Option<ReferenceTrajectory>,
    /// Output error norm when stance control engaged.
    pub e2_touchdown: Option<f64>,
    /// Largest output error norm seen during the stance.
    pub e2_max: Option<f64>,
    /// Output error norm at the moment stance ended.
    pub e2_liftoff: Option<f64>,
    /// Energy content at the apex; `nonconservative` holds the accumulated
    /// change of mechanical energy since the start of the run.
    pub energy_at_apex: EnergyLedger,
    /// Integrator steps on which an actuator channel hit its rate limit.
    pub saturated_steps: u64,
    /// Integrator steps that evaluated the reference outside its planned
    /// window (clamped to an endpoint).
    pub clamped_steps: u64,
    /// Set when the descent leg-angle command had to be clamped into range.
    pub servo_clamped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplePhase {
    Flight,
    Stance,
}

/// One decimated trajectory row. Stance-only signals are None during flight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub time: f64,
    pub phase: SamplePhase,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    /// Leg length about the pinned foot, stance only.
    pub r: Option<f64>,
    /// Leg angle about the pinned foot, stance only.
    pub theta: Option<f64>,
    /// Applied actuator command, stance with control only.
    pub u: Option<[f64; 2]>,
    /// Output tracking error, stance with control only.
    pub e2: Option<[f64; 2]>,
    /// Mechanical energy at this sample.
    pub total_energy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaitFailure {
    /// Step index the failure occurred in.
    pub step: usize,
    pub reason: crate::gait::GaitError,
}

/// Everything one `run_gait` call produced.
#[derive(Debug, Clone, PartialEq)]
pub struct GaitLog {
    pub steps: Vec<StepRecord>,
    pub trajectory: Vec<TrajectorySample>,
    pub failure: Option<GaitFailure>,
    /// Last healthy state: after the final completed step, or just before the
    /// phase that failed.
    pub final_state: HybridState,
}

impl GaitLog {
    pub fn completed(&self) -> bool {
        self.failure.is_none()
    }
}
