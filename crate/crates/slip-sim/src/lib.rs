//! Planar one-legged hopping on a springy leg: hybrid flight/stance
//! simulation, a stance tracking controller that cancels the leg dynamics
//! through an output-error feedback law, and gait-level experiments.
//!
//! The crate is organized bottom-up:
//!
//! - [`model`]: point-mass body on a massless spring leg, both charts
//!   (ballistic and polar-about-the-foot), guards, and the energy ledger.
//! - [`integrate`]: fixed-step RK4 with bisection event location.
//! - [`reference`]: stance tracking plan built from three waypoints and a
//!   fitted parabola, parameterized by constant horizontal speed.
//! - [`control`]: double-integrator output tracking with pole placement,
//!   a Luenberger-style estimator, and the combined error dynamics.
//! - [`gait`]: the hybrid executor alternating flight and stance, with
//!   optional threshold noise on the event listeners.
//! - [`log`]: step records and trajectory samples.
//! - [`experiments`]: apex return map, fixed points, linearized stability,
//!   robustness sweeps.
//! - [`validate`]: runtime self-checks mirroring the library's invariants.

pub mod control;
pub mod experiments;
pub mod gait;
pub mod integrate;
pub mod log;
pub mod model;
pub mod reference;
pub mod validate;
