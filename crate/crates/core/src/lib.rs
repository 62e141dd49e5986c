//! Aggregate flexibility of fleets of discharge-only energy storage devices.
//!
//! A fleet's *capacity curve* (the E-p transform of the signal that runs every
//! device flat out until it empties) dominates the E-p transform of a power
//! request exactly when the fleet can meet that request. On top of this the
//! crate provides the optimal greedy dispatch policy and two heuristic
//! baselines, an exact event-driven simulator, service sizing (pulses, ramps,
//! truncations), fleet comparison, Monte Carlo feasibility estimates and
//! independent brute-force oracles.
//!
//! Internally every quantity is SI (W, J, s); the [`io`] module converts from
//! the units declared in input files.

pub mod cli;
pub mod dispatch;
pub mod epcurve;
pub mod error;
pub mod io;
pub mod model;
pub mod oracle;
pub mod scenario;
pub mod services;

pub use dispatch::{
    lpf_dispatch, max_available_power, optimal_dispatch, pop_dispatch, simulate, simulate_with,
    Policy, SimulationOptions, Trajectory,
};
pub use epcurve::{
    capacity_curve, clustered_capacity_lower_bound, curve_gap, dominates, ep_transform,
    flexibility_gap, is_feasible, max_flexibility_line, worst_case_reference, EPCurve,
};
pub use error::{FlexError, Result};
pub use model::{make_fleet, Device, DispatchResult, FleetState, StepSignal, DEFAULT_TOLERANCE};

#[cfg(doctest)]
#[doc = include_str!("../../../README.md")]
struct ReadmeExamples;
