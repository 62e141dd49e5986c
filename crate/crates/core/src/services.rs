//! Decision support on top of the capacity curve: service sizing, failure
//! times, fleet comparison and Monte Carlo feasibility estimates.

use rayon::prelude::*;

use crate::dispatch::{simulate_with, Policy, SimulationOptions};
use crate::epcurve::{capacity_curve, dominance, dominance_convex, ep_transform};
use crate::error::{FlexError, Result};
use crate::model::{FleetState, StepSignal};
use crate::scenario::{sample_requests, substream, ScenarioConfig};

/// Largest pulse magnitude (W) the fleet can hold for `duration` seconds.
///
/// A pulse of magnitude `M` has the E-p line `duration * (M - p)`, which stays
/// under the capacity iff `M <= p + capacity(p) / duration` for all `p`. The
/// right-hand side is convex and piecewise linear, so its minimum sits on a
/// capacity breakpoint.
pub fn max_pulse(fleet: &FleetState, duration: f64) -> Result<f64> {
    if !(duration.is_finite() && duration > 0.0) {
        return Err(FlexError::InvalidDuration(duration));
    }
    let capacity = capacity_curve(fleet);
    Ok(capacity
        .breakpoints()
        .into_iter()
        .map(|(p, e)| p + e / duration)
        .fold(f64::INFINITY, f64::min))
}

/// E-p transform of the ramp `gradient * t` on `[0, duration)`.
pub fn ramp_curve(gradient: f64, duration: f64) -> impl Fn(f64) -> f64 {
    let peak = gradient * duration;
    move |p: f64| {
        let above = (peak - p.max(0.0)).max(0.0);
        above * above / (2.0 * gradient)
    }
}

fn ramp_is_feasible(
    capacity: &crate::epcurve::EPCurve,
    gradient: f64,
    duration: f64,
    tol: f64,
) -> bool {
    dominance_convex(
        capacity,
        ramp_curve(gradient, duration),
        gradient * duration,
        tol,
    )
    .holds
}

/// Longest duration (s) of a feasible ramp starting at zero with `gradient`
/// watts per second, found by bisection on the duration.
pub fn max_ramp(fleet: &FleetState, gradient: f64) -> Result<f64> {
    if !(gradient.is_finite() && gradient > 0.0) {
        return Err(FlexError::InvalidGradient(gradient));
    }
    let capacity = capacity_curve(fleet);
    let tol = 0.0;
    // Beyond this the ramp exceeds the total rating.
    let mut hi = capacity.p_intercept() / gradient;
    if hi == 0.0 || ramp_is_feasible(&capacity, gradient, hi, tol) {
        return Ok(hi);
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        if hi - lo <= 1e-12 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if ramp_is_feasible(&capacity, gradient, mid, tol) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// First instant at which `policy` cannot meet `signal`, `f64::INFINITY` if
/// it never fails before the horizon.
pub fn time_to_failure(fleet: &FleetState, signal: &StepSignal, policy: Policy) -> f64 {
    let options = SimulationOptions {
        halt_on_failure: true,
        record_states: false,
    };
    simulate_with(fleet, signal, policy, options).time_to_failure
}

/// Largest `t` such that the first `t` seconds of `signal` are feasible.
/// Equals the horizon when the whole signal is feasible.
pub fn max_feasible_truncation(signal: &StepSignal, fleet: &FleetState) -> f64 {
    let ttf = time_to_failure(fleet, signal, Policy::Optimal);
    if ttf.is_finite() {
        ttf
    } else {
        signal.horizon()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    ADominates,
    BDominates,
    Equivalent,
    Incomparable,
}

/// Outcome of comparing the capacity curves of two fleets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparisonVerdict {
    pub relation: Relation,
    /// Power level at which `a` fails to dominate `b`; present when
    /// `relation` is `BDominates` or `Incomparable`.
    pub witness_p: Option<f64>,
}

/// Compares the feasible sets of two fleets through their capacities.
pub fn compare_fleets(a: &FleetState, b: &FleetState) -> ComparisonVerdict {
    let tol = a.tolerance().max(b.tolerance());
    let (ca, cb) = (capacity_curve(a), capacity_curve(b));
    let ab = dominance(&ca, &cb, tol);
    let ba = dominance(&cb, &ca, tol);
    let relation = match (ab.holds, ba.holds) {
        (true, true) => Relation::Equivalent,
        (true, false) => Relation::ADominates,
        (false, true) => Relation::BDominates,
        (false, false) => Relation::Incomparable,
    };
    ComparisonVerdict {
        relation,
        witness_p: ab.witness,
    }
}

/// Monte Carlo estimate of the probability that a request trace is feasible.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeasibilityEstimate {
    pub samples: usize,
    pub feasible: usize,
    pub probability: f64,
    /// Half-width of the Wilson 95% score interval.
    pub half_width: f64,
}

const Z95: f64 = 1.959_963_984_540_054;

/// Wilson score interval `(center, half_width)` at 95% for `successes` out
/// of `n` trials.
pub fn wilson_interval(successes: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.5, 0.5);
    }
    let n = n as f64;
    let phat = successes as f64 / n;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let center = (phat + z2 / (2.0 * n)) / denom;
    let half = Z95 / denom * (phat * (1.0 - phat) / n + z2 / (4.0 * n * n)).sqrt();
    (center, half)
}

/// Fraction of `samples` request traces drawn from `config` that `fleet`
/// can meet. Trace `i` comes from substream `i + 1` of `config.seed`, so the
/// result does not depend on how the work is scheduled.
pub fn feasibility_probability(
    fleet: &FleetState,
    config: &ScenarioConfig,
    samples: usize,
) -> Result<FeasibilityEstimate> {
    config.validate()?;
    if samples == 0 {
        return Err(FlexError::InvalidConfig(
            "sample count must be at least 1".into(),
        ));
    }
    let capacity = capacity_curve(fleet);
    let tol = fleet.tolerance();
    let verdicts = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(config.seed, i as u64 + 1);
            let trace = sample_requests(config, &mut rng)?;
            Ok(dominance(&capacity, &ep_transform(&trace), tol).holds)
        })
        .collect::<Result<Vec<bool>>>()?;
    let feasible = verdicts.iter().filter(|&&ok| ok).count();
    let (_, half_width) = wilson_interval(feasible, samples);
    Ok(FeasibilityEstimate {
        samples,
        feasible,
        probability: feasible as f64 / samples as f64,
        half_width,
    })
}
