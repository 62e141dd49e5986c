//! E-p curves: the energy a power signal delivers above each power level.
//!
//! Curves are kept as exact breakpoints. Every dominance, area and sizing
//! computation works on those breakpoints in closed form, never on a sampled
//! grid.

use std::cmp::Ordering;

use crate::error::{FlexError, Result};
use crate::model::{FleetState, StepSignal};

/// Convex, nonincreasing, piecewise-linear function of power.
///
/// Breakpoints `(p, E)` have strictly increasing `p`, start at `p = 0` and
/// end on the power axis (`E = 0`). Past the last breakpoint the curve is 0.
/// Each linear piece also stores the time spent above its left end, which is
/// the negated slope; storing it keeps the slope sequence exactly monotone.
#[derive(Debug, Clone, PartialEq)]
pub struct EPCurve {
    p: Vec<f64>,
    e: Vec<f64>,
    above: Vec<f64>,
}

impl EPCurve {
    /// The curve of the zero signal.
    pub fn zero() -> Self {
        Self {
            p: vec![0.0],
            e: vec![0.0],
            above: Vec::new(),
        }
    }

    /// Straight line from `(0, energy)` to `(power, 0)`. Degenerates to the
    /// zero curve when either intercept is not positive.
    pub fn line(energy: f64, power: f64) -> Self {
        if !(energy > 0.0 && power > 0.0) {
            return Self::zero();
        }
        Self {
            p: vec![0.0, power],
            e: vec![energy, 0.0],
            above: vec![energy / power],
        }
    }

    /// Builds a curve from breakpoints, validating shape (convex,
    /// nonincreasing, anchored on both axes).
    pub fn from_breakpoints(points: &[(f64, f64)]) -> Result<Self, String> {
        let Some(&(p0, _)) = points.first() else {
            return Err("a curve needs at least one breakpoint".into());
        };
        if p0 != 0.0 {
            return Err(format!("first breakpoint must be at p = 0, got {p0}"));
        }
        let last = points.last().expect("nonempty");
        if last.1 != 0.0 {
            return Err(format!("last breakpoint must have E = 0, got {}", last.1));
        }
        let p: Vec<f64> = points.iter().map(|x| x.0).collect();
        let e: Vec<f64> = points.iter().map(|x| x.1).collect();
        let above = points
            .windows(2)
            .map(|w| (w[0].1 - w[1].1) / (w[1].0 - w[0].0))
            .collect();
        let curve = Self { p, e, above };
        curve.check_shape()?;
        Ok(curve)
    }

    pub fn breakpoints(&self) -> Vec<(f64, f64)> {
        self.p.iter().copied().zip(self.e.iter().copied()).collect()
    }

    pub fn powers(&self) -> &[f64] {
        &self.p
    }

    pub fn energies(&self) -> &[f64] {
        &self.e
    }

    /// Slope of each linear piece (nonpositive, nondecreasing).
    pub fn slopes(&self) -> Vec<f64> {
        self.above.iter().map(|t| -t).collect()
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    /// Value at `p = 0`.
    pub fn e_intercept(&self) -> f64 {
        self.e[0]
    }

    /// Smallest power at which the curve reaches zero.
    pub fn p_intercept(&self) -> f64 {
        *self.p.last().expect("nonempty")
    }

    /// Evaluates the curve; powers below zero evaluate as `p = 0`.
    pub fn eval(&self, p: f64) -> f64 {
        if p >= self.p_intercept() {
            return 0.0;
        }
        if p <= 0.0 {
            return self.e[0];
        }
        let k = self.p.partition_point(|&x| x <= p) - 1;
        self.e[k + 1] + (self.p[k + 1] - p) * self.above[k]
    }

    /// Area under the curve over `[0, p_intercept]`.
    pub fn area(&self) -> f64 {
        (0..self.above.len())
            .map(|k| 0.5 * (self.e[k] + self.e[k + 1]) * (self.p[k + 1] - self.p[k]))
            .sum()
    }

    /// Checks the structural invariants exactly (no tolerance).
    pub fn check_shape(&self) -> Result<(), String> {
        if self.p.len() != self.e.len() || self.above.len() + 1 != self.p.len() {
            return Err("inconsistent breakpoint arrays".into());
        }
        if self.p[0] != 0.0 || *self.e.last().expect("nonempty") != 0.0 {
            return Err("curve must start at p = 0 and end at E = 0".into());
        }
        if self.e.iter().chain(&self.p).any(|x| !x.is_finite()) {
            return Err("non-finite breakpoint".into());
        }
        for k in 0..self.above.len() {
            if self.p[k + 1] <= self.p[k] {
                return Err(format!("powers not strictly increasing at {k}"));
            }
            if self.e[k + 1] > self.e[k] {
                return Err(format!("energy increases at breakpoint {}", k + 1));
            }
            if self.above[k] < 0.0 {
                return Err(format!("positive slope on piece {k}"));
            }
            if k > 0 && self.above[k] > self.above[k - 1] {
                return Err(format!("slope decreases at breakpoint {k} (not convex)"));
            }
        }
        Ok(())
    }
}

/// E-p transform of a step signal: `E(p) = sum_k d_k * max(v_k - p, 0)`.
///
/// Breakpoints sit at `p = 0` and at every distinct positive signal value.
/// Values are accumulated from the top level downwards, so the result only
/// depends on the multiset of `(value, duration)` pieces.
pub fn ep_transform(signal: &StepSignal) -> EPCurve {
    let mut pieces: Vec<(f64, f64)> = signal
        .segments()
        .filter(|s| s.value > 0.0)
        .map(|s| (s.value, s.duration()))
        .collect();
    if pieces.is_empty() {
        return EPCurve::zero();
    }
    pieces.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    // Distinct levels, ascending, with the total time spent at each.
    let mut levels: Vec<(f64, f64)> = Vec::new();
    for (value, duration) in pieces {
        match levels.last_mut() {
            Some(last) if last.0 == value => last.1 += duration,
            _ => levels.push((value, duration)),
        }
    }

    let m = levels.len();
    let mut p = vec![0.0; m + 1];
    let mut e = vec![0.0; m + 1];
    let mut above = vec![0.0; m];
    let mut time_above = 0.0;
    for j in (0..m).rev() {
        let (value, duration) = levels[j];
        time_above += duration;
        let lower = if j == 0 { 0.0 } else { levels[j - 1].0 };
        p[j + 1] = value;
        above[j] = time_above;
        e[j] = e[j + 1] + (value - lower) * time_above;
    }
    EPCurve { p, e, above }
}

/// Time-to-go and available power of each nonempty group, ascending in
/// time-to-go.
fn depletion_lanes(fleet: &FleetState) -> Vec<(f64, f64)> {
    let devices = fleet.devices();
    let mut lanes: Vec<(f64, f64)> = fleet
        .groups()
        .iter()
        .filter_map(|g| {
            let (power, energy) = g
                .members()
                .iter()
                .map(|&i| &devices[i])
                .filter(|d| !d.is_empty())
                .fold((0.0, 0.0), |(p, e), d| (p + d.p_max(), e + d.energy()));
            (power > 0.0 && energy > 0.0).then(|| (energy / power, power))
        })
        .collect();
    lanes.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));
    lanes
}

/// Staircase that runs every lane at full power until it depletes.
fn staircase(lanes_ascending: &[(f64, f64)]) -> StepSignal {
    let mut level = vec![0.0; lanes_ascending.len() + 1];
    for k in (0..lanes_ascending.len()).rev() {
        level[k] = level[k + 1] + lanes_ascending[k].1;
    }
    let mut pieces = Vec::with_capacity(lanes_ascending.len());
    let mut t = 0.0;
    for (k, &(x, _)) in lanes_ascending.iter().enumerate() {
        if x > t {
            pieces.push((x - t, level[k]));
            t = x;
        }
    }
    StepSignal::from_segments(&pieces).expect("staircase is a valid signal")
}

/// Signal that runs all devices at full power until each depletes.
pub fn worst_case_reference(fleet: &FleetState) -> StepSignal {
    staircase(&depletion_lanes(fleet))
}

/// Capacity of the fleet: the E-p transform of its worst-case reference.
pub fn capacity_curve(fleet: &FleetState) -> EPCurve {
    ep_transform(&worst_case_reference(fleet))
}

/// Outcome of a dominance test `a >= b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dominance {
    pub holds: bool,
    /// First power level at which `a` falls below `b` (the p-intercept of
    /// `a` when `b` asks for more power than `a` can supply).
    pub witness: Option<f64>,
    /// Smallest `a(p) - b(p)` over the breakpoints up to the p-intercept of
    /// `b`, in joules. Negative when dominance fails.
    pub margin: f64,
}

fn dominance_at(
    a: &EPCurve,
    b: impl Fn(f64) -> f64,
    b_p_intercept: f64,
    checkpoints: &[f64],
    tolerance: f64,
) -> Dominance {
    let scale = b(0.0).max(1.0);
    let slack = tolerance * scale;
    let mut margin = f64::INFINITY;
    let mut witness = None;
    for &p in checkpoints {
        let diff = a.eval(p) - b(p);
        margin = margin.min(diff);
        if witness.is_none() && diff < -slack {
            witness = Some(p);
        }
    }
    let a_intercept = a.p_intercept();
    if b_p_intercept > a_intercept + tolerance * a_intercept.max(1.0) {
        witness = Some(a_intercept);
    }
    Dominance {
        holds: witness.is_none(),
        witness,
        margin,
    }
}

fn merged_powers(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut ps: Vec<f64> = a.iter().chain(b).copied().collect();
    ps.sort_by(f64::total_cmp);
    ps.dedup();
    ps
}

/// Dominance of `a` over `b` with a relative tolerance on energy
/// (`tolerance * max(1, b(0))`) and on the power intercepts.
///
/// The difference of two piecewise-linear functions is linear between
/// consecutive breakpoints of the union, so checking the union is exact.
pub fn dominance(a: &EPCurve, b: &EPCurve, tolerance: f64) -> Dominance {
    // Above the p-intercept of `b` the test is trivially satisfied.
    let b_end = b.p_intercept();
    let checkpoints: Vec<f64> = merged_powers(&a.p, &b.p)
        .into_iter()
        .filter(|&p| p <= b_end)
        .collect();
    dominance_at(a, |p| b.eval(p), b.p_intercept(), &checkpoints, tolerance)
}

/// `a(p) >= b(p)` for every `p >= 0`, with the default tolerance.
pub fn dominates(a: &EPCurve, b: &EPCurve) -> bool {
    dominance(a, b, crate::model::DEFAULT_TOLERANCE).holds
}

/// Dominance of a piecewise-linear curve `a` over a convex curve `b` that
/// vanishes from `b_p_intercept` on.
///
/// On each linear piece of `a`, `a - b` is concave and attains its minimum
/// at an end of the piece, so the breakpoints of `a` below the intercept of
/// `b` (plus that intercept) decide the test.
pub fn dominance_convex(
    a: &EPCurve,
    b: impl Fn(f64) -> f64,
    b_p_intercept: f64,
    tolerance: f64,
) -> Dominance {
    let mut checkpoints: Vec<f64> = a.p.iter().copied().filter(|&p| p < b_p_intercept).collect();
    checkpoints.push(b_p_intercept.max(0.0));
    dominance_at(a, b, b_p_intercept, &checkpoints, tolerance)
}

/// Feasibility verdict of `signal` for `fleet`, with the witness power when
/// infeasible.
pub fn feasibility(signal: &StepSignal, fleet: &FleetState) -> Dominance {
    dominance(
        &capacity_curve(fleet),
        &ep_transform(signal),
        fleet.tolerance(),
    )
}

/// Whether the fleet can meet `signal` in full.
pub fn is_feasible(signal: &StepSignal, fleet: &FleetState) -> bool {
    feasibility(signal, fleet).holds
}

/// Capacity of a single device holding `energy` with rating `power`: the
/// most flexible fleet with these totals.
pub fn max_flexibility_line(energy: f64, power: f64) -> EPCurve {
    EPCurve::line(energy, power)
}

/// Area between the single-device line with the fleet's totals and the
/// fleet's capacity, in joule-watts. Zero for homogeneous fleets.
pub fn flexibility_gap(fleet: &FleetState) -> f64 {
    curve_gap(&capacity_curve(fleet))
}

/// Area between a curve and the straight line through its two intercepts.
pub fn curve_gap(capacity: &EPCurve) -> f64 {
    let line = max_flexibility_line(capacity.e_intercept(), capacity.p_intercept());
    let ps = merged_powers(&line.p, &capacity.p);
    ps.windows(2)
        .map(|w| {
            let lo = line.eval(w[0]) - capacity.eval(w[0]);
            let hi = line.eval(w[1]) - capacity.eval(w[1]);
            0.5 * (lo + hi) * (w[1] - w[0])
        })
        .sum::<f64>()
        .max(0.0)
}

/// Under-approximation of the capacity obtained by clustering groups into
/// `k` contiguous time-to-go bands and giving every device in a band the
/// band's smallest time-to-go.
///
/// Bands are separated at the `k - 1` widest gaps between consecutive
/// nonempty groups. A `k` at or above the number of nonempty groups returns
/// the exact capacity.
pub fn clustered_capacity_lower_bound(fleet: &FleetState, k: usize) -> Result<EPCurve> {
    if k < 1 {
        return Err(FlexError::InvalidClusterCount(k));
    }
    let lanes = depletion_lanes(fleet);
    if k >= lanes.len() {
        return Ok(ep_transform(&staircase(&lanes)));
    }
    // Gap i separates lane i from lane i + 1 (ascending time-to-go).
    let mut gaps: Vec<usize> = (0..lanes.len() - 1).collect();
    gaps.sort_by(|&i, &j| {
        let gi = lanes[i + 1].0 - lanes[i].0;
        let gj = lanes[j + 1].0 - lanes[j].0;
        gj.total_cmp(&gi).then(i.cmp(&j))
    });
    let mut cuts: Vec<usize> = gaps[..k - 1].to_vec();
    cuts.sort_unstable();

    let mut clusters = Vec::with_capacity(k);
    let mut first = 0;
    for end in cuts.into_iter().map(|c| c + 1).chain([lanes.len()]) {
        let band = &lanes[first..end];
        let power = band.iter().map(|l| l.1).sum();
        clusters.push((band[0].0, power));
        first = end;
    }
    Ok(ep_transform(&staircase(&clusters)))
}
