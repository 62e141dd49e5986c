//! Dispatch policies and the exact event-driven closed-loop simulator.
//!
//! The optimal policy runs groups of devices in descending order of
//! time-to-go at full power, with at most one group at a fraction of its
//! rating. The lowest-power-first and proportion-of-power heuristics are
//! provided as baselines.

use std::fmt;
use std::str::FromStr;

use crate::error::{FlexError, Result};
use crate::model::{partition, DispatchResult, FleetState, Group, StepSignal};

/// Dispatch rule applied at every instant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Policy {
    /// Descending time-to-go, one fractional group.
    Optimal,
    /// Ascending power rating, ties by device id.
    LowestPowerFirst,
    /// Pro-rata to power rating over nonempty devices.
    ProportionOfPower,
}

impl Policy {
    pub const ALL: [Policy; 3] = [
        Policy::Optimal,
        Policy::LowestPowerFirst,
        Policy::ProportionOfPower,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            Policy::Optimal => "op",
            Policy::LowestPowerFirst => "lpf",
            Policy::ProportionOfPower => "pop",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "op" | "optimal" => Ok(Policy::Optimal),
            "lpf" => Ok(Policy::LowestPowerFirst),
            "pop" => Ok(Policy::ProportionOfPower),
            other => Err(format!(
                "unknown policy `{other}` (expected op, lpf or pop)"
            )),
        }
    }
}

fn check_request(request: f64) -> Result<()> {
    if request.is_finite() && request >= 0.0 {
        Ok(())
    } else {
        Err(FlexError::InvalidRequest(request))
    }
}

/// Optimal allocation over precomputed groups. Within a group every nonempty
/// device runs at the same fraction of its own rating, so the group keeps a
/// common time-to-go.
fn optimal_allocation(p_max: &[f64], energy: &[f64], groups: &[Group], request: f64) -> Vec<f64> {
    let mut u = vec![0.0; p_max.len()];
    let mut cumulative = 0.0;
    for group in groups {
        let active: f64 = group
            .members()
            .iter()
            .filter(|&&i| energy[i] > 0.0)
            .map(|&i| p_max[i])
            .sum();
        if active <= 0.0 {
            continue;
        }
        let before = cumulative;
        cumulative += active;
        let fraction = if cumulative <= request {
            1.0
        } else if before >= request {
            0.0
        } else {
            (request - before) / active
        };
        if fraction > 0.0 {
            for &i in group.members() {
                if energy[i] > 0.0 {
                    u[i] = if fraction == 1.0 {
                        p_max[i]
                    } else {
                        fraction * p_max[i]
                    };
                }
            }
        }
        if before >= request {
            break;
        }
    }
    u
}

fn lpf_order(state: &FleetState) -> Vec<usize> {
    let devices = state.devices();
    let mut order: Vec<usize> = (0..devices.len()).collect();
    order.sort_by(|&a, &b| {
        devices[a]
            .p_max()
            .total_cmp(&devices[b].p_max())
            .then_with(|| devices[a].id().cmp(devices[b].id()))
            .then(a.cmp(&b))
    });
    order
}

fn lpf_allocation(p_max: &[f64], energy: &[f64], order: &[usize], request: f64) -> Vec<f64> {
    let mut u = vec![0.0; p_max.len()];
    let mut remaining = request;
    for &i in order {
        if remaining <= 0.0 {
            break;
        }
        if energy[i] > 0.0 {
            let take = p_max[i].min(remaining);
            u[i] = take;
            remaining -= take;
        }
    }
    u
}

fn pop_allocation(p_max: &[f64], energy: &[f64], request: f64) -> Vec<f64> {
    let available: f64 = p_max
        .iter()
        .zip(energy)
        .filter(|(_, &e)| e > 0.0)
        .map(|(p, _)| p)
        .sum();
    if available <= 0.0 || request <= 0.0 {
        return vec![0.0; p_max.len()];
    }
    p_max
        .iter()
        .zip(energy)
        .map(|(&p, &e)| {
            if e > 0.0 {
                p.min(p * request / available)
            } else {
                0.0
            }
        })
        .collect()
}

pub fn optimal_dispatch(state: &FleetState, request: f64) -> Result<DispatchResult> {
    check_request(request)?;
    let u = optimal_allocation(&state.powers(), &state.energies(), state.groups(), request);
    Ok(DispatchResult::from_allocation(u, request))
}

pub fn lpf_dispatch(state: &FleetState, request: f64) -> Result<DispatchResult> {
    check_request(request)?;
    let order = lpf_order(state);
    let u = lpf_allocation(&state.powers(), &state.energies(), &order, request);
    Ok(DispatchResult::from_allocation(u, request))
}

pub fn pop_dispatch(state: &FleetState, request: f64) -> Result<DispatchResult> {
    check_request(request)?;
    let u = pop_allocation(&state.powers(), &state.energies(), request);
    Ok(DispatchResult::from_allocation(u, request))
}

pub fn dispatch(policy: Policy, state: &FleetState, request: f64) -> Result<DispatchResult> {
    match policy {
        Policy::Optimal => optimal_dispatch(state, request),
        Policy::LowestPowerFirst => lpf_dispatch(state, request),
        Policy::ProportionOfPower => pop_dispatch(state, request),
    }
}

/// Sum of ratings over devices that still hold energy.
pub fn max_available_power(state: &FleetState) -> f64 {
    state
        .devices()
        .iter()
        .filter(|d| !d.is_empty())
        .map(|d| d.p_max())
        .sum()
}

/// Simulation switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimulationOptions {
    /// Stop the trajectory at the first deficit instead of continuing with
    /// best-effort delivery.
    pub halt_on_failure: bool,
    /// Keep fleet snapshots and per-device allocations for every segment.
    /// Large fleets should switch this off.
    pub record_states: bool,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self {
            halt_on_failure: false,
            record_states: true,
        }
    }
}

/// Interval between two consecutive events, over which every device's
/// allocation is constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySegment {
    pub start: f64,
    pub end: f64,
    pub request: f64,
    pub delivered: f64,
    pub deficit: f64,
    /// Sum of ratings of nonempty devices at `start`.
    pub available: f64,
}

impl TrajectorySegment {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub policy: Policy,
    /// Segment start times followed by the final time.
    pub event_times: Vec<f64>,
    pub segments: Vec<TrajectorySegment>,
    /// Fleet snapshot at every event time (empty unless recorded).
    pub states: Vec<FleetState>,
    /// Allocation over every segment (empty unless recorded).
    pub allocations: Vec<DispatchResult>,
    pub final_state: FleetState,
    /// First instant with a deficit, `f64::INFINITY` if none before the horizon.
    pub time_to_failure: f64,
}

impl Trajectory {
    pub fn delivered_energy(&self) -> f64 {
        self.segments
            .iter()
            .map(|s| s.delivered * s.duration())
            .sum()
    }

    pub fn unserved_energy(&self) -> f64 {
        self.segments.iter().map(|s| s.deficit * s.duration()).sum()
    }

    pub fn end_time(&self) -> f64 {
        self.event_times.last().copied().unwrap_or(0.0)
    }

    pub fn failed(&self) -> bool {
        self.time_to_failure.is_finite()
    }
}

/// Simulates the closed loop with default options.
pub fn simulate(fleet: &FleetState, signal: &StepSignal, policy: Policy) -> Trajectory {
    simulate_with(fleet, signal, policy, SimulationOptions::default())
}

/// Exact event-driven simulation of a fleet following `policy` on `signal`.
///
/// Between events all allocations are constant, so energies decay linearly
/// and the next event time is computed in closed form: signal breakpoints,
/// device depletions, and (under the optimal policy) two adjacent groups
/// reaching the same time-to-go.
pub fn simulate_with(
    fleet: &FleetState,
    signal: &StepSignal,
    policy: Policy,
    options: SimulationOptions,
) -> Trajectory {
    let tol = fleet.tolerance();
    let p_max = fleet.powers();
    let mut energy = fleet.energies();
    let lpf = (policy == Policy::LowestPowerFirst).then(|| lpf_order(fleet));

    let mut trajectory = Trajectory {
        policy,
        event_times: Vec::new(),
        segments: Vec::new(),
        states: Vec::new(),
        allocations: Vec::new(),
        final_state: fleet.clone(),
        time_to_failure: f64::INFINITY,
    };
    let mut t = 0.0;
    let mut halted = false;

    // Every iteration either reaches a segment end, depletes a device or
    // merges two groups, so this bound is never reached in practice.
    let mut budget = 4 * (p_max.len() + 1) * (signal.len() + 1) + 64 * p_max.len() + 1024;

    'outer: for seg in signal.segments() {
        t = seg.start;
        while t < seg.end {
            budget = budget.saturating_sub(1);
            if budget == 0 {
                break 'outer;
            }
            let groups = (policy == Policy::Optimal).then(|| partition(&p_max, &energy, tol));
            let u = match policy {
                Policy::Optimal => optimal_allocation(
                    &p_max,
                    &energy,
                    groups.as_deref().expect("optimal groups"),
                    seg.value,
                ),
                Policy::LowestPowerFirst => lpf_allocation(
                    &p_max,
                    &energy,
                    lpf.as_deref().expect("lpf order"),
                    seg.value,
                ),
                Policy::ProportionOfPower => pop_allocation(&p_max, &energy, seg.value),
            };
            let result = DispatchResult::from_allocation(u, seg.value);
            if result.has_deficit(tol) && trajectory.time_to_failure.is_infinite() {
                trajectory.time_to_failure = t;
                if options.halt_on_failure {
                    halted = true;
                    break 'outer;
                }
            }

            let mut dt = seg.end - t;
            for (i, &ui) in result.allocation.iter().enumerate() {
                if ui > 0.0 {
                    dt = dt.min(energy[i] / ui);
                }
            }
            if let Some(groups) = &groups {
                dt = dt.min(next_merge(&p_max, &energy, groups, &result.allocation));
            }
            let dt = dt.max(0.0);
            let available_now = available(&p_max, &energy);

            if options.record_states {
                trajectory.states.push(fleet.with_energies(&energy));
            }
            for (i, &ui) in result.allocation.iter().enumerate() {
                if ui > 0.0 {
                    let depletion = energy[i] / ui;
                    energy[i] = if depletion - dt <= tol * depletion.max(1.0) {
                        0.0
                    } else {
                        (energy[i] - ui * dt).max(0.0)
                    };
                }
            }
            let end = if seg.end - (t + dt) <= tol * seg.end.max(1.0) {
                seg.end
            } else {
                t + dt
            };
            trajectory.event_times.push(t);
            trajectory.segments.push(TrajectorySegment {
                start: t,
                end,
                request: seg.value,
                delivered: result.total,
                deficit: result.deficit,
                available: available_now,
            });
            if options.record_states {
                trajectory.allocations.push(result);
            }
            t = end;
        }
    }
    if !halted {
        t = t.max(signal.horizon());
    }
    trajectory.event_times.push(t);
    if options.record_states {
        trajectory.states.push(fleet.with_energies(&energy));
    }
    trajectory.final_state = fleet.with_energies(&energy);
    trajectory
}

fn available(p_max: &[f64], energy: &[f64]) -> f64 {
    p_max
        .iter()
        .zip(energy)
        .filter(|(_, &e)| e > 0.0)
        .map(|(p, _)| p)
        .sum()
}

/// Earliest time at which two adjacent groups (by time-to-go) running at
/// different fractions reach the same time-to-go.
fn next_merge(p_max: &[f64], energy: &[f64], groups: &[Group], allocation: &[f64]) -> f64 {
    let mut lanes: Vec<(f64, f64)> = Vec::with_capacity(groups.len());
    for group in groups {
        let (mut power, mut stored, mut drawn) = (0.0, 0.0, 0.0);
        for &i in group.members() {
            if energy[i] > 0.0 {
                power += p_max[i];
                stored += energy[i];
                drawn += allocation[i];
            }
        }
        if power > 0.0 {
            lanes.push((stored / power, drawn / power));
        }
    }
    lanes
        .windows(2)
        .filter_map(|w| {
            let ((x_hi, r_hi), (x_lo, r_lo)) = (w[0], w[1]);
            (r_hi > r_lo).then(|| (x_hi - x_lo).max(0.0) / (r_hi - r_lo))
        })
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;

    const KW: f64 = 1e3;
    const KWH: f64 = 3.6e6;
    const H: f64 = 3600.0;

    fn fleet_ttg(ttg_power: &[(f64, f64)]) -> FleetState {
        // (time-to-go hours, power kW)
        FleetState::from_ratings(
            &ttg_power
                .iter()
                .map(|&(x, p)| (p * KW, p * KW * x * H))
                .collect::<Vec<_>>(),
        )
        .unwrap()
    }

    fn assert_alloc(actual: &[f64], expected_kw: &[f64]) {
        assert_eq!(actual.len(), expected_kw.len());
        for (a, e) in actual.iter().zip(expected_kw) {
            assert!(
                (a - e * KW).abs() < 1e-9,
                "{actual:?} vs {expected_kw:?} kW"
            );
        }
    }

    #[test]
    fn optimal_fills_descending_time_to_go() {
        let fleet = fleet_ttg(&[(5.0, 2.0), (5.0, 1.0), (3.0, 4.0)]);
        let r = optimal_dispatch(&fleet, 4.0 * KW).unwrap();
        assert_alloc(&r.allocation, &[2.0, 1.0, 1.0]);
        assert_eq!(r.deficit, 0.0);
    }

    #[test]
    fn zero_request_allocates_nothing() {
        let fleet = fleet_ttg(&[(5.0, 2.0), (5.0, 1.0), (3.0, 4.0)]);
        for policy in Policy::ALL {
            let r = dispatch(policy, &fleet, 0.0).unwrap();
            assert!(r.allocation.iter().all(|&u| u == 0.0));
            assert_eq!(r.deficit, 0.0);
        }
    }

    #[test]
    fn optimal_saturates_with_deficit() {
        let fleet = fleet_ttg(&[(1.0, 2.0)]);
        let r = optimal_dispatch(&fleet, 5.0 * KW).unwrap();
        assert_alloc(&r.allocation, &[2.0]);
        assert!((r.deficit - 3.0 * KW).abs() < 1e-9);
    }

    #[test]
    fn negative_request_is_rejected() {
        let fleet = fleet_ttg(&[(1.0, 2.0)]);
        for policy in Policy::ALL {
            assert_eq!(
                dispatch(policy, &fleet, -1.0),
                Err(FlexError::InvalidRequest(-1.0))
            );
        }
    }

    #[test]
    fn lpf_fills_smallest_first() {
        let fleet = fleet_ttg(&[(1.0, 1.0), (1.0, 2.0), (1.0, 4.0)]);
        let r = lpf_dispatch(&fleet, 4.0 * KW).unwrap();
        assert_alloc(&r.allocation, &[1.0, 2.0, 1.0]);
    }

    #[test]
    fn lpf_skips_empty_devices() {
        let fleet = fleet_ttg(&[(0.0, 1.0), (1.0, 2.0), (1.0, 4.0)]);
        let r = lpf_dispatch(&fleet, 4.0 * KW).unwrap();
        assert_alloc(&r.allocation, &[0.0, 2.0, 2.0]);
    }

    #[test]
    fn lpf_breaks_ties_by_id() {
        let devices = vec![
            crate::model::Device::new("b", 1.0, 1.0).unwrap(),
            crate::model::Device::new("a", 1.0, 1.0).unwrap(),
        ];
        let fleet = FleetState::new(devices).unwrap();
        let r = lpf_dispatch(&fleet, 1.5).unwrap();
        assert_eq!(r.allocation, vec![0.5, 1.0]);
    }

    #[test]
    fn pop_splits_pro_rata() {
        let fleet = fleet_ttg(&[(1.0, 2.0), (1.0, 1.0), (1.0, 4.0)]);
        let r = pop_dispatch(&fleet, 3.5 * KW).unwrap();
        assert_alloc(&r.allocation, &[1.0, 0.5, 2.0]);
        let exact = pop_dispatch(&fleet_ttg(&[(1.0, 1.0), (1.0, 1.0)]), 2.0 * KW).unwrap();
        assert_alloc(&exact.allocation, &[1.0, 1.0]);
        assert_eq!(exact.deficit, 0.0);
    }

    #[test]
    fn pop_with_all_empty_reports_full_deficit() {
        let fleet = fleet_ttg(&[(0.0, 1.0), (0.0, 3.0)]);
        let r = pop_dispatch(&fleet, 2.0 * KW).unwrap();
        assert_eq!(r.total, 0.0);
        assert_eq!(r.deficit, 2.0 * KW);
    }

    #[test]
    fn single_device_exhausts_at_energy_over_power() {
        let fleet = FleetState::from_ratings(&[(5.0 * KW, 10.0 * KWH)]).unwrap();
        let signal = StepSignal::constant(4.0 * KW, 3.0 * H).unwrap();
        for policy in Policy::ALL {
            let traj = simulate(&fleet, &signal, policy);
            assert_eq!(traj.time_to_failure, 2.5 * H, "{policy}");
        }
    }

    #[test]
    fn zero_signal_has_no_events() {
        let fleet = fleet_ttg(&[(5.0, 1.0), (3.0, 1.0)]);
        let signal = StepSignal::from_segments(&[(H, 0.0), (2.0 * H, 0.0)]).unwrap();
        let traj = simulate(&fleet, &signal, Policy::Optimal);
        assert_eq!(traj.event_times, vec![0.0, H, 3.0 * H]);
        assert!(traj.time_to_failure.is_infinite());
        assert_eq!(traj.final_state, fleet);
    }

    #[test]
    fn optimal_merges_then_shares() {
        let fleet = fleet_ttg(&[(5.0, 1.0), (3.0, 1.0)]);
        let signal = StepSignal::constant(1.0 * KW, 10.0 * H).unwrap();
        let traj = simulate(&fleet, &signal, Policy::Optimal);
        assert_eq!(traj.event_times, vec![0.0, 2.0 * H, 8.0 * H, 10.0 * H]);
        assert_eq!(traj.time_to_failure, 8.0 * H);
        assert_eq!(traj.states[1].group_count(), 1);
        assert!(traj.final_state.devices().iter().all(|d| d.is_empty()));
    }

    #[test]
    fn config_a_second_device_depletes_at_two_hours() {
        let fleet =
            FleetState::from_ratings(&[(4.0 * KW, 108.0 * KWH), (18.0 * KW, 36.0 * KWH)]).unwrap();
        let signal = StepSignal::constant(22.0 * KW, 2.0 * H).unwrap();
        let traj = simulate(&fleet, &signal, Policy::Optimal);
        assert!(traj.time_to_failure.is_infinite());
        assert_eq!(max_available_power(&fleet), 22.0 * KW);
        assert_eq!(max_available_power(&traj.final_state), 4.0 * KW);
    }

    #[test]
    fn halting_stops_at_failure() {
        let fleet = FleetState::from_ratings(&[(5.0 * KW, 10.0 * KWH)]).unwrap();
        let signal = StepSignal::constant(4.0 * KW, 3.0 * H).unwrap();
        let options = SimulationOptions {
            halt_on_failure: true,
            record_states: false,
        };
        let traj = simulate_with(&fleet, &signal, Policy::Optimal, options);
        assert_eq!(traj.end_time(), 2.5 * H);
        assert!(traj.states.is_empty());
    }

    #[test]
    fn all_empty_fleet_has_no_available_power() {
        let fleet = fleet_ttg(&[(0.0, 1.0), (0.0, 3.0)]);
        assert_eq!(max_available_power(&fleet), 0.0);
    }

    #[test]
    fn policy_parsing() {
        assert_eq!("OP".parse::<Policy>(), Ok(Policy::Optimal));
        assert_eq!("lpf".parse::<Policy>(), Ok(Policy::LowestPowerFirst));
        assert_eq!("pop".parse::<Policy>(), Ok(Policy::ProportionOfPower));
        assert!("x".parse::<Policy>().is_err());
    }
}
