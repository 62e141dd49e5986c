//! Domain types shared by every other module: devices, fleets partitioned by
//! time-to-go, piecewise-constant power requests and per-instant dispatch
//! results.
//!
//! All quantities are SI: watts, joules, seconds.

use std::cmp::Ordering;

use crate::error::{FlexError, Result};

/// Relative tolerance used for grouping, dominance and deficit detection
/// unless a caller overrides it.
pub const DEFAULT_TOLERANCE: f64 = 1e-9;

/// One discharge-only storage unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Device {
    id: String,
    p_max: f64,
    energy: f64,
}

impl Device {
    pub fn new(id: impl Into<String>, p_max: f64, energy: f64) -> Result<Self> {
        let id = id.into();
        if !(p_max.is_finite() && p_max > 0.0) {
            return Err(FlexError::InvalidDevice {
                id,
                reason: format!("maximum power must be positive and finite, got {p_max}"),
            });
        }
        if !(energy.is_finite() && energy >= 0.0) {
            return Err(FlexError::InvalidDevice {
                id,
                reason: format!("energy must be nonnegative and finite, got {energy}"),
            });
        }
        Ok(Self { id, p_max, energy })
    }

    /// Builds a device from its power rating and time-to-go (seconds).
    pub fn from_time_to_go(id: impl Into<String>, p_max: f64, time_to_go: f64) -> Result<Self> {
        Self::new(id, p_max, p_max * time_to_go)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn p_max(&self) -> f64 {
        self.p_max
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    /// Remaining time the device can run at full power.
    pub fn time_to_go(&self) -> f64 {
        self.energy / self.p_max
    }

    pub fn is_empty(&self) -> bool {
        self.energy <= 0.0
    }

    pub(crate) fn with_energy(&self, energy: f64) -> Self {
        Self {
            id: self.id.clone(),
            p_max: self.p_max,
            energy: energy.max(0.0),
        }
    }
}

/// A set of devices sharing (up to tolerance) the same time-to-go.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    members: Vec<usize>,
    power: f64,
    energy: f64,
    time_to_go: f64,
}

impl Group {
    /// Device indices, in ascending order.
    pub fn members(&self) -> &[usize] {
        &self.members
    }

    /// Sum of member power ratings.
    pub fn power(&self) -> f64 {
        self.power
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    /// Energy-weighted time-to-go of the group (total energy over total power).
    pub fn time_to_go(&self) -> f64 {
        self.time_to_go
    }
}

/// Partition of device indices into groups of equal time-to-go, sorted by
/// strictly descending time-to-go.
///
/// Devices are merged into the current group while their time-to-go lies
/// within `tolerance * max(1, anchor)` of the group's largest time-to-go.
pub(crate) fn partition(p_max: &[f64], energy: &[f64], tolerance: f64) -> Vec<Group> {
    debug_assert_eq!(p_max.len(), energy.len());
    let ttg: Vec<f64> = p_max.iter().zip(energy).map(|(p, e)| e / p).collect();
    let mut order: Vec<usize> = (0..ttg.len()).collect();
    order.sort_by(|&a, &b| {
        ttg[b]
            .partial_cmp(&ttg[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });

    let mut groups: Vec<Group> = Vec::new();
    let mut anchor = f64::NAN;
    for idx in order {
        let x = ttg[idx];
        let joins = groups
            .last()
            .is_some_and(|_| anchor - x <= tolerance * anchor.max(1.0));
        if !joins {
            anchor = x;
            groups.push(Group {
                members: Vec::new(),
                power: 0.0,
                energy: 0.0,
                time_to_go: 0.0,
            });
        }
        let group = groups.last_mut().expect("group pushed above");
        group.members.push(idx);
        group.power += p_max[idx];
        group.energy += energy[idx];
    }
    for group in &mut groups {
        group.members.sort_unstable();
        group.time_to_go = group.energy / group.power;
    }
    groups
}

/// A fleet of devices at one time instant, grouped by time-to-go.
#[derive(Debug, Clone, PartialEq)]
pub struct FleetState {
    devices: Vec<Device>,
    groups: Vec<Group>,
    tolerance: f64,
}

/// Builds a fleet state with the given relative grouping tolerance.
pub fn make_fleet(devices: Vec<Device>, tolerance: f64) -> Result<FleetState> {
    FleetState::with_tolerance(devices, tolerance)
}

impl FleetState {
    pub fn new(devices: Vec<Device>) -> Result<Self> {
        Self::with_tolerance(devices, DEFAULT_TOLERANCE)
    }

    pub fn with_tolerance(devices: Vec<Device>, tolerance: f64) -> Result<Self> {
        if devices.is_empty() {
            return Err(FlexError::EmptyFleet);
        }
        // Devices built through `Device::new` are already valid; this guards
        // against values mutated through `with_energy`.
        for d in &devices {
            Device::new(d.id.clone(), d.p_max, d.energy)?;
        }
        let tolerance = if tolerance.is_finite() && tolerance >= 0.0 {
            tolerance
        } else {
            DEFAULT_TOLERANCE
        };
        let p: Vec<f64> = devices.iter().map(Device::p_max).collect();
        let e: Vec<f64> = devices.iter().map(Device::energy).collect();
        let groups = partition(&p, &e, tolerance);
        Ok(Self {
            devices,
            groups,
            tolerance,
        })
    }

    /// Convenience constructor from `(p_max, energy)` pairs with generated ids.
    pub fn from_ratings(ratings: &[(f64, f64)]) -> Result<Self> {
        let devices = ratings
            .iter()
            .enumerate()
            .map(|(i, &(p, e))| Device::new(format!("d{i}"), p, e))
            .collect::<Result<Vec<_>>>()?;
        Self::new(devices)
    }

    pub fn devices(&self) -> &[Device] {
        &self.devices
    }

    pub fn len(&self) -> usize {
        self.devices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    /// Number of distinct time-to-go values.
    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn group_powers(&self) -> Vec<f64> {
        self.groups.iter().map(Group::power).collect()
    }

    pub fn group_time_to_go(&self) -> Vec<f64> {
        self.groups.iter().map(Group::time_to_go).collect()
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn total_energy(&self) -> f64 {
        self.devices.iter().map(Device::energy).sum()
    }

    /// Sum of all power ratings, including empty devices.
    pub fn total_power(&self) -> f64 {
        self.devices.iter().map(Device::p_max).sum()
    }

    pub fn energies(&self) -> Vec<f64> {
        self.devices.iter().map(Device::energy).collect()
    }

    pub fn powers(&self) -> Vec<f64> {
        self.devices.iter().map(Device::p_max).collect()
    }

    /// Same devices and tolerance with replaced energies (clamped at zero).
    pub fn with_energies(&self, energies: &[f64]) -> Self {
        assert_eq!(energies.len(), self.devices.len(), "energy vector length");
        let devices: Vec<Device> = self
            .devices
            .iter()
            .zip(energies)
            .map(|(d, &e)| d.with_energy(e))
            .collect();
        let p: Vec<f64> = devices.iter().map(Device::p_max).collect();
        let e: Vec<f64> = devices.iter().map(Device::energy).collect();
        let groups = partition(&p, &e, self.tolerance);
        Self {
            devices,
            groups,
            tolerance: self.tolerance,
        }
    }

    /// Regroups the same devices under a different tolerance.
    pub fn regrouped(&self, tolerance: f64) -> Result<Self> {
        Self::with_tolerance(self.devices.clone(), tolerance)
    }
}

/// One constant piece of a [`StepSignal`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub value: f64,
}

impl Segment {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// Finite-horizon, piecewise-constant, nonnegative power request. The signal
/// is zero from `horizon` onwards.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSignal {
    starts: Vec<f64>,
    values: Vec<f64>,
    horizon: f64,
}

impl StepSignal {
    /// `starts[k]` is the start of interval `k`; the last interval ends at
    /// `horizon`. An empty signal must have a zero horizon.
    pub fn new(starts: Vec<f64>, values: Vec<f64>, horizon: f64) -> Result<Self> {
        if starts.len() != values.len() {
            return Err(FlexError::InvalidSignal(format!(
                "{} breakpoints but {} values",
                starts.len(),
                values.len()
            )));
        }
        if !(horizon.is_finite() && horizon >= 0.0) {
            return Err(FlexError::InvalidSignal(format!(
                "horizon must be finite and nonnegative, got {horizon}"
            )));
        }
        if starts.is_empty() {
            if horizon != 0.0 {
                return Err(FlexError::InvalidSignal(
                    "a signal without intervals must have zero horizon".into(),
                ));
            }
            return Ok(Self::empty());
        }
        if starts[0] != 0.0 {
            return Err(FlexError::InvalidSignal(format!(
                "first breakpoint must be 0, got {}",
                starts[0]
            )));
        }
        for (k, w) in starts.windows(2).enumerate() {
            if !w[1].is_finite() || w[1] <= w[0] {
                return Err(FlexError::InvalidSignal(format!(
                    "breakpoints must be strictly increasing (index {})",
                    k + 1
                )));
            }
        }
        if !horizon.is_finite() || horizon <= *starts.last().expect("nonempty") {
            return Err(FlexError::InvalidSignal(format!(
                "horizon {horizon} must exceed the last breakpoint"
            )));
        }
        if let Some((k, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(FlexError::InvalidSignal(format!(
                "value {v} at index {k} is not a finite nonnegative power"
            )));
        }
        Ok(Self {
            starts,
            values,
            horizon,
        })
    }

    /// The signal with no intervals and zero horizon.
    pub fn empty() -> Self {
        Self {
            starts: Vec::new(),
            values: Vec::new(),
            horizon: 0.0,
        }
    }

    /// Identically zero over `[0, horizon)`.
    pub fn zero(horizon: f64) -> Result<Self> {
        if horizon == 0.0 {
            Ok(Self::empty())
        } else {
            Self::new(vec![0.0], vec![0.0], horizon)
        }
    }

    /// Builds a signal from consecutive `(duration, value)` pieces; zero-length
    /// pieces are dropped.
    pub fn from_segments(pieces: &[(f64, f64)]) -> Result<Self> {
        let mut starts = Vec::with_capacity(pieces.len());
        let mut values = Vec::with_capacity(pieces.len());
        let mut t = 0.0;
        for &(duration, value) in pieces {
            if !(duration.is_finite() && duration >= 0.0) {
                return Err(FlexError::InvalidSignal(format!(
                    "segment duration {duration} must be finite and nonnegative"
                )));
            }
            if duration == 0.0 {
                continue;
            }
            starts.push(t);
            values.push(value);
            t += duration;
        }
        Self::new(starts, values, t)
    }

    /// A pulse of `magnitude` watts lasting `duration` seconds.
    pub fn constant(magnitude: f64, duration: f64) -> Result<Self> {
        Self::from_segments(&[(duration, magnitude)])
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.starts
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segments(&self) -> impl Iterator<Item = Segment> + '_ {
        self.starts
            .iter()
            .enumerate()
            .map(move |(k, &start)| Segment {
                start,
                end: self.starts.get(k + 1).copied().unwrap_or(self.horizon),
                value: self.values[k],
            })
    }

    /// Value at time `t`; zero outside `[0, horizon)`.
    pub fn value_at(&self, t: f64) -> f64 {
        if t < 0.0 || t >= self.horizon || self.starts.is_empty() {
            return 0.0;
        }
        let k = self.starts.partition_point(|&s| s <= t);
        self.values[k - 1]
    }

    /// Total requested energy.
    pub fn energy(&self) -> f64 {
        self.segments().map(|s| s.duration() * s.value).sum()
    }

    /// Largest requested power.
    pub fn peak(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// The part of the signal on `[t0, t1)`, re-anchored to start at time 0.
    /// The window end is clamped to the horizon since the signal is zero
    /// afterwards.
    pub fn truncate(&self, t0: f64, t1: f64) -> Result<Self> {
        if !(t0.is_finite() && t1.is_finite() && t0 >= 0.0 && t0 <= t1) {
            return Err(FlexError::InvalidWindow { t0, t1 });
        }
        if t0 == 0.0 && t1 >= self.horizon {
            return Ok(self.clone());
        }
        let end = t1.min(self.horizon);
        let pieces: Vec<(f64, f64)> = self
            .segments()
            .filter_map(|s| {
                let a = s.start.max(t0);
                let b = s.end.min(end);
                (b > a).then_some((b - a, s.value))
            })
            .collect();
        Self::from_segments(&pieces)
    }

    /// Cuts the signal at `cuts` and concatenates the resulting parts in the
    /// given `order` (0-based part indices).
    ///
    /// Cut times must be strictly increasing within `[0, horizon]`; cuts at
    /// 0 or at the horizon do not create empty parts.
    pub fn permute_segments(&self, cuts: &[f64], order: &[usize]) -> Result<Self> {
        let mut bounds = vec![0.0];
        let mut last = f64::NEG_INFINITY;
        for &c in cuts {
            if !(c.is_finite() && c >= 0.0 && c <= self.horizon) {
                return Err(FlexError::InvalidPartition(format!(
                    "cut {c} outside [0, {}]",
                    self.horizon
                )));
            }
            if c <= last {
                return Err(FlexError::InvalidPartition(
                    "cut times must be strictly increasing".into(),
                ));
            }
            last = c;
            if c > 0.0 && c < self.horizon {
                bounds.push(c);
            }
        }
        if self.horizon > 0.0 {
            bounds.push(self.horizon);
        }
        let parts = bounds.len().saturating_sub(1);
        let mut seen = vec![false; parts];
        if order.len() != parts {
            return Err(FlexError::InvalidPartition(format!(
                "order has {} entries but there are {parts} parts",
                order.len()
            )));
        }
        for &i in order {
            if i >= parts || std::mem::replace(&mut seen[i], true) {
                return Err(FlexError::InvalidPartition(format!(
                    "order is not a permutation of 0..{parts}"
                )));
            }
        }
        let mut pieces = Vec::new();
        for &i in order {
            let (a, b) = (bounds[i], bounds[i + 1]);
            for s in self.segments() {
                let lo = s.start.max(a);
                let hi = s.end.min(b);
                if hi > lo {
                    pieces.push((hi - lo, s.value));
                }
            }
        }
        Self::from_segments(&pieces)
    }
}

/// Allocation of a power request across the devices of a fleet at one
/// instant.
#[derive(Debug, Clone, PartialEq)]
pub struct DispatchResult {
    pub allocation: Vec<f64>,
    pub request: f64,
    pub total: f64,
    pub deficit: f64,
}

impl DispatchResult {
    pub(crate) fn from_allocation(allocation: Vec<f64>, request: f64) -> Self {
        let total: f64 = allocation.iter().sum();
        Self {
            allocation,
            request,
            total,
            deficit: (request - total).max(0.0),
        }
    }

    /// True when the deficit exceeds the relative tolerance of the request.
    pub fn has_deficit(&self, tolerance: f64) -> bool {
        self.deficit > tolerance * self.request.max(1.0)
    }
}
