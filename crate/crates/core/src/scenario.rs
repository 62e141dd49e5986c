//! Seeded random fleets and request traces.
//!
//! Every draw comes from a ChaCha8 stream selected by `(seed, stream)`, so a
//! scenario index always sees the same numbers no matter which worker
//! produces it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{FlexError, Result};
use crate::model::{Device, FleetState, StepSignal};

const HOUR: f64 = 3600.0;
const KW: f64 = 1e3;
const MW: f64 = 1e6;

/// Closed interval for a uniform draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformRange {
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalParams {
    pub mean: f64,
    pub sd: f64,
}

/// Random fleet and request distributions. Units follow the file format:
/// hours for time-to-go, interval and horizon, kW for device ratings, MW
/// for requests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub device_count: usize,
    pub ttg_hours: UniformRange,
    pub power_kw: UniformRange,
    pub request_mw: NormalParams,
    pub request_interval_hours: f64,
    pub horizon_hours: f64,
    #[serde(default)]
    pub seed: u64,
}

/// Number of devices the reference distributions were set for.
const REFERENCE_DEVICES: usize = 10_000;

impl ScenarioConfig {
    /// 10 000 devices with time-to-go ~ U(0, 10) h and ratings
    /// ~ U(0, 1.5) kW, hourly requests ~ N(2, 0.8) MW over one day.
    pub fn reference() -> Self {
        Self {
            device_count: REFERENCE_DEVICES,
            ttg_hours: UniformRange {
                low: 0.0,
                high: 10.0,
            },
            power_kw: UniformRange {
                low: 0.0,
                high: 1.5,
            },
            request_mw: NormalParams { mean: 2.0, sd: 0.8 },
            request_interval_hours: 1.0,
            horizon_hours: 24.0,
            seed: 0,
        }
    }

    /// The reference scenario with `devices` devices and the request
    /// distribution scaled in proportion.
    pub fn reference_scaled(devices: usize) -> Self {
        let mut config = Self::reference();
        let factor = devices as f64 / REFERENCE_DEVICES as f64;
        config.device_count = devices;
        config.request_mw.mean *= factor;
        config.request_mw.sd *= factor;
        config
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(FlexError::InvalidConfig(msg));
        if self.device_count == 0 {
            return bad("device_count must be at least 1".into());
        }
        for (name, r) in [("ttg_hours", self.ttg_hours), ("power_kw", self.power_kw)] {
            if !(r.low.is_finite() && r.high.is_finite() && r.low >= 0.0 && r.low <= r.high) {
                return bad(format!(
                    "{name} needs 0 <= low <= high, got [{}, {}]",
                    r.low, r.high
                ));
            }
        }
        if self.power_kw.high <= 0.0 {
            return bad("power_kw.high must be positive".into());
        }
        let n = self.request_mw;
        if !(n.mean.is_finite() && n.sd.is_finite() && n.sd >= 0.0) {
            return bad(format!(
                "request_mw needs finite mean and sd >= 0, got {n:?}"
            ));
        }
        for (name, v) in [
            ("request_interval_hours", self.request_interval_hours),
            ("horizon_hours", self.horizon_hours),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        Ok(())
    }

    /// Number of request values: one per interval, the last one possibly
    /// shortened by the horizon.
    pub fn request_count(&self) -> usize {
        let ratio = self.horizon_hours / self.request_interval_hours;
        let rounded = ratio.round();
        if (ratio - rounded).abs() <= 1e-9 * ratio.max(1.0) {
            rounded as usize
        } else {
            ratio.ceil() as usize
        }
    }
}

/// Independent generator for one `(seed, stream)` pair.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream used for the fleet of a generated scenario; request traces use
/// streams `1..`.
pub const FLEET_STREAM: u64 = 0;

fn uniform(rng: &mut impl Rng, range: UniformRange) -> f64 {
    if range.low == range.high {
        range.low
    } else {
        rng.random_range(range.low..range.high)
    }
}

/// Draws a fleet. Zero power draws are redrawn since ratings must be
/// positive.
pub fn sample_fleet(config: &ScenarioConfig, rng: &mut impl Rng) -> Result<FleetState> {
    config.validate()?;
    let devices = (0..config.device_count)
        .map(|i| {
            let ttg = uniform(rng, config.ttg_hours) * HOUR;
            let mut p = uniform(rng, config.power_kw);
            while p <= 0.0 {
                p = uniform(rng, config.power_kw);
            }
            let p = p * KW;
            Device::new(format!("dev{i:05}"), p, p * ttg)
        })
        .collect::<Result<Vec<_>>>()?;
    FleetState::new(devices)
}

/// Draws a stepwise request trace; negative normal draws are clamped to 0.
///
/// Values are `mean + sd * z` with a standard normal `z`, so traces drawn
/// from the same stream are pointwise monotone in the mean.
pub fn sample_requests(config: &ScenarioConfig, rng: &mut impl Rng) -> Result<StepSignal> {
    config.validate()?;
    let interval = config.request_interval_hours * HOUR;
    let horizon = config.horizon_hours * HOUR;
    let count = config.request_count();
    let pieces: Vec<(f64, f64)> = (0..count)
        .map(|k| {
            let start = k as f64 * interval;
            let end = if k + 1 == count {
                horizon
            } else {
                ((k + 1) as f64 * interval).min(horizon)
            };
            let z: f64 = rng.sample(StandardNormal);
            let value = (config.request_mw.mean + config.request_mw.sd * z).max(0.0) * MW;
            (end - start, value)
        })
        .collect();
    StepSignal::from_segments(&pieces)
}

/// Fleet from stream 0 and the first request trace (stream 1).
pub fn generate_scenario(config: &ScenarioConfig) -> Result<(FleetState, StepSignal)> {
    config.validate()?;
    let fleet = sample_fleet(config, &mut substream(config.seed, FLEET_STREAM))?;
    let signal = sample_requests(config, &mut substream(config.seed, 1))?;
    Ok((fleet, signal))
}
