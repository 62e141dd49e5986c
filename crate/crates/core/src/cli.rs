//! Command-line front end.
//!
//! Exit codes: 0 for success or a feasible verdict, 1 for an infeasible
//! verdict (or a simulated failure), 2 for any error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use crate::dispatch::{simulate_with, Policy, SimulationOptions};
use crate::epcurve::{
    capacity_curve, clustered_capacity_lower_bound, curve_gap, ep_transform, feasibility, EPCurve,
};
use crate::io::{
    fmt_num, parse_fleet, parse_scenario, parse_signal, render_svg, write_curve_csv, write_signal,
    write_trajectory_csv, EnergyUnit, FleetUnits, PowerUnit, SignalUnits, TimeUnit,
};
use crate::model::{FleetState, StepSignal, DEFAULT_TOLERANCE};
use crate::scenario::{sample_fleet, substream, ScenarioConfig, FLEET_STREAM};
use crate::services::{
    compare_fleets, feasibility_probability, max_pulse, max_ramp, wilson_interval, Relation,
};

pub const TOLERANCE_ENV: &str = "FLEXCAP_TOLERANCE";

pub const EXIT_OK: i32 = 0;
pub const EXIT_INFEASIBLE: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "flexcap",
    version,
    about = "Capacity curves, feasibility and dispatch for fleets of energy storage devices"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Capacity curve of a fleet with its intercepts and flexibility gap.
    Capacity {
        fleet: PathBuf,
        /// Replace the curve by its clustered lower bound with this many bands.
        #[arg(long)]
        clusters: Option<usize>,
        /// Write the breakpoints as `p,E` CSV.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write an SVG plot of the curve.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Decide whether a fleet can meet a request signal.
    Feasible {
        fleet: PathBuf,
        signal: PathBuf,
        /// Write an SVG plot of the capacity and request curves.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Simulate a dispatch policy on a request signal.
    Simulate {
        fleet: PathBuf,
        signal: PathBuf,
        /// op, lpf or pop.
        #[arg(long, default_value = "op")]
        policy: Policy,
        /// Write the trajectory as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Stop at the first deficit.
        #[arg(long)]
        halt_on_failure: bool,
    },
    /// Largest constant power the fleet can hold for a duration.
    Pulse {
        fleet: PathBuf,
        #[arg(long)]
        duration: f64,
        /// Unit of --duration: s, min or h.
        #[arg(long, default_value = "h")]
        time_unit: TimeUnit,
    },
    /// Longest linear ramp from zero the fleet can follow.
    Ramp {
        fleet: PathBuf,
        /// Slope in the fleet file's power unit per --time-unit.
        #[arg(long)]
        gradient: f64,
        #[arg(long, default_value = "h")]
        time_unit: TimeUnit,
    },
    /// Compare the feasible sets of two fleets.
    Compare { fleet_a: PathBuf, fleet_b: PathBuf },
    /// Cut a signal to a window and shift it to start at zero.
    Truncate {
        signal: PathBuf,
        /// Window start in the signal file's time unit.
        #[arg(long)]
        from: f64,
        /// Window end in the signal file's time unit.
        #[arg(long)]
        to: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo probability that random request traces are feasible.
    Montecarlo {
        /// Scenario file (TOML) with the fleet and request distributions.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Fixed fleet; without it the fleet is drawn from the scenario.
        #[arg(long)]
        fleet: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (default: all cores). Results do not depend on it.
        #[arg(long)]
        workers: Option<usize>,
    },
}

/// Runs the tool on `args` (including the program name), writing normal
/// output to `out` and diagnostics to `err`, and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let target: &mut dyn Write = if e.use_stderr() { err } else { out };
            let _ = write!(target, "{}", e.render());
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            EXIT_ERROR
        }
    }
}

fn tolerance() -> anyhow::Result<f64> {
    match std::env::var(TOLERANCE_ENV) {
        Ok(raw) => {
            let tol: f64 = raw
                .trim()
                .parse()
                .with_context(|| format!("{TOLERANCE_ENV}=`{raw}` is not a number"))?;
            if !(tol.is_finite() && tol >= 0.0) {
                bail!("{TOLERANCE_ENV} must be a finite nonnegative number, got {raw}");
            }
            Ok(tol)
        }
        Err(_) => Ok(DEFAULT_TOLERANCE),
    }
}

fn read(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> anyhow::Result<()> {
    std::fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn load_fleet(path: &Path, tol: f64) -> anyhow::Result<(FleetState, FleetUnits)> {
    parse_fleet(&read(path)?, tol).with_context(|| path.display().to_string())
}

fn load_signal(path: &Path) -> anyhow::Result<(StepSignal, SignalUnits)> {
    parse_signal(&read(path)?).with_context(|| path.display().to_string())
}

fn breakpoint_list(curve: &EPCurve, power: PowerUnit, energy: EnergyUnit) -> String {
    curve
        .breakpoints()
        .iter()
        .map(|&(p, e)| {
            format!(
                "({},{})",
                fmt_num(power.from_si(p)),
                fmt_num(energy.from_si(e))
            )
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn execute(command: Command, out: &mut dyn Write) -> anyhow::Result<i32> {
    let tol = tolerance()?;
    match command {
        Command::Capacity {
            fleet,
            clusters,
            out: csv_path,
            svg,
        } => {
            let (fleet, units) = load_fleet(&fleet, tol)?;
            let curve = match clusters {
                Some(k) => clustered_capacity_lower_bound(&fleet, k)?,
                None => capacity_curve(&fleet),
            };
            let (pu, eu) = (units.power, units.energy);
            writeln!(
                out,
                "e_intercept={} {}",
                fmt_num(eu.from_si(curve.e_intercept())),
                eu.label()
            )?;
            writeln!(
                out,
                "p_intercept={} {}",
                fmt_num(pu.from_si(curve.p_intercept())),
                pu.label()
            )?;
            writeln!(
                out,
                "flexibility_gap={} {}*{}",
                fmt_num(pu.from_si(eu.from_si(curve_gap(&curve)))),
                eu.label(),
                pu.label()
            )?;
            writeln!(out, "breakpoints={}", breakpoint_list(&curve, pu, eu))?;
            if let Some(path) = csv_path {
                write_file(&path, &write_curve_csv(&curve, pu, eu))?;
            }
            if let Some(path) = svg {
                write_file(&path, &render_svg(&[("capacity", &curve)], pu, eu))?;
            }
            Ok(EXIT_OK)
        }
        Command::Feasible { fleet, signal, svg } => {
            let (fleet, units) = load_fleet(&fleet, tol)?;
            let (signal, _) = load_signal(&signal)?;
            let verdict = feasibility(&signal, &fleet);
            let (pu, eu) = (units.power, units.energy);
            if let Some(path) = svg {
                let capacity = capacity_curve(&fleet);
                let request = ep_transform(&signal);
                let plot = render_svg(&[("capacity", &capacity), ("request", &request)], pu, eu);
                write_file(&path, &plot)?;
            }
            if verdict.holds {
                writeln!(
                    out,
                    "FEASIBLE margin={} {}",
                    fmt_num(eu.from_si(verdict.margin)),
                    eu.label()
                )?;
                Ok(EXIT_OK)
            } else {
                let witness = verdict.witness.unwrap_or(0.0);
                writeln!(
                    out,
                    "INFEASIBLE witness_p={} {}",
                    fmt_num(pu.from_si(witness)),
                    pu.label()
                )?;
                Ok(EXIT_INFEASIBLE)
            }
        }
        Command::Simulate {
            fleet,
            signal,
            policy,
            out: csv_path,
            halt_on_failure,
        } => {
            let (fleet, fleet_units) = load_fleet(&fleet, tol)?;
            let (signal, units) = load_signal(&signal)?;
            let options = SimulationOptions {
                halt_on_failure,
                record_states: false,
            };
            let traj = simulate_with(&fleet, &signal, policy, options);
            if let Some(path) = csv_path {
                write_file(&path, &write_trajectory_csv(&traj, units))?;
            }
            if traj.failed() {
                writeln!(
                    out,
                    "TTF={}{}",
                    fmt_num(units.time.from_si(traj.time_to_failure)),
                    units.time.label()
                )?;
            } else {
                writeln!(out, "TTF=inf")?;
            }
            let eu = fleet_units.energy;
            writeln!(
                out,
                "delivered={} {} unserved={} {}",
                fmt_num(eu.from_si(traj.delivered_energy())),
                eu.label(),
                fmt_num(eu.from_si(traj.unserved_energy())),
                eu.label()
            )?;
            Ok(if traj.failed() {
                EXIT_INFEASIBLE
            } else {
                EXIT_OK
            })
        }
        Command::Pulse {
            fleet,
            duration,
            time_unit,
        } => {
            let (fleet, units) = load_fleet(&fleet, tol)?;
            let m = max_pulse(&fleet, time_unit.to_si(duration))?;
            writeln!(
                out,
                "max_pulse={} {}",
                fmt_num(units.power.from_si(m)),
                units.power.label()
            )?;
            Ok(EXIT_OK)
        }
        Command::Ramp {
            fleet,
            gradient,
            time_unit,
        } => {
            let (fleet, units) = load_fleet(&fleet, tol)?;
            let g = units.power.to_si(gradient) / time_unit.to_si(1.0);
            let t = max_ramp(&fleet, g)?;
            writeln!(
                out,
                "max_ramp_duration={} {} peak={} {}",
                fmt_num(time_unit.from_si(t)),
                time_unit.label(),
                fmt_num(units.power.from_si(g * t)),
                units.power.label()
            )?;
            Ok(EXIT_OK)
        }
        Command::Compare { fleet_a, fleet_b } => {
            let (a, units) = load_fleet(&fleet_a, tol)?;
            let (b, _) = load_fleet(&fleet_b, tol)?;
            let verdict = compare_fleets(&a, &b);
            let word = match verdict.relation {
                Relation::ADominates => "DOMINATES",
                Relation::BDominates => "DOMINATED",
                Relation::Equivalent => "EQUIVALENT",
                Relation::Incomparable => "INCOMPARABLE",
            };
            match verdict.witness_p {
                Some(p) => writeln!(
                    out,
                    "{word} witness_p={} {}",
                    fmt_num(units.power.from_si(p)),
                    units.power.label()
                )?,
                None => writeln!(out, "{word}")?,
            }
            Ok(EXIT_OK)
        }
        Command::Truncate {
            signal,
            from,
            to,
            out: path,
        } => {
            let (signal, units) = load_signal(&signal)?;
            let cut = signal.truncate(units.time.to_si(from), units.time.to_si(to))?;
            let text = write_signal(&cut, units);
            match path {
                Some(path) => write_file(&path, &text)?,
                None => out.write_all(text.as_bytes())?,
            }
            Ok(EXIT_OK)
        }
        Command::Montecarlo {
            scenario,
            fleet,
            samples,
            seed,
            workers,
        } => {
            let fleet = fleet.map(|path| load_fleet(&path, tol)).transpose()?;
            let mut config = match (&scenario, &fleet) {
                (Some(path), _) => {
                    parse_scenario(&read(path)?).with_context(|| path.display().to_string())?
                }
                (None, Some((f, _))) => ScenarioConfig::reference_scaled(f.len()),
                (None, None) => bail!("montecarlo needs --scenario, --fleet or both"),
            };
            if let Some(seed) = seed {
                config.seed = seed;
            }
            let fleet = match fleet {
                Some((f, _)) => f,
                None => sample_fleet(&config, &mut substream(config.seed, FLEET_STREAM))?
                    .regrouped(tol)?,
            };
            let mut pool = rayon::ThreadPoolBuilder::new();
            if let Some(w) = workers {
                if w == 0 {
                    bail!("--workers must be at least 1");
                }
                pool = pool.num_threads(w);
            }
            let pool = pool.build().context("cannot start worker pool")?;
            let estimate = pool.install(|| feasibility_probability(&fleet, &config, samples))?;
            let (center, half) = wilson_interval(estimate.feasible, estimate.samples);
            writeln!(out, "seed={}", config.seed)?;
            writeln!(out, "devices={}", fleet.len())?;
            writeln!(out, "samples={}", estimate.samples)?;
            writeln!(out, "feasible={}", estimate.feasible)?;
            writeln!(out, "probability={}", fmt_num(estimate.probability))?;
            writeln!(
                out,
                "wilson95=[{},{}]",
                fmt_num((center - half).max(0.0)),
                fmt_num((center + half).min(1.0))
            )?;
            Ok(EXIT_OK)
        }
    }
}
