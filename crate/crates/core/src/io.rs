//! Fleet, signal, curve and trajectory file formats.
//!
//! Fleet and signal files are CSV with a `#units` directive naming the units
//! of every column; other `#` lines are comments.
//!
//! ```text
//! #units power=kW energy=kWh
//! id,p_max,energy
//! a1,4,108
//! a2,18,36
//! ```
//!
//! ```text
//! #units power=kW time=h
//! t_start,value
//! 0,10
//! 2,4
//! 3,
//! ```
//!
//! The last signal row carries only a time: the horizon.

use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

use crate::dispatch::Trajectory;
use crate::epcurve::EPCurve;
use crate::error::FlexError;
use crate::model::{Device, FleetState, StepSignal};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] FlexError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn parse_err(line: u64, message: impl Into<String>) -> FormatError {
    FormatError::Parse {
        line,
        message: message.into(),
    }
}

macro_rules! unit_enum {
    ($name:ident { $($variant:ident = $label:literal => $factor:expr),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            /// Multiplier from this unit to the SI unit.
            pub fn factor(self) -> f64 {
                match self {
                    $($name::$variant => $factor),+
                }
            }

            pub fn label(self) -> &'static str {
                match self {
                    $($name::$variant => $label),+
                }
            }

            pub fn to_si(self, x: f64) -> f64 {
                x * self.factor()
            }

            pub fn from_si(self, x: f64) -> f64 {
                x / self.factor()
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($label => Ok($name::$variant),)+
                    other => Err(format!(
                        "unknown {} unit `{other}` (expected one of: {})",
                        stringify!($name),
                        [$($label),+].join(", ")
                    )),
                }
            }
        }
    };
}

unit_enum!(PowerUnit {
    W = "W" => 1.0,
    KW = "kW" => 1e3,
    MW = "MW" => 1e6,
});

unit_enum!(EnergyUnit {
    J = "J" => 1.0,
    KWh = "kWh" => 3.6e6,
    MWh = "MWh" => 3.6e9,
});

unit_enum!(TimeUnit {
    S = "s" => 1.0,
    Min = "min" => 60.0,
    H = "h" => 3600.0,
});

/// Units declared by a fleet file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FleetUnits {
    pub power: PowerUnit,
    pub energy: EnergyUnit,
}

impl Default for FleetUnits {
    fn default() -> Self {
        Self {
            power: PowerUnit::KW,
            energy: EnergyUnit::KWh,
        }
    }
}

/// Units declared by a signal file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SignalUnits {
    pub power: PowerUnit,
    pub time: TimeUnit,
}

impl Default for SignalUnits {
    fn default() -> Self {
        Self {
            power: PowerUnit::KW,
            time: TimeUnit::H,
        }
    }
}

/// Reads `key=value` pairs from the `#units` line.
fn units_directive(text: &str) -> Result<(u64, Vec<(String, String)>), FormatError> {
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx as u64 + 1;
        let trimmed = line.trim();
        if let Some(rest) = trimmed.strip_prefix("#units") {
            let mut pairs = Vec::new();
            for token in rest.split_whitespace() {
                let (k, v) = token.split_once('=').ok_or_else(|| {
                    parse_err(
                        line_no,
                        format!("expected key=unit in units directive, got `{token}`"),
                    )
                })?;
                pairs.push((k.to_string(), v.to_string()));
            }
            return Ok((line_no, pairs));
        }
        if !trimmed.is_empty() && !trimmed.starts_with('#') {
            break;
        }
    }
    Err(parse_err(1, "missing `#units` directive before the data"))
}

fn unit_value<U: FromStr<Err = String>>(
    pairs: &[(String, String)],
    key: &str,
    line: u64,
) -> Result<U, FormatError> {
    let (_, v) = pairs
        .iter()
        .find(|(k, _)| k == key)
        .ok_or_else(|| parse_err(line, format!("units directive lacks `{key}=`")))?;
    v.parse().map_err(|e: String| parse_err(line, e))
}

fn reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .has_headers(true)
        .from_reader(text.as_bytes())
}

fn check_headers(rdr: &mut csv::Reader<&[u8]>, expected: &[&str]) -> Result<(), FormatError> {
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(csv_line(&e), e.to_string()))?
        .clone();
    let got: Vec<&str> = headers.iter().collect();
    if got != expected {
        let line = headers.position().map_or(1, |p| p.line());
        return Err(parse_err(
            line,
            format!(
                "expected header `{}`, got `{}`",
                expected.join(","),
                got.join(",")
            ),
        ));
    }
    Ok(())
}

fn csv_line(e: &csv::Error) -> u64 {
    e.position().map_or(0, |p| p.line())
}

fn number(field: &str, line: u64, what: &str) -> Result<f64, FormatError> {
    let x: f64 = field
        .parse()
        .map_err(|_| parse_err(line, format!("{what} `{field}` is not a number")))?;
    if !x.is_finite() {
        return Err(parse_err(line, format!("{what} `{field}` is not finite")));
    }
    Ok(x)
}

/// Parses a fleet file into SI devices, returning the declared units too.
pub fn parse_fleet(text: &str, tolerance: f64) -> Result<(FleetState, FleetUnits), FormatError> {
    let (units_line, pairs) = units_directive(text)?;
    let units = FleetUnits {
        power: unit_value(&pairs, "power", units_line)?,
        energy: unit_value(&pairs, "energy", units_line)?,
    };
    let mut rdr = reader(text);
    check_headers(&mut rdr, &["id", "p_max", "energy"])?;
    let mut devices = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| parse_err(csv_line(&e), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 3 {
            return Err(parse_err(
                line,
                format!("expected 3 fields, got {}", record.len()),
            ));
        }
        let p = units.power.to_si(number(&record[1], line, "p_max")?);
        let e = units.energy.to_si(number(&record[2], line, "energy")?);
        let device =
            Device::new(&record[0], p, e).map_err(|err| parse_err(line, err.to_string()))?;
        devices.push(device);
    }
    if devices.is_empty() {
        return Err(FormatError::Model(FlexError::EmptyFleet));
    }
    Ok((FleetState::with_tolerance(devices, tolerance)?, units))
}

/// Writes a fleet file; values are printed with round-trip precision.
pub fn write_fleet(fleet: &FleetState, units: FleetUnits) -> String {
    let mut out = format!(
        "#units power={} energy={}\nid,p_max,energy\n",
        units.power.label(),
        units.energy.label()
    );
    for d in fleet.devices() {
        let _ = writeln!(
            out,
            "{},{},{}",
            d.id(),
            units.power.from_si(d.p_max()),
            units.energy.from_si(d.energy())
        );
    }
    out
}

/// Parses a signal file into an SI step signal.
pub fn parse_signal(text: &str) -> Result<(StepSignal, SignalUnits), FormatError> {
    let (units_line, pairs) = units_directive(text)?;
    let units = SignalUnits {
        power: unit_value(&pairs, "power", units_line)?,
        time: unit_value(&pairs, "time", units_line)?,
    };
    let mut rdr = reader(text);
    check_headers(&mut rdr, &["t_start", "value"])?;
    let mut rows: Vec<(u64, f64, Option<f64>)> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| parse_err(csv_line(&e), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.is_empty() || record.len() > 2 {
            return Err(parse_err(
                line,
                format!("expected 2 fields, got {}", record.len()),
            ));
        }
        let t = number(&record[0], line, "t_start")?;
        let value = match record.get(1) {
            Some(v) if !v.is_empty() => Some(number(v, line, "value")?),
            _ => None,
        };
        if let Some((prev_line, prev_t, prev_v)) = rows.last() {
            if prev_v.is_none() {
                return Err(parse_err(
                    line,
                    format!("row after the horizon row on line {prev_line}"),
                ));
            }
            if t <= *prev_t {
                return Err(parse_err(line, "t_start must be strictly increasing"));
            }
        } else if t != 0.0 {
            return Err(parse_err(line, "the first row must start at t = 0"));
        }
        if let Some(v) = value {
            if v < 0.0 {
                return Err(parse_err(line, format!("negative power {v}")));
            }
        }
        rows.push((line, t, value));
    }
    let Some(&(last_line, horizon, last_value)) = rows.last() else {
        return Err(FormatError::Invalid("signal file has no rows".into()));
    };
    if last_value.is_some() {
        return Err(parse_err(
            last_line,
            "the last row must be the horizon (a time with an empty value)",
        ));
    }
    let data = &rows[..rows.len() - 1];
    let horizon = units.time.to_si(horizon);
    let starts = data.iter().map(|r| units.time.to_si(r.1)).collect();
    let values = data
        .iter()
        .map(|r| units.power.to_si(r.2.expect("data rows carry values")))
        .collect();
    Ok((StepSignal::new(starts, values, horizon)?, units))
}

pub fn write_signal(signal: &StepSignal, units: SignalUnits) -> String {
    let mut out = format!(
        "#units power={} time={}\nt_start,value\n",
        units.power.label(),
        units.time.label()
    );
    for s in signal.segments() {
        let _ = writeln!(
            out,
            "{},{}",
            fmt_num(units.time.from_si(s.start)),
            fmt_num(units.power.from_si(s.value))
        );
    }
    let _ = writeln!(out, "{},", fmt_num(units.time.from_si(signal.horizon())));
    out
}

/// Formats a number with at most 12 significant digits and no trailing
/// zeros, so conversion noise like `143.99999999999997` prints as `144`.
/// Output never depends on the locale.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let rounded: f64 = format!("{x:.11e}").parse().unwrap_or(x);
    let rounded = if rounded == 0.0 { 0.0 } else { rounded };
    format!("{rounded}")
}

/// Curve breakpoints as `p,E` CSV in the given units.
pub fn write_curve_csv(curve: &EPCurve, power: PowerUnit, energy: EnergyUnit) -> String {
    let mut out = String::from("p,E\n");
    for (p, e) in curve.breakpoints() {
        let _ = writeln!(
            out,
            "{},{}",
            fmt_num(power.from_si(p)),
            fmt_num(energy.from_si(e))
        );
    }
    out
}

/// Trajectory as `t,available_power,delivered,deficit` CSV, one row per
/// event plus a final row at the end time.
pub fn write_trajectory_csv(traj: &Trajectory, units: SignalUnits) -> String {
    let mut out = String::from("t,available_power,delivered,deficit\n");
    let p = |x: f64| fmt_num(units.power.from_si(x));
    for s in &traj.segments {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            fmt_num(units.time.from_si(s.start)),
            p(s.available),
            p(s.delivered),
            p(s.deficit)
        );
    }
    let _ = writeln!(
        out,
        "{},{},0,0",
        fmt_num(units.time.from_si(traj.end_time())),
        p(crate::dispatch::max_available_power(&traj.final_state))
    );
    out
}

/// Parses a scenario configuration (TOML).
pub fn parse_scenario(text: &str) -> Result<crate::scenario::ScenarioConfig, FormatError> {
    let config: crate::scenario::ScenarioConfig =
        toml::from_str(text).map_err(|e| FormatError::Invalid(format!("scenario file: {e}")))?;
    config.validate()?;
    Ok(config)
}

/// Static SVG plot of E-p curves in the given units.
pub fn render_svg(curves: &[(&str, &EPCurve)], power: PowerUnit, energy: EnergyUnit) -> String {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const PAD: f64 = 50.0;
    const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
    let max_p = curves
        .iter()
        .map(|(_, c)| c.p_intercept())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let max_e = curves
        .iter()
        .map(|(_, c)| c.e_intercept())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let x = |p: f64| PAD + p / max_p * (W - 2.0 * PAD);
    let y = |e: f64| H - PAD - e / max_e * (H - 2.0 * PAD);
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    );
    let _ = writeln!(
        out,
        "<path d=\"M{PAD} {PAD} L{PAD} {b} L{r} {b}\" stroke=\"black\" fill=\"none\"/>",
        b = H - PAD,
        r = W - PAD
    );
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" font-size=\"12\">p [{}] (max {})</text>",
        W / 2.0 - 40.0,
        H - 15.0,
        power.label(),
        fmt_num(power.from_si(max_p))
    );
    let _ = writeln!(
        out,
        "<text x=\"10\" y=\"{}\" font-size=\"12\">E [{}] (max {})</text>",
        PAD - 15.0,
        energy.label(),
        fmt_num(energy.from_si(max_e))
    );
    for (k, (label, curve)) in curves.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let points: Vec<String> = curve
            .breakpoints()
            .iter()
            .map(|&(p, e)| format!("{:.2},{:.2}", x(p), y(e)))
            .collect();
        let _ = writeln!(
            out,
            "<polyline points=\"{}\" stroke=\"{color}\" stroke-width=\"2\" fill=\"none\"/>",
            points.join(" ")
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{color}\">{label}</text>",
            W - PAD - 120.0,
            PAD + 16.0 * k as f64
        );
    }
    out.push_str("</svg>\n");
    out
}
