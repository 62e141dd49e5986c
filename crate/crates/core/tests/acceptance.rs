//! Acceptance checks, one verdict line per criterion.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use flexcap::dispatch::{simulate, Policy};
use flexcap::epcurve::{
    capacity_curve, clustered_capacity_lower_bound, ep_transform, flexibility_gap, is_feasible,
};
use flexcap::oracle::{
    brute_force_feasible, cross_validate, flow_feasible, random_permutation, small_fleet,
    small_signal, CrossValidationOptions,
};
use flexcap::scenario::{generate_scenario, substream, ScenarioConfig};
use flexcap::services::{
    compare_fleets, max_feasible_truncation, max_pulse, time_to_failure, Relation,
};
use flexcap::{EPCurve, FleetState, StepSignal};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const KW: f64 = 1e3;
const KWH: f64 = 3.6e6;
const H: f64 = 3600.0;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn config_a() -> FleetState {
    FleetState::from_ratings(&[(4.0 * KW, 108.0 * KWH), (18.0 * KW, 36.0 * KWH)]).unwrap()
}

fn config_b() -> FleetState {
    FleetState::from_ratings(&[(13.0 * KW, 104.0 * KWH)]).unwrap()
}

fn config_c() -> FleetState {
    FleetState::from_ratings(&[(8.0 * KW, 90.0 * KWH), (14.0 * KW, 54.0 * KWH)]).unwrap()
}

fn rel_close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs())
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn breakpoints_match(curve: &EPCurve, expected: &[(f64, f64)], rel: f64) -> Result<(), String> {
    let got = curve.breakpoints();
    let same = got.len() == expected.len()
        && got.iter().zip(expected).all(|(&(p, e), &(xp, xe))| {
            let p_ok = if xp == 0.0 {
                p == 0.0
            } else {
                rel_close(p, xp, rel)
            };
            let e_ok = if xe == 0.0 {
                e == 0.0
            } else {
                rel_close(e, xe, rel)
            };
            p_ok && e_ok
        });
    ensure(same, || {
        format!("breakpoints {got:?}, expected {expected:?}")
    })
}

fn kw_kwh(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    points.iter().map(|&(p, e)| (p * KW, e * KWH)).collect()
}

fn criterion_1() -> Outcome {
    let run = || {
        let (a, b, c) = (config_a(), config_b(), config_c());
        (
            compare_fleets(&c, &a),
            compare_fleets(&a, &b),
            capacity_curve(&a),
            capacity_curve(&c),
        )
    };
    let mut times: Vec<Duration> = (0..101)
        .map(|_| {
            let start = Instant::now();
            std::hint::black_box(run());
            start.elapsed()
        })
        .collect();
    times.sort();
    let median = times[times.len() / 2];
    let (ca, ab, cap_a, cap_c) = run();
    ensure(ca.relation == Relation::ADominates, || {
        format!("C vs A gave {ca:?}")
    })?;
    ensure(ab.relation == Relation::Incomparable, || {
        format!("A vs B gave {ab:?}")
    })?;
    breakpoints_match(
        &cap_a,
        &kw_kwh(&[(0.0, 144.0), (4.0, 36.0), (22.0, 0.0)]),
        1e-12,
    )?;
    breakpoints_match(
        &cap_c,
        &kw_kwh(&[(0.0, 144.0), (8.0, 54.0), (22.0, 0.0)]),
        1e-12,
    )?;
    ensure(median < Duration::from_millis(1), || {
        format!("median runtime {median:?}")
    })?;
    Ok(format!(
        "C dominates A, A incomparable to B (witness {:.0} kW), breakpoints exact, median {median:?}",
        ab.witness_p.unwrap_or(f64::NAN) / KW
    ))
}

/// Fleet with 1-20 devices over several orders of magnitude, some empty.
fn wide_fleet(rng: &mut ChaCha8Rng) -> FleetState {
    let n = rng.random_range(1..=20usize);
    let ratings: Vec<(f64, f64)> = (0..n)
        .map(|_| {
            let p = 10f64.powf(rng.random_range(1.0..6.0));
            let ttg = if rng.random_bool(0.1) {
                0.0
            } else {
                10f64.powf(rng.random_range(0.0..5.0))
            };
            (p, p * ttg)
        })
        .collect();
    FleetState::from_ratings(&ratings).unwrap()
}

fn wide_signal(rng: &mut ChaCha8Rng) -> StepSignal {
    let m = rng.random_range(1..=30usize);
    let pieces: Vec<(f64, f64)> = (0..m)
        .map(|_| {
            let d = 10f64.powf(rng.random_range(0.0..4.0));
            let v = if rng.random_bool(0.1) {
                0.0
            } else {
                10f64.powf(rng.random_range(1.0..6.0))
            };
            (d, v)
        })
        .collect();
    StepSignal::from_segments(&pieces).unwrap()
}

fn criterion_2() -> Outcome {
    for i in 0..1000u64 {
        let mut rng = substream(2, i);
        let fleet = wide_fleet(&mut rng);
        let cap = capacity_curve(&fleet);
        let nonempty: f64 = fleet
            .devices()
            .iter()
            .filter(|d| !d.is_empty())
            .map(|d| d.p_max())
            .sum();
        ensure(
            rel_close(cap.e_intercept(), fleet.total_energy(), 1e-9),
            || {
                format!(
                    "fleet {i}: E(0) {} vs {}",
                    cap.e_intercept(),
                    fleet.total_energy()
                )
            },
        )?;
        ensure(
            rel_close(cap.p_intercept(), nonempty, 1e-9)
                || (nonempty == 0.0 && cap.p_intercept() == 0.0),
            || format!("fleet {i}: p-intercept {} vs {nonempty}", cap.p_intercept()),
        )?;
        let signal = wide_signal(&mut rng);
        let curve = ep_transform(&signal);
        ensure(
            rel_close(curve.e_intercept(), signal.energy(), 1e-9)
                || (signal.energy() == 0.0 && curve.e_intercept() == 0.0),
            || {
                format!(
                    "signal {i}: E(0) {} vs {}",
                    curve.e_intercept(),
                    signal.energy()
                )
            },
        )?;
        ensure(curve.p_intercept() == signal.peak(), || {
            format!(
                "signal {i}: p-intercept {} vs {}",
                curve.p_intercept(),
                signal.peak()
            )
        })?;
    }
    Ok("1000 fleets and 1000 signals, intercepts within 1e-9".into())
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let report = cross_validate(
        small_fleet,
        small_signal,
        1000,
        3,
        CrossValidationOptions::default(),
    )
    .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure(report.feasible > 0 && report.infeasible > 0, || {
        format!("one-sided sample: {report:?}")
    })?;
    ensure(elapsed < Duration::from_secs(30), || {
        format!("runtime {elapsed:?}")
    })?;
    Ok(format!(
        "{} cases: {} feasible, {} infeasible, {} in tolerance band; 0 disagreements \
         ({} stepped, {} flow), {elapsed:.2?}",
        report.cases,
        report.feasible,
        report.infeasible,
        report.boundary,
        report.agreements,
        report.flow_agreements
    ))
}

fn criterion_4() -> Outcome {
    let mut checked = 0;
    let mut case = 0u64;
    while checked < 500 {
        let mut rng = substream(4, case);
        case += 1;
        let fleet = small_fleet(&mut rng);
        let signal = small_signal(&mut rng, &fleet);
        if !is_feasible(&signal, &fleet) {
            continue;
        }
        let (cuts, order) = random_permutation(&signal, &mut rng);
        let permuted = signal
            .permute_segments(&cuts, &order)
            .map_err(|e| e.to_string())?;
        ensure(is_feasible(&permuted, &fleet), || {
            format!("case {case}: permutation {order:?} made the signal infeasible")
        })?;
        let a = simulate(&fleet, &signal, Policy::Optimal).final_state;
        let b = simulate(&fleet, &permuted, Policy::Optimal).final_state;
        for (i, (x, y)) in a.devices().iter().zip(b.devices()).enumerate() {
            let scale = fleet.devices()[i].energy().max(1.0);
            ensure((x.energy() - y.energy()).abs() <= 1e-9 * scale, || {
                format!(
                    "case {case}: device {i} ends at {} vs {}",
                    x.energy(),
                    y.energy()
                )
            })?;
        }
        checked += 1;
    }
    Ok(format!(
        "500 feasible signals (from {case} draws), verdicts and final states unchanged"
    ))
}

fn criterion_5() -> Outcome {
    let mut curves = 0;
    let mut check = |curve: &EPCurve, what: &str| -> Result<(), String> {
        curves += 1;
        curve.check_shape().map_err(|e| format!("{what}: {e}"))
    };
    for i in 0..1000u64 {
        let mut rng = substream(5, i);
        let fleet = wide_fleet(&mut rng);
        let signal = wide_signal(&mut rng);
        check(&capacity_curve(&fleet), &format!("capacity {i}"))?;
        check(&ep_transform(&signal), &format!("transform {i}"))?;
        let h = signal.horizon();
        let cut = signal
            .truncate(0.25 * h, 0.75 * h)
            .map_err(|e| e.to_string())?;
        check(&ep_transform(&cut), &format!("truncation {i}"))?;
        let k = rng.random_range(1..=4usize);
        let clustered = clustered_capacity_lower_bound(&fleet, k).map_err(|e| e.to_string())?;
        check(&clustered, &format!("clustered {i}"))?;
        let small = small_fleet(&mut rng);
        let s = small_signal(&mut rng, &small);
        check(&ep_transform(&s), &format!("small transform {i}"))?;
        let traj = simulate(&small, &s, Policy::Optimal);
        check(
            &capacity_curve(&traj.final_state),
            &format!("final capacity {i}"),
        )?;
    }
    Ok(format!("{curves} curves, slopes and values monotone"))
}

fn criterion_6() -> Outcome {
    let mut failed = 0;
    let mut worst_ulps: f64 = 0.0;
    for seed in 0..200u64 {
        let config = ScenarioConfig::reference_scaled(100).with_seed(seed);
        let (fleet, signal) = generate_scenario(&config).map_err(|e| e.to_string())?;
        let op = time_to_failure(&fleet, &signal, Policy::Optimal);
        let lpf = time_to_failure(&fleet, &signal, Policy::LowestPowerFirst);
        let pop = time_to_failure(&fleet, &signal, Policy::ProportionOfPower);
        ensure(op >= lpf && op >= pop, || {
            format!("seed {seed}: op {op} lpf {lpf} pop {pop}")
        })?;
        let truncation = max_feasible_truncation(&signal, &fleet);
        if !op.is_finite() {
            ensure(truncation == signal.horizon(), || {
                format!("seed {seed}: {truncation}")
            })?;
            ensure(is_feasible(&signal, &fleet), || {
                format!("seed {seed}: curve test disagrees")
            })?;
            continue;
        }
        failed += 1;
        ensure(truncation == op, || {
            format!("seed {seed}: {truncation} vs {op}")
        })?;
        // Independent route: bisection on the exact curve test.
        let exact = fleet.regrouped(0.0).map_err(|e| e.to_string())?;
        let (mut lo, mut hi) = (0.0f64, signal.horizon());
        loop {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let head = signal.truncate(0.0, mid).map_err(|e| e.to_string())?;
            if is_feasible(&head, &exact) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let events = simulate(&fleet, &signal, Policy::Optimal).event_times.len() as f64;
        let ulp = f64::EPSILON * signal.horizon();
        let ulps = (lo - op).abs() / (ulp * events);
        worst_ulps = worst_ulps.max(ulps);
        ensure(ulps <= 1.0, || {
            format!("seed {seed}: bisection {lo} vs simulated {op} ({ulps:.2} ulp per event)")
        })?;
    }
    Ok(format!(
        "200 scenarios ({failed} with a failure): OP outlasts LPF and PoP, truncation bisection within {worst_ulps:.2} ulp per event"
    ))
}

fn criterion_7() -> Outcome {
    let a = config_a();
    let m = max_pulse(&a, 5.0 * H).map_err(|e| e.to_string())?;
    ensure(m == 11.2 * KW, || format!("max_pulse(A, 5 h) = {m}"))?;
    for i in 0..200u64 {
        let mut rng = substream(7, i);
        let fleet = if i % 2 == 0 {
            wide_fleet(&mut rng)
        } else {
            small_fleet(&mut rng)
        };
        if fleet.total_energy() == 0.0 {
            continue;
        }
        let d = 10f64.powf(rng.random_range(1.0..5.0));
        let m = max_pulse(&fleet, d).map_err(|e| e.to_string())?;
        let at = StepSignal::constant(m, d).map_err(|e| e.to_string())?;
        let over = StepSignal::constant(m * (1.0 + 1e-6), d).map_err(|e| e.to_string())?;
        ensure(is_feasible(&at, &fleet), || {
            format!("fleet {i}: M* = {m} infeasible")
        })?;
        ensure(!is_feasible(&over, &fleet), || {
            format!("fleet {i}: M*(1+1e-6) feasible")
        })?;
        ensure(flow_feasible(&at, &fleet).feasible, || {
            format!("fleet {i}: flow oracle rejects M* = {m}")
        })?;
        ensure(!flow_feasible(&over, &fleet).feasible, || {
            format!("fleet {i}: flow oracle accepts M*(1+1e-6)")
        })?;
    }
    Ok("max_pulse(A, 5 h) = 11.2 kW exactly; sandwich holds on 200 fleets (curve test and flow oracle)".into())
}

fn criterion_8() -> Outcome {
    let unit = KWH * KW;
    let ga = flexibility_gap(&config_a()) / unit;
    let gc = flexibility_gap(&config_c()) / unit;
    let single = FleetState::from_ratings(&[(5.0 * KW, 10.0 * KWH)]).map_err(|e| e.to_string())?;
    let gs = flexibility_gap(&single);
    ensure(rel_close(ga, 900.0, 1e-12), || format!("gap(A) = {ga}"))?;
    ensure(rel_close(gc, 414.0, 1e-12), || format!("gap(C) = {gc}"))?;
    ensure(gs == 0.0, || format!("gap(single) = {gs}"))?;
    Ok(format!(
        "gap(A) = {ga} kWh*kW, gap(C) = {gc} kWh*kW, gap(single) = 0"
    ))
}

fn criterion_9() -> Outcome {
    let a = config_a();
    let signal = StepSignal::constant(22.0 * KW, 3.0 * H).map_err(|e| e.to_string())?;
    let traj = simulate(&a, &signal, Policy::Optimal);
    let expected = [0.0, 2.0 * H, 3.0 * H];
    ensure(traj.event_times == expected, || {
        format!("event times {:?}, expected {expected:?}", traj.event_times)
    })?;
    ensure(traj.time_to_failure == 2.0 * H, || {
        format!("TTF {}", traj.time_to_failure)
    })?;
    let oracle = brute_force_feasible(&signal, &a, 1.0).map_err(|e| e.to_string())?;
    let exact = traj.delivered_energy();
    ensure(rel_close(oracle.delivered, exact, 1e-6), || {
        format!(
            "delivered {} (oracle) vs {exact} (simulator)",
            oracle.delivered
        )
    })?;
    Ok(format!(
        "events {:?} s, delivered {} kWh (oracle {} kWh)",
        traj.event_times,
        exact / KWH,
        oracle.delivered / KWH
    ))
}

fn criterion_10() -> Outcome {
    let dir = std::env::temp_dir().join(format!("flexcap-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let scenario = dir.join("scenario.toml");
    std::fs::write(
        &scenario,
        "device_count = 100\n\
         ttg_hours = { low = 0.0, high = 10.0 }\n\
         power_kw = { low = 0.0, high = 1.5 }\n\
         request_mw = { mean = 0.015, sd = 0.008 }\n\
         request_interval_hours = 1.0\n\
         horizon_hours = 24.0\n",
    )
    .map_err(|e| e.to_string())?;
    let run = |workers: &str| -> Result<Vec<u8>, String> {
        let out = Command::new(env!("CARGO_BIN_EXE_flexcap"))
            .args(["montecarlo", "--scenario"])
            .arg(&scenario)
            .args(["--samples", "500", "--seed", "2024", "--workers", workers])
            .output()
            .map_err(|e| e.to_string())?;
        ensure(out.status.success(), || {
            String::from_utf8_lossy(&out.stderr).into_owned()
        })?;
        Ok(out.stdout)
    };
    let reference = run("1")?;
    for workers in ["1", "2", "3", "8"] {
        let again = run(workers)?;
        ensure(again == reference, || {
            format!("output differs with {workers} workers")
        })?;
    }
    let _ = std::fs::remove_dir_all(&dir);
    let summary = String::from_utf8_lossy(&reference)
        .lines()
        .filter(|l| l.starts_with("probability") || l.starts_with("feasible"))
        .collect::<Vec<_>>()
        .join(" ");
    Ok(format!(
        "identical output over 5 runs with 1, 2, 3 and 8 workers ({summary})"
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("fleet comparison and capacity breakpoints", criterion_1),
        ("axis intercepts", criterion_2),
        ("curve test agrees with brute-force oracles", criterion_3),
        ("segment permutation invariance", criterion_4),
        ("curve shape", criterion_5),
        ("policy ordering and failure time", criterion_6),
        ("pulse sizing", criterion_7),
        ("flexibility gap", criterion_8),
        ("event-driven exactness", criterion_9),
        ("Monte Carlo determinism", criterion_10),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome =
            std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".to_string()));
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS {name}: {detail}", i + 1),
            Err(detail) => {
                failures += 1;
                println!("criterion {:>2} FAIL {name}: {detail}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failures} failed",
        criteria.len() - failures
    );
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
