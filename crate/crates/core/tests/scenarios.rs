//! Behaviour of the shipped scenario files and of whole runs.

use std::path::PathBuf;

use rustfft::{num_complex::Complex, FftPlanner};

use quadsec_core::engine::run_scenario;
use quadsec_core::telemetry::{events, parse_lines, ticks, Event, Record};
use quadsec_core::{RunReport, Scenario};

fn scenario(name: &str) -> Scenario {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.toml"));
    Scenario::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn records(lines: &[String]) -> Vec<Record> {
    parse_lines(lines.iter().map(String::as_str)).unwrap()
}

#[test]
fn report_replays_from_telemetry() {
    for name in ["hover_noisy", "gps_spoof_gated", "stall_disarm"] {
        let out = run_scenario(&scenario(name)).unwrap();
        let replayed = RunReport::from_lines(out.lines.iter().map(String::as_str)).unwrap();
        assert_eq!(replayed, out.report, "{name}");

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        std::fs::write(&path, out.telemetry()).unwrap();
        assert_eq!(RunReport::from_path(&path).unwrap(), out.report, "{name} from file");
    }
}

#[test]
fn same_seed_is_bit_identical_and_seeds_differ() {
    let s = scenario("hover_noisy");
    let a = run_scenario(&s).unwrap().lines;
    let b = run_scenario(&s).unwrap().lines;
    assert_eq!(a, b);

    let mut other = s.clone();
    other.seed = s.seed + 1;
    let c = run_scenario(&other).unwrap().lines;
    assert_ne!(a[1..], c[1..]);
    // headers differ only in the seed
    let (Record::Header { seed: sa, config: ca }, Record::Header { seed: sc, config: cc }) =
        (&records(&a[..1])[0], &records(&c[..1])[0])
    else {
        panic!("first line is not a header");
    };
    assert_eq!((*sa, *sc), (s.seed, s.seed + 1));
    assert_eq!(ca, cc);
}

#[test]
fn every_attack_is_logged_once() {
    for name in ["mission", "gps_replay", "param_tamper", "limit_shift", "torque_bias", "rc_override"] {
        let s = scenario(name);
        let out = run_scenario(&s).unwrap();
        let recs = records(&out.lines);
        let mut seen = vec![0usize; s.attacks.len()];
        for e in events(&recs) {
            if let Event::Attack { index, .. } = e.event {
                seen[index] += 1;
            }
        }
        assert!(seen.iter().all(|&n| n == 1), "{name}: {seen:?}");
    }
}

#[test]
fn torque_bias_shows_up_at_its_frequency() {
    let out = run_scenario(&scenario("torque_bias")).unwrap();
    let recs = records(&out.lines);
    let window: Vec<(f64, f64)> =
        ticks(&recs).filter(|t| t.time >= 6.0 && t.time < 10.0).map(|t| (t.time, t.truth.rates.x)).collect();
    let dt = window[1].0 - window[0].0;
    let n = window.len();
    let mean = window.iter().map(|w| w.1).sum::<f64>() / n as f64;
    let mut buf: Vec<Complex<f64>> = window.iter().map(|w| Complex::new(w.1 - mean, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let (peak, _) = buf[1..n / 2]
        .iter()
        .enumerate()
        .map(|(i, c)| (i + 1, c.norm()))
        .fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let f = peak as f64 / (n as f64 * dt);
    assert!((f - 2.0).abs() <= 1.0 / (n as f64 * dt), "peak at {f} Hz");
}

#[test]
fn link_loss_returns_home() {
    let out = run_scenario(&scenario("link_loss")).unwrap();
    let recs = records(&out.lines);
    let lost: Vec<f64> =
        events(&recs).filter(|e| matches!(e.event, Event::LinkLoss)).map(|e| e.time).collect();
    assert_eq!(lost.len(), 1);
    assert!(lost[0] > 2.0);
    let last = ticks(&recs).last().unwrap();
    assert!(last.truth.position.norm_xy() < 0.5, "{:?}", last.truth.position);
    assert!(!out.report.crash_confirmed);
}

#[test]
fn mission_reaches_last_waypoint() {
    let out = run_scenario(&scenario("mission")).unwrap();
    let recs = records(&out.lines);
    let last = ticks(&recs).last().unwrap();
    let p = last.truth.position;
    assert!((p.x - 0.0).abs() < 0.5 && (p.y - 10.0).abs() < 0.5 && (p.z + 5.0).abs() < 0.5, "{p:?}");
    let accepted = events(&recs).filter(|e| matches!(e.event, Event::Command { accepted: true, .. })).count();
    assert_eq!(accepted, 5);
}

#[test]
fn forged_rc_override_moves_the_vehicle() {
    let out = run_scenario(&scenario("rc_override")).unwrap();
    let recs = records(&out.lines);
    let during = ticks(&recs).filter(|t| t.time > 1.5 && t.time < 4.0).map(|t| t.truth.velocity.norm_xy()).fold(0.0, f64::max);
    let end = ticks(&recs).last().unwrap().truth.velocity.norm_xy();
    assert!(during > 1.0, "peak speed {during}");
    assert!(end < 0.5, "still moving at {end} m/s");
}

#[test]
fn divergence_keeps_partial_log() {
    let out = run_scenario(&scenario("diverge")).unwrap();
    assert!(out.report.diverged);
    let recs = records(&out.lines);
    assert!(matches!(recs[0], Record::Header { .. }));
    assert!(ticks(&recs).count() >= 1);
    assert!(ticks(&recs).all(|t| t.truth.position.is_finite()));
    let Record::Event(last) = recs.last().unwrap() else { panic!("log does not end with an event") };
    assert!(matches!(last.event, Event::Diverged { .. }));
}
