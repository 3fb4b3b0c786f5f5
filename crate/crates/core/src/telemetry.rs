//! Line-delimited JSON telemetry and the run report derived from it.

use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::GateStats;
use crate::math::{EulerAngles, Vec3};
use crate::params::ParamSource;
use crate::safety::FailsafeStage;
use crate::scenario::NavMode;

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("telemetry io: {0}")]
    Io(#[from] std::io::Error),
    #[error("telemetry line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("telemetry has no header record")]
    MissingHeader,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSnapshot {
    pub position: Vec3,
    pub velocity: Vec3,
    pub attitude: EulerAngles,
    pub rates: Vec3,
    /// Tilt of the body z axis from vertical, rad.
    pub lean: f64,
    pub on_ground: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateSnapshot {
    pub position: Vec3,
    pub velocity: Vec3,
    pub attitude: EulerAngles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSnapshot {
    pub mode: NavMode,
    pub position: Vec3,
    pub velocity: Vec3,
    pub accel: Vec3,
    pub attitude: EulerAngles,
    pub rates: Vec3,
    pub throttle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetySnapshot {
    pub armed: bool,
    pub crash_counter: f64,
    pub crash_confirmed: bool,
    pub stage: FailsafeStage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub time: f64,
    pub truth: TruthSnapshot,
    pub estimate: EstimateSnapshot,
    pub targets: TargetSnapshot,
    /// Motor commands as sent by the controller, before the motors' own
    /// physical clamp.
    pub motors: [f64; 4],
    pub motor_limits: [f64; 2],
    pub saturated: [bool; 4],
    pub safety: SafetySnapshot,
    /// Cumulative gate decisions per axis (N, E, D).
    pub gate: [GateStats; 3],
    pub active_attacks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    Attack { index: usize, action: String, outcome: String },
    Command { command: String, source: ParamSource, accepted: bool, reason: Option<String> },
    ParamChange { name: String, old: f64, new: f64, source: ParamSource, widened: bool },
    GateReject { axis: usize, ratio: f64 },
    GateRecover { axis: usize },
    Failsafe { stage: FailsafeStage },
    Crash,
    LinkLoss,
    MotorClamp { motors: [f64; 4] },
    Tilt { tilt: f64 },
    ReplayUnderrun { needed: f64, available: f64 },
    Diverged { reason: String },
    Warning { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub time: f64,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Record {
    Header { seed: u64, config: serde_json::Value },
    Tick(TickRecord),
    Event(EventRecord),
}

impl Record {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("telemetry records always serialize")
    }
}

/// Position error below which a run counts as settled, m.
pub const SETTLE_BAND: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub index: usize,
    pub time: f64,
    pub action: String,
    pub outcome: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rms_position_error: f64,
    /// First time after which the position error stays inside the band.
    pub settling_time: Option<f64>,
    pub max_motor_command: f64,
    pub motor_clamp_events: usize,
    pub gate_rejections: u64,
    pub commands_accepted: usize,
    pub commands_rejected: usize,
    pub last_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub seed: u64,
    pub final_position_error: f64,
    pub final_estimate_error: f64,
    pub max_lean: f64,
    pub crash_confirmed: bool,
    pub failsafe_stage: FailsafeStage,
    pub attacks: Vec<AttackOutcome>,
    pub diverged: bool,
    pub metrics: Metrics,
}

impl RunReport {
    pub fn from_records(records: &[Record]) -> Result<RunReport, TelemetryError> {
        let (seed, config) = records
            .iter()
            .find_map(|r| match r {
                Record::Header { seed, config } => Some((*seed, config)),
                _ => None,
            })
            .ok_or(TelemetryError::MissingHeader)?;
        let name = config.get("name").and_then(|v| v.as_str()).unwrap_or_default().to_string();

        let mut sq_sum = 0.0;
        let mut n = 0usize;
        let mut max_lean: f64 = 0.0;
        let mut max_motor = f64::NEG_INFINITY;
        let mut stage = FailsafeStage::None;
        let mut crash = false;
        let mut settled_since: Option<f64> = None;
        let mut last_tick: Option<&TickRecord> = None;
        let mut attacks = Vec::new();
        let mut diverged = false;
        let mut clamps = 0;
        let (mut accepted, mut rejected) = (0, 0);

        for r in records {
            match r {
                Record::Header { .. } => {}
                Record::Tick(t) => {
                    let err = (t.truth.position - t.targets.position).norm();
                    sq_sum += err * err;
                    n += 1;
                    max_lean = max_lean.max(t.truth.lean);
                    for &m in &t.motors {
                        max_motor = max_motor.max(m);
                    }
                    stage = stage.max(t.safety.stage);
                    crash |= t.safety.crash_confirmed;
                    if err > SETTLE_BAND {
                        settled_since = None;
                    } else {
                        settled_since.get_or_insert(t.time);
                    }
                    last_tick = Some(t);
                }
                Record::Event(e) => match &e.event {
                    Event::Attack { index, action, outcome } => attacks.push(AttackOutcome {
                        index: *index,
                        time: e.time,
                        action: action.clone(),
                        outcome: outcome.clone(),
                    }),
                    Event::Command { accepted: true, .. } => accepted += 1,
                    Event::Command { accepted: false, .. } => rejected += 1,
                    Event::Failsafe { stage: s } => stage = stage.max(*s),
                    Event::Crash => crash = true,
                    Event::MotorClamp { .. } => clamps += 1,
                    Event::Diverged { .. } => diverged = true,
                    _ => {}
                },
            }
        }

        let (final_pos, final_est, gate_rej, last_time) = match last_tick {
            Some(t) => (
                (t.truth.position - t.targets.position).norm(),
                (t.estimate.position - t.truth.position).norm(),
                t.gate.iter().map(|g| g.rejected).sum(),
                t.time,
            ),
            None => (0.0, 0.0, 0, 0.0),
        };
        Ok(RunReport {
            name,
            seed,
            final_position_error: final_pos,
            final_estimate_error: final_est,
            max_lean,
            crash_confirmed: crash,
            failsafe_stage: stage,
            attacks,
            diverged,
            metrics: Metrics {
                rms_position_error: if n > 0 { (sq_sum / n as f64).sqrt() } else { 0.0 },
                settling_time: settled_since,
                max_motor_command: if max_motor.is_finite() { max_motor } else { 0.0 },
                motor_clamp_events: clamps,
                gate_rejections: gate_rej,
                commands_accepted: accepted,
                commands_rejected: rejected,
                last_time,
            },
        })
    }

    pub fn from_lines<'a, I: IntoIterator<Item = &'a str>>(lines: I) -> Result<RunReport, TelemetryError> {
        RunReport::from_records(&parse_lines(lines)?)
    }

    pub fn from_path(path: &Path) -> Result<RunReport, TelemetryError> {
        let f = std::fs::File::open(path)?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line).map_err(|source| TelemetryError::Parse { line: i + 1, source })?);
        }
        RunReport::from_records(&records)
    }
}

pub fn parse_lines<'a, I: IntoIterator<Item = &'a str>>(lines: I) -> Result<Vec<Record>, TelemetryError> {
    lines
        .into_iter()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|source| TelemetryError::Parse { line: i + 1, source }))
        .collect()
}

/// Tick records only.
pub fn ticks(records: &[Record]) -> impl Iterator<Item = &TickRecord> {
    records.iter().filter_map(|r| match r {
        Record::Tick(t) => Some(t),
        _ => None,
    })
}

/// Event records only.
pub fn events(records: &[Record]) -> impl Iterator<Item = &EventRecord> {
    records.iter().filter_map(|r| match r {
        Record::Event(e) => Some(e),
        _ => None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tick(time: f64, x: f64) -> Record {
        Record::Tick(TickRecord {
            time,
            truth: TruthSnapshot {
                position: Vec3::new(x, 0.0, -5.0),
                velocity: Vec3::ZERO,
                attitude: EulerAngles::new(0.0, 0.0, 0.0),
                rates: Vec3::ZERO,
                lean: 0.01 * time,
                on_ground: false,
            },
            estimate: EstimateSnapshot {
                position: Vec3::new(x, 0.0, -5.0),
                velocity: Vec3::ZERO,
                attitude: EulerAngles::new(0.0, 0.0, 0.0),
            },
            targets: TargetSnapshot {
                mode: NavMode::Guided,
                position: Vec3::new(0.0, 0.0, -5.0),
                velocity: Vec3::ZERO,
                accel: Vec3::ZERO,
                attitude: EulerAngles::new(0.0, 0.0, 0.0),
                rates: Vec3::ZERO,
                throttle: 0.49,
            },
            motors: [0.49; 4],
            motor_limits: [0.0, 1.0],
            saturated: [false; 4],
            safety: SafetySnapshot { armed: true, crash_counter: 0.0, crash_confirmed: false, stage: FailsafeStage::None },
            gate: [GateStats::default(); 3],
            active_attacks: 0,
        })
    }

    #[test]
    fn report_from_lines_roundtrip() {
        let recs = vec![
            Record::Header { seed: 7, config: serde_json::json!({"name": "t"}) },
            tick(0.0, 1.0),
            Record::Event(EventRecord { time: 0.05, event: Event::Failsafe { stage: FailsafeStage::DisarmedMinThrust } }),
            tick(0.1, 0.1),
            tick(0.2, 0.2),
        ];
        let lines: Vec<String> = recs.iter().map(Record::to_line).collect();
        let parsed = parse_lines(lines.iter().map(String::as_str)).unwrap();
        assert_eq!(parsed, recs);
        let r = RunReport::from_records(&parsed).unwrap();
        assert_eq!(r.name, "t");
        assert_eq!(r.failsafe_stage, FailsafeStage::DisarmedMinThrust);
        assert!((r.metrics.rms_position_error - ((1.0 + 0.01 + 0.04) / 3.0f64).sqrt()).abs() < 1e-12);
        assert_eq!(r.metrics.settling_time, Some(0.1));
        assert!((r.final_position_error - 0.2).abs() < 1e-12);
    }

    #[test]
    fn missing_header() {
        assert!(matches!(RunReport::from_records(&[tick(0.0, 0.0)]), Err(TelemetryError::MissingHeader)));
    }
}
