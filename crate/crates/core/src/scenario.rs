//! Scenario files (TOML): vehicle, parameters, target plan, attacks and
//! the expectations a run is checked against.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::AttackEvent;
use crate::estimator::AttitudeMode;
use crate::math::{EulerAngles, Vec3};
use crate::params::{ParamError, ParamRegistry, ParamSource};
use crate::plant::{NoiseConfig, PlantParams};
use crate::safety::FailsafeStage;
use crate::sched::{default_tasks, Scheduler, TaskKind, TaskSpec};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parse error{}: {message}", .line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Parse { line: Option<usize>, message: String },
    #[error("invalid {field}: {message}")]
    Validation { field: String, message: String },
}

impl ScenarioError {
    fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        ScenarioError::Validation { field: field.into(), message: message.into() }
    }
}

/// Navigation mode of the target plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NavMode {
    /// Hold or fly to an externally commanded position.
    #[default]
    Guided,
    /// Follow an uploaded mission.
    Auto,
    /// Stick inputs map to velocity and yaw-rate commands.
    Pilot,
}

impl NavMode {
    pub fn feed_forward(self) -> bool {
        matches!(self, NavMode::Guided | NavMode::Auto)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialState {
    pub position: Vec3,
    pub velocity: Vec3,
    pub attitude: EulerAngles,
    pub armed: bool,
}

impl Default for InitialState {
    fn default() -> Self {
        InitialState {
            position: Vec3::new(0.0, 0.0, -5.0),
            velocity: Vec3::ZERO,
            attitude: EulerAngles::new(0.0, 0.0, 0.0),
            armed: true,
        }
    }
}

/// Task rates in Hz; absent entries use the default pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RateConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimator: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub position: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub velocity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attitude: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mixer: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub safety: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub logging: Option<f64>,
}

impl RateConfig {
    pub fn specs(&self, base_rate: f64) -> Vec<TaskSpec> {
        default_tasks(base_rate)
            .into_iter()
            .map(|mut s| {
                let over = match s.kind {
                    TaskKind::Estimator => self.estimator,
                    TaskKind::Position => self.position,
                    TaskKind::Velocity => self.velocity,
                    TaskKind::Attitude => self.attitude,
                    TaskKind::Rate => self.rate,
                    TaskKind::Mixer => self.mixer,
                    TaskKind::Safety => self.safety,
                    TaskKind::Logging => self.logging,
                };
                if let Some(r) = over {
                    s.rate_hz = r;
                }
                s
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorOptions {
    pub attitude: AttitudeMode,
}

/// Flight-mode flags consumed by the crash detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SafetyFlags {
    pub standby: bool,
    pub forced_flight: bool,
    pub angle_stabilized: bool,
    pub flipping: bool,
    pub autorotation: bool,
}

impl Default for SafetyFlags {
    fn default() -> Self {
        SafetyFlags { standby: false, forced_flight: false, angle_stabilized: true, flipping: false, autorotation: false }
    }
}

/// A timed setpoint. Guided and auto entries need a position, pilot
/// entries a velocity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetPoint {
    pub time: f64,
    #[serde(default)]
    pub mode: NavMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<Vec3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity: Option<Vec3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yaw: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yaw_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Expectations {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crash: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diverged: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failsafe_stage: Option<FailsafeStage>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_final_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_rms_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_lean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_gate_rejections: Option<u64>,
}

impl Expectations {
    pub fn is_empty(&self) -> bool {
        *self == Expectations::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// Simulated seconds.
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub plant: PlantParams,
    #[serde(default)]
    pub initial: InitialState,
    /// Parameter overrides applied before the run.
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub rates: RateConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub estimator: EstimatorOptions,
    #[serde(default)]
    pub flags: SafetyFlags,
    #[serde(default)]
    pub signing_required: bool,
    /// Allows attacker parameter writes outside the nominal bounds.
    #[serde(default)]
    pub attacker_bound_override: bool,
    #[serde(default)]
    pub targets: Vec<TargetPoint>,
    #[serde(default)]
    pub attacks: Vec<AttackEvent>,
    #[serde(default)]
    pub expect: Expectations,
}

impl Scenario {
    /// A hover at the default start point with everything else default.
    pub fn new(name: &str, duration: f64) -> Self {
        Scenario {
            name: name.to_string(),
            duration,
            seed: 0,
            plant: PlantParams::default(),
            initial: InitialState::default(),
            params: BTreeMap::new(),
            rates: RateConfig::default(),
            noise: NoiseConfig::default(),
            estimator: EstimatorOptions::default(),
            flags: SafetyFlags::default(),
            signing_required: false,
            attacker_bound_override: false,
            targets: Vec::new(),
            attacks: Vec::new(),
            expect: Expectations::default(),
        }
    }

    pub fn from_toml_str(src: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(src).map_err(|e| ScenarioError::Parse {
            line: e.span().map(|sp| src[..sp.start.min(src.len())].matches('\n').count() + 1),
            message: e.message().to_string(),
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let src = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.to_path_buf(), source })?;
        Scenario::from_toml_str(&src)
    }

    /// Default registry with the scenario overrides applied.
    pub fn registry(&self) -> Result<ParamRegistry, ScenarioError> {
        let mut reg = ParamRegistry::with_defaults();
        reg.set_attacker_bound_override(self.attacker_bound_override);
        for (name, &value) in &self.params {
            reg.set(name, value, ParamSource::Gcs, 0.0).map_err(|e| {
                let message = match &e {
                    ParamError::OutOfRange { value, min, max, .. } => {
                        format!("{value} outside bounds [{min}, {max}]")
                    }
                    other => other.to_string(),
                };
                ScenarioError::invalid(format!("params.{name}"), message)
            })?;
        }
        Ok(reg)
    }

    pub fn base_rate(&self) -> Result<f64, ScenarioError> {
        Ok(self.registry()?.value("SCHED_LOOP_RATE"))
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.name.trim().is_empty() {
            return Err(ScenarioError::invalid("name", "must not be empty"));
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(ScenarioError::invalid("duration", "must be positive"));
        }
        self.plant.validate().map_err(|e| ScenarioError::invalid("plant", e.to_string()))?;
        self.noise.validate().map_err(|m| ScenarioError::invalid("noise", m))?;
        let i = &self.initial;
        let att = [i.attitude.roll, i.attitude.pitch, i.attitude.yaw];
        if !(i.position.is_finite() && i.velocity.is_finite() && att.iter().all(|a| a.is_finite())) {
            return Err(ScenarioError::invalid("initial", "must be finite"));
        }
        let base = self.base_rate()?;
        Scheduler::new(base, &self.rates.specs(base)).map_err(|e| ScenarioError::invalid("rates", e.to_string()))?;

        for (k, t) in self.targets.iter().enumerate() {
            let field = format!("targets[{k}]");
            if !(t.time.is_finite() && t.time >= 0.0) {
                return Err(ScenarioError::invalid(field, "time must be >= 0"));
            }
            let finite = t.position.is_none_or(|p| p.is_finite())
                && t.velocity.is_none_or(|v| v.is_finite())
                && t.yaw.is_none_or(f64::is_finite)
                && t.yaw_rate.is_none_or(f64::is_finite);
            if !finite {
                return Err(ScenarioError::invalid(field, "values must be finite"));
            }
            match t.mode {
                NavMode::Guided | NavMode::Auto if t.position.is_none() => {
                    return Err(ScenarioError::invalid(field, "guided/auto targets need a position"));
                }
                NavMode::Pilot if t.velocity.is_none() => {
                    return Err(ScenarioError::invalid(field, "pilot targets need a velocity"));
                }
                _ => {}
            }
        }
        if self.targets.windows(2).any(|w| w[1].time <= w[0].time) {
            return Err(ScenarioError::invalid("targets", "waypoints not increasing"));
        }
        for (k, a) in self.attacks.iter().enumerate() {
            a.validate().map_err(|e| ScenarioError::invalid(format!("attacks[{k}]"), e.to_string()))?;
        }
        Ok(())
    }

    /// Resolved configuration for the telemetry header, without the seed.
    pub fn config_echo(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("scenario serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("seed");
            if let Ok(reg) = self.registry() {
                obj.insert("resolved_params".into(), serde_json::to_value(reg.values()).expect("map serializes"));
            }
        }
        v
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    Scenario::load(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::AttackAction;

    #[test]
    fn minimal_file_gets_defaults() {
        let s = Scenario::from_toml_str("name = \"m\"\nduration = 5").unwrap();
        assert_eq!(s, Scenario::new("m", 5.0));
    }

    #[test]
    fn unknown_keys_rejected() {
        let e = Scenario::from_toml_str("name = \"m\"\nduration = 5\nbogus = 1").unwrap_err();
        match e {
            ScenarioError::Parse { line, message } => {
                assert_eq!(line, Some(3));
                assert!(message.contains("bogus"), "{message}");
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn waypoints_must_increase() {
        let src = r#"
name = "w"
duration = 10
[[targets]]
time = 5
position = [0, 0, -5]
[[targets]]
time = 3
position = [1, 0, -5]
"#;
        let e = Scenario::from_toml_str(src).unwrap_err();
        assert!(e.to_string().contains("waypoints not increasing"), "{e}");
    }

    #[test]
    fn loop_rate_override_out_of_bounds() {
        let src = "name = \"r\"\nduration = 1\n[params]\nSCHED_LOOP_RATE = 2000";
        let e = Scenario::from_toml_str(src).unwrap_err();
        let msg = e.to_string();
        assert!(matches!(e, ScenarioError::Validation { .. }));
        assert!(msg.contains("[50, 1000]"), "{msg}");
    }

    #[test]
    fn unknown_param_rejected() {
        let e = Scenario::from_toml_str("name = \"r\"\nduration = 1\n[params]\nNOPE = 1").unwrap_err();
        assert!(e.to_string().contains("params.NOPE"));
    }

    #[test]
    fn attacks_parse() {
        let src = r#"
name = "a"
duration = 20
[[attacks]]
time = 10
spoof = { target = "gps_pos", shape = "bias", bias = [0, 5, 0], start = 10 }
[[attacks]]
time = 12
stall = { duration = 2.5 }
"#;
        let s = Scenario::from_toml_str(src).unwrap();
        assert_eq!(s.attacks.len(), 2);
        assert!(matches!(s.attacks[1].action, AttackAction::Stall { duration } if duration == 2.5));
    }

    #[test]
    fn pilot_target_needs_velocity() {
        let src = "name = \"p\"\nduration = 2\n[[targets]]\ntime = 0\nmode = \"pilot\"";
        assert!(Scenario::from_toml_str(src).is_err());
    }

    #[test]
    fn echo_excludes_seed() {
        let mut a = Scenario::new("e", 1.0);
        let mut b = a.clone();
        a.seed = 1;
        b.seed = 2;
        assert_eq!(a.config_echo(), b.config_echo());
        assert!(a.config_echo().get("seed").is_none());
    }
}
