//! Runtime parameter registry.
//!
//! Every tunable gain, limit and threshold lives here under an
//! ArduPilot-style name. Writes go through [`ParamRegistry::set`] only, which
//! validates bounds and appends to a change log, so a registry can always be
//! reconstructed by replaying its log over the defaults.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Who issued a parameter write or bus command.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamSource {
    Pilot,
    Gcs,
    Attacker,
}

impl fmt::Display for ParamSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParamSource::Pilot => "pilot",
            ParamSource::Gcs => "gcs",
            ParamSource::Attacker => "attacker",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("{name} = {value} is outside bounds [{min}, {max}]")]
    OutOfRange { name: String, value: f64, min: f64, max: f64 },
    #[error("{name}: value must be finite")]
    NonFinite { name: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: f64,
    pub min: f64,
    pub max: f64,
    /// Whether a write takes effect immediately. Parameters with this unset
    /// (the loop rate) are only consumed at run start.
    pub mutable_in_flight: bool,
}

/// One accepted write.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamChange {
    pub time: f64,
    pub name: String,
    pub old: f64,
    pub new: f64,
    pub source: ParamSource,
    /// Bounds were widened to admit an out-of-range attacker write.
    #[serde(default)]
    pub widened: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamRegistry {
    params: BTreeMap<String, Param>,
    log: Vec<ParamChange>,
    attacker_bound_override: bool,
    revision: u64,
}

// name, default, min, max, mutable in flight
#[allow(clippy::approx_constant)]
const DEFAULTS: &[(&str, f64, f64, f64, bool)] = &[
    ("SCHED_LOOP_RATE", 400.0, 50.0, 1000.0, false),
    // body-rate loop
    ("ATC_RAT_RLL_P", 0.135, 0.0, 5.0, true),
    ("ATC_RAT_RLL_I", 0.135, 0.0, 5.0, true),
    ("ATC_RAT_RLL_D", 0.0036, 0.0, 0.5, true),
    ("ATC_RAT_RLL_FF", 0.0, 0.0, 1.0, true),
    ("ATC_RAT_RLL_IMAX", 0.5, 0.0, 1.0, true),
    ("ATC_RAT_PIT_P", 0.135, 0.0, 5.0, true),
    ("ATC_RAT_PIT_I", 0.135, 0.0, 5.0, true),
    ("ATC_RAT_PIT_D", 0.0036, 0.0, 0.5, true),
    ("ATC_RAT_PIT_FF", 0.0, 0.0, 1.0, true),
    ("ATC_RAT_PIT_IMAX", 0.5, 0.0, 1.0, true),
    ("ATC_RAT_YAW_P", 0.135, 0.0, 5.0, true),
    ("ATC_RAT_YAW_I", 0.135, 0.0, 5.0, true),
    ("ATC_RAT_YAW_D", 0.0036, 0.0, 0.5, true),
    ("ATC_RAT_YAW_FF", 0.0, 0.0, 1.0, true),
    ("ATC_RAT_YAW_IMAX", 0.5, 0.0, 1.0, true),
    // attitude loop and its limiters
    ("ATC_ANG_RLL_P", 4.5, 0.0, 20.0, true),
    ("ATC_ANG_PIT_P", 4.5, 0.0, 20.0, true),
    ("ATC_ANG_YAW_P", 4.5, 0.0, 20.0, true),
    ("ATC_RATE_RP_MAX", 3.5, 0.1, 20.0, true),
    ("ATC_RATE_Y_MAX", 2.0, 0.1, 20.0, true),
    ("ATC_SLEW_YAW", 1.0, 0.01, 10.0, true),
    ("ATC_ACCEL_MAX", 20.0, 0.1, 500.0, true),
    ("ATC_SQRT_THRESH", 0.5, 0.01, 3.14, true),
    ("ATC_SQRT_OMEGA", 0.501, 0.01, 50.0, true),
    ("ATC_SQRT_EPS", 0.001, 1e-6, 1.0, true),
    ("ANGLE_MAX", 0.5236, 0.05, 1.1, true),
    // horizontal position controller
    ("PSC_POSXY_P", 1.0, 0.0, 10.0, true),
    ("PSC_POSXY_I", 0.0, 0.0, 10.0, true),
    ("PSC_POSXY_D", 0.0, 0.0, 10.0, true),
    ("PSC_POSXY_IMAX", 2.0, 0.0, 20.0, true),
    ("PSC_VELXY_P", 2.0, 0.0, 20.0, true),
    ("PSC_VELXY_I", 1.0, 0.0, 20.0, true),
    ("PSC_VELXY_D", 0.0, 0.0, 5.0, true),
    ("PSC_VELXY_FF", 0.0, 0.0, 5.0, true),
    ("PSC_VELXY_IMAX", 2.0, 0.0, 20.0, true),
    ("PSC_SPEED_XY_MAX", 10.0, 0.1, 50.0, true),
    ("PSC_ACC_XY_MAX", 5.0, 0.1, 20.0, true),
    // vertical position controller
    ("PSC_POSZ_P", 1.0, 0.0, 10.0, true),
    ("PSC_POSZ_I", 0.0, 0.0, 10.0, true),
    ("PSC_POSZ_D", 0.0, 0.0, 10.0, true),
    ("PSC_POSZ_IMAX", 2.0, 0.0, 20.0, true),
    ("PSC_VELZ_P", 3.0, 0.0, 20.0, true),
    ("PSC_VELZ_I", 1.0, 0.0, 20.0, true),
    ("PSC_VELZ_D", 0.0, 0.0, 5.0, true),
    ("PSC_VELZ_FF", 0.0, 0.0, 5.0, true),
    ("PSC_VELZ_IMAX", 3.0, 0.0, 20.0, true),
    ("PSC_SPEED_Z_MAX", 5.0, 0.1, 20.0, true),
    ("PSC_ACC_Z_MAX", 10.0, 0.1, 30.0, true),
    ("PSC_ACCZ_P", 0.05, 0.0, 2.0, true),
    ("PSC_ACCZ_I", 0.1, 0.0, 5.0, true),
    ("PSC_ACCZ_D", 0.0, 0.0, 1.0, true),
    ("PSC_ACCZ_IMAX", 0.8, 0.0, 1.0, true),
    ("PSC_ACCZ_FILT", 20.0, 1.0, 200.0, true),
    // motors and mixer
    ("MOT_THST_HOVER", 0.4905, 0.05, 0.95, true),
    ("MOT_OUT_MIN", 0.0, 0.0, 0.5, true),
    ("MOT_OUT_MAX", 1.0, 0.5, 1.0, true),
    // estimator
    ("EKF_ACC_NOISE", 0.1, 0.001, 10.0, true),
    ("EKF_POS_NOISE", 0.5, 0.01, 100.0, true),
    ("EKF_ALT_NOISE", 0.5, 0.01, 100.0, true),
    ("EKF_GATE_ENABLE", 1.0, 0.0, 1.0, true),
    ("FS_EKF_THRESH", 25.0, 0.1, 1.0e6, true),
    ("AHRS_COMP_GAIN", 0.02, 0.0, 1.0, true),
    // failsafes
    ("FS_CRASH_CHECK", 1.0, 0.0, 1.0, true),
    ("FS_LOOP_CHECK", 1.0, 0.0, 1.0, true),
    ("FS_HB_TIMEOUT", 3.0, 0.5, 60.0, true),
    // pilot stick mapping and mission following
    ("PILOT_SPEED_XY", 5.0, 0.1, 20.0, true),
    ("PILOT_SPEED_Z", 2.5, 0.1, 10.0, true),
    ("PILOT_YAW_RATE", 1.0, 0.1, 10.0, true),
    ("WP_RADIUS", 1.0, 0.1, 100.0, true),
];

impl Default for ParamRegistry {
    fn default() -> Self {
        Self::with_defaults()
    }
}

impl ParamRegistry {
    pub fn with_defaults() -> Self {
        let params = DEFAULTS
            .iter()
            .map(|&(name, value, min, max, mutable_in_flight)| {
                (
                    name.to_string(),
                    Param { name: name.to_string(), value, min, max, mutable_in_flight },
                )
            })
            .collect();
        ParamRegistry { params, log: Vec::new(), attacker_bound_override: false, revision: 0 }
    }

    /// Lets attacker-sourced writes widen bounds instead of failing.
    pub fn set_attacker_bound_override(&mut self, enabled: bool) {
        self.attacker_bound_override = enabled;
    }

    pub fn attacker_bound_override(&self) -> bool {
        self.attacker_bound_override
    }

    pub fn param(&self, name: &str) -> Result<&Param, ParamError> {
        self.params.get(name).ok_or_else(|| ParamError::UnknownParam(name.to_string()))
    }

    pub fn get(&self, name: &str) -> Result<f64, ParamError> {
        self.param(name).map(|p| p.value)
    }

    /// Lookup for names compiled into the crate; panics on a typo.
    pub(crate) fn value(&self, name: &str) -> f64 {
        match self.params.get(name) {
            Some(p) => p.value,
            None => panic!("built-in parameter {name} missing from registry"),
        }
    }

    pub fn flag(&self, name: &str) -> bool {
        self.value(name) >= 0.5
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.values()
    }

    /// Incremented on every accepted write.
    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn change_log(&self) -> &[ParamChange] {
        &self.log
    }

    /// Validates and stores a value, appending the change to the log.
    pub fn set(
        &mut self,
        name: &str,
        value: f64,
        source: ParamSource,
        time: f64,
    ) -> Result<(), ParamError> {
        let override_ok = source == ParamSource::Attacker && self.attacker_bound_override;
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| ParamError::UnknownParam(name.to_string()))?;
        if !value.is_finite() {
            return Err(ParamError::NonFinite { name: name.to_string() });
        }
        let in_range = value >= p.min && value <= p.max;
        if !in_range && !override_ok {
            return Err(ParamError::OutOfRange {
                name: name.to_string(),
                value,
                min: p.min,
                max: p.max,
            });
        }
        if !in_range {
            p.min = p.min.min(value);
            p.max = p.max.max(value);
        }
        let old = p.value;
        p.value = value;
        self.log.push(ParamChange {
            time,
            name: name.to_string(),
            old,
            new: value,
            source,
            widened: !in_range,
        });
        self.revision += 1;
        Ok(())
    }

    /// Rebuilds a registry by applying `log` to the defaults.
    pub fn replay(log: &[ParamChange]) -> Result<Self, ParamError> {
        let mut reg = ParamRegistry::with_defaults();
        for c in log {
            if c.widened {
                let p = reg
                    .params
                    .get_mut(&c.name)
                    .ok_or_else(|| ParamError::UnknownParam(c.name.clone()))?;
                p.min = p.min.min(c.new);
                p.max = p.max.max(c.new);
            }
            reg.set(&c.name, c.new, c.source, c.time)?;
        }
        Ok(reg)
    }

    /// Current values only, for config echo.
    pub fn values(&self) -> BTreeMap<String, f64> {
        self.params.iter().map(|(k, p)| (k.clone(), p.value)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn loop_rate_default_and_in_range_set() {
        let mut reg = ParamRegistry::with_defaults();
        assert_eq!(reg.get("SCHED_LOOP_RATE").unwrap(), 400.0);
        reg.set("SCHED_LOOP_RATE", 400.0, ParamSource::Gcs, 0.0).unwrap();
        assert_eq!(reg.get("SCHED_LOOP_RATE").unwrap(), 400.0);
    }

    #[test]
    fn loop_rate_out_of_range() {
        let mut reg = ParamRegistry::with_defaults();
        let err = reg.set("SCHED_LOOP_RATE", 2000.0, ParamSource::Gcs, 0.0).unwrap_err();
        assert!(matches!(err, ParamError::OutOfRange { min, max, .. } if min == 50.0 && max == 1000.0));
        assert!(reg.change_log().is_empty());
    }

    #[test]
    fn attacker_write_is_attributed() {
        let mut reg = ParamRegistry::with_defaults();
        reg.set("ATC_RAT_PIT_I", 0.0, ParamSource::Attacker, 3.0).unwrap();
        let c = &reg.change_log()[0];
        assert_eq!(c.source, ParamSource::Attacker);
        assert_eq!((c.old, c.new, c.time), (0.135, 0.0, 3.0));
    }

    #[test]
    fn unknown_name_fails() {
        let mut reg = ParamRegistry::with_defaults();
        assert!(matches!(reg.get("NOPE"), Err(ParamError::UnknownParam(_))));
        assert!(reg.set("NOPE", 1.0, ParamSource::Gcs, 0.0).is_err());
    }

    #[test]
    fn attacker_override_widens_bounds() {
        let mut reg = ParamRegistry::with_defaults();
        assert!(reg.set("MOT_OUT_MAX", 1.5, ParamSource::Attacker, 0.0).is_err());
        reg.set_attacker_bound_override(true);
        // the override only applies to the attacker
        assert!(reg.set("MOT_OUT_MAX", 1.5, ParamSource::Gcs, 0.0).is_err());
        reg.set("MOT_OUT_MAX", 1.5, ParamSource::Attacker, 1.0).unwrap();
        let p = reg.param("MOT_OUT_MAX").unwrap();
        assert_eq!((p.value, p.max), (1.5, 1.5));
        assert!(reg.change_log()[0].widened);
        assert_eq!(ParamRegistry::replay(reg.change_log()).unwrap().params, reg.params);
    }

    proptest! {
        #[test]
        fn replay_reproduces_registry(writes in prop::collection::vec((0usize..DEFAULTS.len(), -2.0f64..2.0, 0u8..3), 0..60)) {
            let mut reg = ParamRegistry::with_defaults();
            let mut ok = 0usize;
            for (i, (idx, frac, src)) in writes.into_iter().enumerate() {
                let (name, def, min, max, _) = DEFAULTS[idx];
                let value = def + frac * (max - min);
                let source = [ParamSource::Pilot, ParamSource::Gcs, ParamSource::Attacker][src as usize];
                if reg.set(name, value, source, i as f64).is_ok() {
                    ok += 1;
                }
            }
            prop_assert_eq!(reg.change_log().len(), ok);
            let replayed = ParamRegistry::replay(reg.change_log()).unwrap();
            prop_assert_eq!(replayed.values(), reg.values());
        }
    }
}
