//! Manipulation events: command injection on the simulated bus, parameter
//! tampering, sensor spoofing and main-loop stalls.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::PidGains;
use crate::math::Vec3;
use crate::params::{ParamError, ParamRegistry, ParamSource};
use crate::plant::SensorFrame;
use crate::sched::StallWindow;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttackError {
    #[error("unsigned message rejected")]
    Unsigned,
    #[error("mission protocol violation: {0}")]
    ProtocolViolation(String),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("replay needs {needed:.3} s of history, only {available:.3} s recorded")]
    ReplayUnderrun { needed: f64, available: f64 },
    #[error("limits ({min}, {max}) are inverted after the shift")]
    InvertedLimits { min: f64, max: f64 },
    #[error("invalid attack: {0}")]
    Invalid(String),
}

/// Message payloads understood by the command bus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE", deny_unknown_fields)]
pub enum Command {
    Heartbeat,
    MissionCount { count: usize },
    MissionItem { seq: usize, position: Vec3 },
    MissionStart,
    SetHome { position: Vec3 },
    /// Sticks as PWM-style values, 1000..2000 with 1500 centered:
    /// roll, pitch, throttle, yaw.
    RcOverride { channels: [f64; 4] },
    DoReposition { position: Vec3 },
    ParamSet { name: String, value: f64 },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Heartbeat => "HEARTBEAT",
            Command::MissionCount { .. } => "MISSION_COUNT",
            Command::MissionItem { .. } => "MISSION_ITEM",
            Command::MissionStart => "MISSION_START",
            Command::SetHome { .. } => "SET_HOME",
            Command::RcOverride { .. } => "RC_OVERRIDE",
            Command::DoReposition { .. } => "DO_REPOSITION",
            Command::ParamSet { .. } => "PARAM_SET",
        }
    }

    fn validate(&self) -> Result<(), AttackError> {
        let finite = match self {
            Command::MissionItem { position, .. }
            | Command::SetHome { position }
            | Command::DoReposition { position } => position.is_finite(),
            Command::RcOverride { channels } => channels.iter().all(|c| c.is_finite()),
            Command::ParamSet { value, .. } => value.is_finite(),
            _ => true,
        };
        if finite {
            Ok(())
        } else {
            Err(AttackError::Invalid(format!("{} payload is not finite", self.name())))
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandMessage {
    pub command: Command,
    #[serde(default = "attacker")]
    pub source: ParamSource,
    #[serde(default)]
    pub signed: bool,
}

fn attacker() -> ParamSource {
    ParamSource::Attacker
}

impl CommandMessage {
    pub fn new(command: Command, source: ParamSource, signed: bool) -> Self {
        CommandMessage { command, source, signed }
    }
}

/// Normalized pilot sticks in [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RcInput {
    pub roll: f64,
    pub pitch: f64,
    pub throttle: f64,
    pub yaw: f64,
}

impl RcInput {
    pub fn from_channels(ch: [f64; 4]) -> Self {
        let n = |c: f64| ((c - 1500.0) / 500.0).clamp(-1.0, 1.0);
        RcInput { roll: n(ch[0]), pitch: n(ch[1]), throttle: n(ch[2]), yaw: n(ch[3]) }
    }
}

/// What an accepted message changed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "effect", rename_all = "snake_case")]
pub enum CommandEffect {
    LinkRefreshed,
    GuidedTarget { position: Vec3 },
    Home { position: Vec3 },
    Sticks { input: RcInput },
    MissionCountSet { count: usize },
    MissionItemStored { seq: usize },
    MissionStarted { waypoints: Vec<Vec3> },
    ParamChanged { name: String, old: f64, new: f64 },
}

#[derive(Debug, Clone, Default, PartialEq)]
struct MissionUpload {
    items: Vec<Option<Vec3>>,
}

/// Receiving side of the simulated command link.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CommandBus {
    pub signing_required: bool,
    pub last_heartbeat: Option<f64>,
    mission: Option<MissionUpload>,
}

impl CommandBus {
    pub fn new(signing_required: bool) -> Self {
        CommandBus { signing_required, ..CommandBus::default() }
    }

    /// Authenticates and routes one message. Parameter writes go through
    /// `params.set`, the same path as any other parameter change.
    pub fn inject_command(
        &mut self,
        msg: &CommandMessage,
        params: &mut ParamRegistry,
        time: f64,
    ) -> Result<CommandEffect, AttackError> {
        if self.signing_required && !msg.signed {
            return Err(AttackError::Unsigned);
        }
        msg.command.validate()?;
        match &msg.command {
            Command::Heartbeat => {
                self.last_heartbeat = Some(time);
                Ok(CommandEffect::LinkRefreshed)
            }
            Command::DoReposition { position } => Ok(CommandEffect::GuidedTarget { position: *position }),
            Command::SetHome { position } => Ok(CommandEffect::Home { position: *position }),
            Command::RcOverride { channels } => Ok(CommandEffect::Sticks { input: RcInput::from_channels(*channels) }),
            Command::MissionCount { count } => {
                if *count == 0 {
                    return Err(AttackError::ProtocolViolation("mission count must be positive".into()));
                }
                self.mission = Some(MissionUpload { items: vec![None; *count] });
                Ok(CommandEffect::MissionCountSet { count: *count })
            }
            Command::MissionItem { seq, position } => {
                let up = self
                    .mission
                    .as_mut()
                    .ok_or_else(|| AttackError::ProtocolViolation("mission item before count".into()))?;
                let n = up.items.len();
                let slot = up.items.get_mut(*seq).ok_or_else(|| {
                    AttackError::ProtocolViolation(format!("item index {seq} out of range for count {n}"))
                })?;
                *slot = Some(*position);
                Ok(CommandEffect::MissionItemStored { seq: *seq })
            }
            Command::MissionStart => {
                let up = self
                    .mission
                    .as_ref()
                    .ok_or_else(|| AttackError::ProtocolViolation("mission start without upload".into()))?;
                let received = up.items.iter().filter(|i| i.is_some()).count();
                if received < up.items.len() {
                    return Err(AttackError::ProtocolViolation(format!(
                        "mission start with {received} of {} items",
                        up.items.len()
                    )));
                }
                let waypoints = up.items.iter().map(|i| i.expect("checked above")).collect();
                Ok(CommandEffect::MissionStarted { waypoints })
            }
            Command::ParamSet { name, value } => {
                let old = params.get(name)?;
                params.set(name, *value, msg.source, time)?;
                Ok(CommandEffect::ParamChanged { name: name.clone(), old, new: *value })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpoofTarget {
    GpsPos,
    GpsAlt,
    Accel,
    Gyro,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpoofShape {
    Bias,
    Ramp,
    Replay,
}

/// One sensor manipulation. Scalar channels (`gps_alt`) use the first
/// vector component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpoofProfile {
    pub target: SpoofTarget,
    pub shape: SpoofShape,
    #[serde(default)]
    pub bias: Vec3,
    /// Units of the sensor per second.
    #[serde(default)]
    pub slope: Vec3,
    #[serde(default)]
    pub delay: f64,
    pub start: f64,
    /// Open-ended when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<f64>,
}

impl SpoofProfile {
    pub fn bias(target: SpoofTarget, bias: Vec3, start: f64, stop: Option<f64>) -> Self {
        SpoofProfile { target, shape: SpoofShape::Bias, bias, slope: Vec3::ZERO, delay: 0.0, start, stop }
    }

    pub fn ramp(target: SpoofTarget, slope: Vec3, start: f64, stop: Option<f64>) -> Self {
        SpoofProfile { target, shape: SpoofShape::Ramp, bias: Vec3::ZERO, slope, delay: 0.0, start, stop }
    }

    pub fn replay(target: SpoofTarget, delay: f64, start: f64, stop: Option<f64>) -> Self {
        SpoofProfile { target, shape: SpoofShape::Replay, bias: Vec3::ZERO, slope: Vec3::ZERO, delay, start, stop }
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        if !(self.start.is_finite() && self.start >= 0.0 && self.stop.is_none_or(|s| self.start < s)) {
            return Err(AttackError::Invalid("spoof start must be >= 0 and before stop".into()));
        }
        if !(self.bias.is_finite() && self.slope.is_finite()) {
            return Err(AttackError::Invalid("spoof vectors must be finite".into()));
        }
        if self.shape == SpoofShape::Replay && !(self.delay.is_finite() && self.delay > 0.0) {
            return Err(AttackError::Invalid("replay delay must be positive".into()));
        }
        Ok(())
    }

    pub fn active(&self, t: f64) -> bool {
        t >= self.start && self.stop.is_none_or(|s| t < s)
    }

    /// Additive offset at time `t` (zero for replay).
    pub fn offset(&self, t: f64) -> Vec3 {
        match self.shape {
            SpoofShape::Bias => self.bias,
            SpoofShape::Ramp => self.slope * (t - self.start),
            SpoofShape::Replay => Vec3::ZERO,
        }
    }
}

fn add_to_channel(f: &mut SensorFrame, target: SpoofTarget, v: Vec3) {
    match target {
        SpoofTarget::GpsPos => f.gps_pos += v,
        SpoofTarget::GpsAlt => f.gps_alt += v.x,
        SpoofTarget::Accel => f.accel += v,
        SpoofTarget::Gyro => f.gyro += v,
    }
}

fn copy_channel(dst: &mut SensorFrame, src: &SensorFrame, target: SpoofTarget) {
    match target {
        SpoofTarget::GpsPos => dst.gps_pos = src.gps_pos,
        SpoofTarget::GpsAlt => dst.gps_alt = src.gps_alt,
        SpoofTarget::Accel => dst.accel = src.accel,
        SpoofTarget::Gyro => dst.gyro = src.gyro,
    }
}

/// Applies spoof profiles to sensor frames, keeping the clean history
/// needed by replay profiles.
#[derive(Debug, Clone, Default)]
pub struct Spoofer {
    profiles: Vec<SpoofProfile>,
    history: VecDeque<SensorFrame>,
    horizon: f64,
}

impl Spoofer {
    pub fn new() -> Self {
        Spoofer::default()
    }

    pub fn add(&mut self, p: SpoofProfile) -> Result<(), AttackError> {
        p.validate()?;
        if p.shape == SpoofShape::Replay {
            self.horizon = self.horizon.max(p.delay);
        }
        self.profiles.push(p);
        Ok(())
    }

    pub fn profiles(&self) -> &[SpoofProfile] {
        &self.profiles
    }

    pub fn active_count(&self, t: f64) -> usize {
        self.profiles.iter().filter(|p| p.active(t)).count()
    }

    /// Records the clean frame, then returns the manipulated one. On
    /// replay underrun the affected channel is left untouched and the
    /// error is reported alongside.
    pub fn apply(&mut self, frame: &SensorFrame, t: f64) -> (SensorFrame, Option<AttackError>) {
        if self.horizon > 0.0 {
            self.history.push_back(frame.clone());
            while self.history.front().is_some_and(|f| f.time < t - self.horizon - 1.0) {
                self.history.pop_front();
            }
        }
        let mut out = frame.clone();
        let mut err = None;
        for p in self.profiles.iter().filter(|p| p.active(t)) {
            match p.shape {
                SpoofShape::Bias | SpoofShape::Ramp => add_to_channel(&mut out, p.target, p.offset(t)),
                SpoofShape::Replay => match self.recorded(t - p.delay) {
                    Some(old) => copy_channel(&mut out, old, p.target),
                    None => {
                        let available = self.history.front().map_or(0.0, |f| t - f.time);
                        err = Some(AttackError::ReplayUnderrun { needed: p.delay, available });
                    }
                },
            }
        }
        (out, err)
    }

    fn recorded(&self, t: f64) -> Option<&SensorFrame> {
        if self.history.front().is_none_or(|f| f.time > t + 1e-9) {
            return None;
        }
        // latest frame at or before t
        self.history.iter().rev().find(|f| f.time <= t + 1e-9)
    }
}

/// Stateless form: additive profiles only, no replay history.
pub fn spoof_sensor(frame: &SensorFrame, profiles: &[SpoofProfile], t: f64) -> Result<SensorFrame, AttackError> {
    let mut out = frame.clone();
    for p in profiles.iter().filter(|p| p.active(t)) {
        if p.shape == SpoofShape::Replay {
            return Err(AttackError::ReplayUnderrun { needed: p.delay, available: 0.0 });
        }
        add_to_channel(&mut out, p.target, p.offset(t));
    }
    Ok(out)
}

/// `(min + d_min, max + d_max)`, rejected if the result is inverted.
pub fn shift_limits(limits: (f64, f64), d_min: f64, d_max: f64) -> Result<(f64, f64), AttackError> {
    let (lo, hi) = (limits.0 + d_min, limits.1 + d_max);
    if lo >= hi || !lo.is_finite() || !hi.is_finite() {
        return Err(AttackError::InvertedLimits { min: lo, max: hi });
    }
    Ok((lo, hi))
}

pub fn apply_limit_shift(g: PidGains, d_min: f64, d_max: f64) -> Result<PidGains, AttackError> {
    let (lo, hi) = shift_limits((g.out_min, g.out_max), d_min, d_max)?;
    Ok(g.with_limits(lo, hi))
}

pub fn apply_torque_bias(tau: Vec3, tau_adv: Vec3) -> Vec3 {
    tau + tau_adv
}

pub fn induce_stall(start: f64, duration: f64) -> Result<StallWindow, AttackError> {
    if !(duration.is_finite() && duration > 0.0) {
        return Err(AttackError::Invalid("stall duration must be positive".into()));
    }
    Ok(StallWindow { start, duration })
}

/// Additive torque, constant or `tau * sin(2 pi f (t - t0))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TorqueBias {
    pub tau: Vec3,
    #[serde(default)]
    pub freq_hz: Option<f64>,
    #[serde(default)]
    pub duration: Option<f64>,
}

impl TorqueBias {
    pub fn value(&self, since_start: f64) -> Vec3 {
        if self.duration.is_some_and(|d| since_start >= d) {
            return Vec3::ZERO;
        }
        match self.freq_hz {
            Some(f) => self.tau * (2.0 * std::f64::consts::PI * f * since_start).sin(),
            None => self.tau,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AttackAction {
    Inject(CommandMessage),
    Spoof(SpoofProfile),
    Stall { duration: f64 },
    LimitShift { du_min: f64, du_max: f64 },
    TorqueBias(TorqueBias),
}

impl AttackAction {
    pub fn kind(&self) -> &'static str {
        match self {
            AttackAction::Inject(_) => "inject",
            AttackAction::Spoof(_) => "spoof",
            AttackAction::Stall { .. } => "stall",
            AttackAction::LimitShift { .. } => "limit_shift",
            AttackAction::TorqueBias(_) => "torque_bias",
        }
    }
}

/// A timed action. Serialized flat, with exactly one action key:
/// `{ time = 10.0, stall = { duration = 2.5 } }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AttackSpec", into = "AttackSpec")]
pub struct AttackEvent {
    pub time: f64,
    pub action: AttackAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StallSpec {
    pub duration: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitShiftSpec {
    #[serde(default)]
    pub du_min: f64,
    #[serde(default)]
    pub du_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inject: Option<CommandMessage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spoof: Option<SpoofProfile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stall: Option<StallSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit_shift: Option<LimitShiftSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub torque_bias: Option<TorqueBias>,
}

impl TryFrom<AttackSpec> for AttackEvent {
    type Error = String;

    fn try_from(s: AttackSpec) -> Result<Self, String> {
        let mut actions = Vec::new();
        if let Some(m) = s.inject {
            actions.push(AttackAction::Inject(m));
        }
        if let Some(p) = s.spoof {
            actions.push(AttackAction::Spoof(p));
        }
        if let Some(st) = s.stall {
            actions.push(AttackAction::Stall { duration: st.duration });
        }
        if let Some(l) = s.limit_shift {
            actions.push(AttackAction::LimitShift { du_min: l.du_min, du_max: l.du_max });
        }
        if let Some(b) = s.torque_bias {
            actions.push(AttackAction::TorqueBias(b));
        }
        if actions.len() != 1 {
            return Err(format!(
                "attack at t={} needs exactly one of inject, spoof, stall, limit_shift, torque_bias",
                s.time
            ));
        }
        Ok(AttackEvent { time: s.time, action: actions.remove(0) })
    }
}

impl From<AttackEvent> for AttackSpec {
    fn from(e: AttackEvent) -> Self {
        let mut s = AttackSpec { time: e.time, inject: None, spoof: None, stall: None, limit_shift: None, torque_bias: None };
        match e.action {
            AttackAction::Inject(m) => s.inject = Some(m),
            AttackAction::Spoof(p) => s.spoof = Some(p),
            AttackAction::Stall { duration } => s.stall = Some(StallSpec { duration }),
            AttackAction::LimitShift { du_min, du_max } => s.limit_shift = Some(LimitShiftSpec { du_min, du_max }),
            AttackAction::TorqueBias(b) => s.torque_bias = Some(b),
        }
        s
    }
}

impl AttackEvent {
    pub fn validate(&self) -> Result<(), AttackError> {
        if !(self.time.is_finite() && self.time >= 0.0) {
            return Err(AttackError::Invalid("trigger time must be >= 0".into()));
        }
        match &self.action {
            AttackAction::Inject(m) => m.command.validate(),
            AttackAction::Spoof(p) => p.validate(),
            AttackAction::Stall { duration } => induce_stall(self.time, *duration).map(|_| ()),
            AttackAction::LimitShift { du_min, du_max } => {
                if du_min.is_finite() && du_max.is_finite() {
                    Ok(())
                } else {
                    Err(AttackError::Invalid("limit shift must be finite".into()))
                }
            }
            AttackAction::TorqueBias(b) => {
                let ok = b.tau.is_finite()
                    && b.freq_hz.is_none_or(|f| f.is_finite() && f > 0.0)
                    && b.duration.is_none_or(|d| d.is_finite() && d > 0.0);
                if ok {
                    Ok(())
                } else {
                    Err(AttackError::Invalid("torque bias must be finite with positive frequency/duration".into()))
                }
            }
        }
    }
}
