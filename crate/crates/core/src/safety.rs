//! Crash detector and loop-stall failsafe.

use serde::{Deserialize, Serialize};

/// Minimum lean for a crash, rad (15 deg, inclusive).
pub const CRASH_LEAN_MIN: f64 = 15.0 * std::f64::consts::PI / 180.0;
/// Acceleration must be strictly below this, m/s^2.
pub const CRASH_ACCEL_MAX: f64 = 3.0;
/// Thrust-vector error must strictly exceed this, rad (30 deg).
pub const CRASH_THRUST_ERR_MIN: f64 = 30.0 * std::f64::consts::PI / 180.0;
/// Horizontal speed must be strictly below this, m/s.
pub const CRASH_SPEED_MAX: f64 = 10.0;
/// Persistence before a crash is confirmed, s.
pub const CRASH_PERSIST: f64 = 2.0;
/// Loop gap that triggers the first failsafe stage, s.
pub const LOOP_GAP_MAX: f64 = 2.0;
/// Further time in the first stage before shutdown, s.
pub const SHUTDOWN_DELAY: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyInputs {
    pub armed: bool,
    pub crash_check_enabled: bool,
    pub standby: bool,
    pub forced_flight: bool,
    pub angle_stabilized: bool,
    pub flipping: bool,
    pub autorotation: bool,
    /// rad
    pub lean: f64,
    /// m/s^2
    pub accel: f64,
    /// Angle between desired and actual thrust directions, rad.
    pub thrust_error: f64,
    /// m/s
    pub horizontal_speed: f64,
    pub time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FailsafeStage {
    #[default]
    None,
    DisarmedMinThrust,
    Shutdown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SafetyActionKind {
    CrashConfirmed,
    LoopStallDisarm,
    LoopStallShutdown,
    LinkLossReturn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyAction {
    pub time: f64,
    pub kind: SafetyActionKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyStatus {
    pub armed: bool,
    /// Seconds of uninterrupted crash-condition satisfaction.
    pub crash_counter: f64,
    pub crash_confirmed: bool,
    pub stage: FailsafeStage,
    pub last_loop_time: f64,
    /// When the current stage was entered.
    pub stage_time: Option<f64>,
    pub actions: Vec<SafetyAction>,
}

impl Default for SafetyStatus {
    fn default() -> Self {
        SafetyStatus::armed(0.0)
    }
}

impl SafetyStatus {
    pub fn armed(now: f64) -> Self {
        SafetyStatus {
            armed: true,
            crash_counter: 0.0,
            crash_confirmed: false,
            stage: FailsafeStage::None,
            last_loop_time: now,
            stage_time: None,
            actions: Vec::new(),
        }
    }

    /// Motors must be held at zero or at minimum.
    pub fn motors_inhibited(&self) -> bool {
        !self.armed || self.crash_confirmed || self.stage != FailsafeStage::None
    }

    /// Watchdog hook called whenever the main loop completes.
    pub fn record_loop(&mut self, now: f64) {
        self.last_loop_time = now;
    }
}

/// True when every crash condition holds.
pub fn crash_conditions(i: &SafetyInputs) -> bool {
    i.armed
        && i.crash_check_enabled
        && !i.standby
        && !i.forced_flight
        && (i.angle_stabilized || i.flipping)
        && !i.autorotation
        && i.lean >= CRASH_LEAN_MIN
        && i.accel < CRASH_ACCEL_MAX
        && i.thrust_error > CRASH_THRUST_ERR_MIN
        && i.horizontal_speed < CRASH_SPEED_MAX
}

pub fn crash_check(i: &SafetyInputs, st: &SafetyStatus, dt: f64) -> SafetyStatus {
    let mut next = st.clone();
    if next.crash_confirmed {
        return next;
    }
    if crash_conditions(i) {
        next.crash_counter += dt;
    } else {
        next.crash_counter = 0.0;
    }
    // tolerance absorbs the rounding of repeated dt additions
    if next.crash_counter >= CRASH_PERSIST - 1e-9 {
        next.crash_confirmed = true;
        next.armed = false;
        next.actions.push(SafetyAction { time: i.time, kind: SafetyActionKind::CrashConfirmed });
    }
    next
}

/// Staged loop-stall failsafe. Returns the new status and the action taken
/// on this call, if any.
pub fn failsafe_check(
    st: &SafetyStatus,
    now: f64,
    motors_active: bool,
    enabled: bool,
) -> (SafetyStatus, Option<SafetyAction>) {
    let mut next = st.clone();
    if !enabled {
        return (next, None);
    }
    let gap = now - st.last_loop_time;
    let action = match st.stage {
        FailsafeStage::None if motors_active && gap > LOOP_GAP_MAX => {
            next.stage = FailsafeStage::DisarmedMinThrust;
            next.stage_time = Some(now);
            next.armed = false;
            Some(SafetyActionKind::LoopStallDisarm)
        }
        FailsafeStage::DisarmedMinThrust
            if gap > LOOP_GAP_MAX && st.stage_time.is_some_and(|t0| now - t0 >= SHUTDOWN_DELAY - 1e-9) =>
        {
            next.stage = FailsafeStage::Shutdown;
            next.stage_time = Some(now);
            Some(SafetyActionKind::LoopStallShutdown)
        }
        _ => None,
    };
    let action = action.map(|kind| SafetyAction { time: now, kind });
    if let Some(a) = action {
        next.actions.push(a);
    }
    (next, action)
}

/// Link-loss check: true once the last heartbeat is older than `timeout`.
/// Inactive until a first heartbeat has been received.
pub fn link_lost(last_heartbeat: Option<f64>, now: f64, timeout: f64) -> bool {
    last_heartbeat.is_some_and(|t| now - t > timeout)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn crashing() -> SafetyInputs {
        SafetyInputs {
            armed: true,
            crash_check_enabled: true,
            standby: false,
            forced_flight: false,
            angle_stabilized: true,
            flipping: false,
            autorotation: false,
            lean: 20f64.to_radians(),
            accel: 1.0,
            thrust_error: 40f64.to_radians(),
            horizontal_speed: 2.0,
            time: 0.0,
        }
    }

    fn hold(i: SafetyInputs, seconds: f64) -> SafetyStatus {
        let mut st = SafetyStatus::default();
        let n = (seconds / 0.1).round() as usize;
        for k in 0..n {
            st = crash_check(&SafetyInputs { time: k as f64 * 0.1, ..i }, &st, 0.1);
        }
        st
    }

    #[test]
    fn sustained_crash_is_confirmed() {
        let st = hold(crashing(), 2.1);
        assert!(st.crash_confirmed);
        assert!(!st.armed);
        assert_eq!(st.actions.len(), 1);
    }

    #[test]
    fn small_lean_no_crash() {
        let st = hold(SafetyInputs { lean: 10f64.to_radians(), ..crashing() }, 3.0);
        assert!(!st.crash_confirmed);
        assert_eq!(st.crash_counter, 0.0);
    }

    #[test]
    fn interruption_resets_counter() {
        let mut st = hold(crashing(), 1.9);
        assert!(!st.crash_confirmed);
        st = crash_check(&SafetyInputs { lean: 0.0, ..crashing() }, &st, 0.1);
        assert_eq!(st.crash_counter, 0.0);
        assert!(!st.crash_confirmed);
    }

    #[test]
    fn each_flag_blocks() {
        let c = crashing();
        for i in [
            SafetyInputs { armed: false, ..c },
            SafetyInputs { crash_check_enabled: false, ..c },
            SafetyInputs { standby: true, ..c },
            SafetyInputs { forced_flight: true, ..c },
            SafetyInputs { angle_stabilized: false, ..c },
            SafetyInputs { autorotation: true, ..c },
        ] {
            assert!(!crash_conditions(&i));
        }
        assert!(crash_conditions(&SafetyInputs { angle_stabilized: false, flipping: true, ..c }));
    }

    #[test]
    fn stall_stages() {
        let st = SafetyStatus::armed(10.0);
        let (s, a) = failsafe_check(&st, 11.0, true, true);
        assert_eq!(s.stage, FailsafeStage::None);
        assert!(a.is_none());
        let (s, a) = failsafe_check(&st, 12.5, true, true);
        assert_eq!(s.stage, FailsafeStage::DisarmedMinThrust);
        assert_eq!(a.unwrap().kind, SafetyActionKind::LoopStallDisarm);
        let (s2, _) = failsafe_check(&s, 13.0, false, true);
        assert_eq!(s2.stage, FailsafeStage::DisarmedMinThrust);
        let (s3, a) = failsafe_check(&s, 13.5, false, true);
        assert_eq!(s3.stage, FailsafeStage::Shutdown);
        assert_eq!(a.unwrap().kind, SafetyActionKind::LoopStallShutdown);
    }

    #[test]
    fn stall_exactly_two_seconds_is_not_enough() {
        let st = SafetyStatus::armed(0.0);
        assert_eq!(failsafe_check(&st, 2.0, true, true).0.stage, FailsafeStage::None);
        assert_eq!(failsafe_check(&st, 2.0 + 1e-6, true, true).0.stage, FailsafeStage::DisarmedMinThrust);
    }

    #[test]
    fn disabled_or_idle_never_triggers() {
        let st = SafetyStatus::armed(0.0);
        assert_eq!(failsafe_check(&st, 5.0, true, false).0.stage, FailsafeStage::None);
        assert_eq!(failsafe_check(&st, 5.0, false, true).0.stage, FailsafeStage::None);
    }

    #[test]
    fn link_loss_waits_for_first_heartbeat() {
        assert!(!link_lost(None, 100.0, 3.0));
        assert!(!link_lost(Some(10.0), 13.0, 3.0));
        assert!(link_lost(Some(10.0), 13.1, 3.0));
    }
}
