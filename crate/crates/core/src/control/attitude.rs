//! Lean-angle generation, yaw target limiting, attitude and body-rate loops.

use super::{CascadeState, SqrtParams};
use crate::math::{wrap_pi, Quaternion, Vec3};

/// Small-angle roll/pitch targets for a horizontal acceleration expressed
/// in the heading frame (x forward, y right). Forward acceleration needs
/// nose-down pitch, rightward acceleration needs right roll.
pub fn accel_to_lean_angles(a_t: Vec3, g: f64, lean_limit: f64) -> (f64, f64) {
    debug_assert!(g > 0.0);
    let roll = (a_t.y / g).clamp(-lean_limit, lean_limit);
    let pitch = (-a_t.x / g).clamp(-lean_limit, lean_limit);
    (roll, pitch)
}

/// Rotates an NED horizontal vector into the heading frame.
pub fn ned_to_heading(v: Vec3, yaw: f64) -> Vec3 {
    let (s, c) = yaw.sin_cos();
    Vec3::new(c * v.x + s * v.y, -s * v.x + c * v.y, v.z)
}

/// Yaw target limiter state.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct YawLimiter {
    pub prev: f64,
}

impl YawLimiter {
    /// Returns the limited `(yaw target, yaw rate target)`.
    pub fn step(&mut self, yaw_cmd: f64, yaw_rate_cmd: f64, rate_max: f64, slew: f64, dt: f64) -> (f64, f64) {
        let rate = yaw_rate_cmd.clamp(-rate_max, rate_max);
        let max_step = slew * dt;
        let delta = wrap_pi(yaw_cmd - self.prev).clamp(-max_step, max_step);
        self.prev = wrap_pi(self.prev + delta);
        (self.prev, rate)
    }
}

/// Yaw slew limiter on the stack's persistent yaw target.
pub fn yaw_slew(stack: &mut CascadeState, yaw_cmd: f64, yaw_rate_cmd: f64, dt: f64) -> (f64, f64) {
    let l = stack.limits;
    stack.yaw.step(yaw_cmd, yaw_rate_cmd, l.rate_y_max, l.slew_yaw, dt)
}

/// Rotation vector of `q_t * q_b^-1`, angle in [0, pi].
pub fn attitude_error(q_t: Quaternion, q_b: Quaternion) -> Vec3 {
    (q_t * q_b.inverse()).to_rotation_vector()
}

/// Proportional attitude response with square-root compression above the
/// activation threshold. No shaping or clamping.
pub fn attitude_rate_demand(e_ang: Vec3, kp: Vec3, sq: &SqrtParams) -> Vec3 {
    let lin = kp.hadamard(e_ang);
    let mag = e_ang.norm();
    if mag <= sq.threshold {
        lin
    } else {
        lin * (sq.omega_max / (mag + sq.epsilon)).sqrt()
    }
}

/// Attitude P stage: rate demand, then per-cycle acceleration shaping and
/// the roll/pitch and yaw rate clamps.
pub fn attitude_p(stack: &mut CascadeState, e_ang: Vec3, dt: f64) -> Vec3 {
    let raw = attitude_rate_demand(e_ang, stack.gains.att_kp, &stack.sqrt);
    let l = stack.limits;
    let step = l.accel_max * dt;
    let prev = stack.prev_rate_target;
    let shaped = Vec3::new(
        raw.x.clamp(prev.x - step, prev.x + step),
        raw.y.clamp(prev.y - step, prev.y + step),
        raw.z.clamp(prev.z - step, prev.z + step),
    );
    let out = Vec3::new(
        shaped.x.clamp(-l.rate_rp_max, l.rate_rp_max),
        shaped.y.clamp(-l.rate_rp_max, l.rate_rp_max),
        shaped.z.clamp(-l.rate_y_max, l.rate_y_max),
    );
    stack.prev_rate_target = out;
    out
}

/// Normalized torque limit per axis.
pub const TORQUE_LIMIT: f64 = 0.5;

/// Body-rate PID+FF. Integrators are held while `freeze` is set.
pub fn rate_pid(stack: &mut CascadeState, omega_t: Vec3, omega_c: Vec3, dt: f64, freeze: bool) -> Vec3 {
    let e = omega_t - omega_c;
    let g = stack.gains.rate;
    let t = omega_t.to_array();
    let e = e.to_array();
    let mut tau = [0.0; 3];
    for i in 0..3 {
        tau[i] = stack.rate[i].step(&g[i], e[i], t[i], dt, freeze).clamp(-TORQUE_LIMIT, TORQUE_LIMIT);
    }
    Vec3::from(tau)
}
