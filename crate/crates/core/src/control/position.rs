//! Horizontal and vertical position/velocity/acceleration cascades.

use super::{CascadeState, ControlError};
use crate::math::Vec3;

/// Largest tilt for which throttle compensation is defined (63 deg).
pub const MAX_COMPENSATED_TILT: f64 = 63.0 * std::f64::consts::PI / 180.0;

/// Outer horizontal loop: position error to velocity demand. Only the x/y
/// components of the inputs are used; the result has `z = 0`.
pub fn horizontal_position_step(stack: &mut CascadeState, p_t: Vec3, p_off: Vec3, p_c: Vec3, dt: f64) -> Vec3 {
    let p_d = p_t - p_off;
    let e = p_d - p_c;
    let ff = stack.ff_enabled;
    let g = stack.gains.pos_xy;
    let vx = stack.pos_xy[0].step(&g, e.x, if ff { p_t.x } else { 0.0 }, dt, false);
    let vy = stack.pos_xy[1].step(&g, e.y, if ff { p_t.y } else { 0.0 }, dt, false);
    Vec3::new(vx, vy, 0.0)
}

/// Inner horizontal loop: velocity error to acceleration target, plus
/// offset, constrained to `+-a_max_xy` per component.
pub fn horizontal_velocity_step(
    stack: &mut CascadeState,
    v_t: Vec3,
    v_off: Vec3,
    v_c: Vec3,
    a_off: Vec3,
    dt: f64,
) -> Vec3 {
    let v_d = v_t - v_off;
    let e = v_d - v_c;
    let ff = stack.ff_enabled;
    let g = stack.gains.vel_xy;
    let ax = stack.vel_xy[0].step(&g, e.x, if ff { v_t.x } else { 0.0 }, dt, false);
    let ay = stack.vel_xy[1].step(&g, e.y, if ff { v_t.y } else { 0.0 }, dt, false);
    let lim = stack.limits.accel_xy_max;
    let a = Vec3::new(ax, ay, 0.0) + Vec3::new(a_off.x, a_off.y, 0.0);
    Vec3::new(a.x.clamp(-lim, lim), a.y.clamp(-lim, lim), 0.0)
}

/// A (position, velocity, acceleration) triple along the down axis.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AxisTriple {
    pub p: f64,
    pub v: f64,
    pub a: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VerticalOutput {
    pub p_d: f64,
    pub v_d: f64,
    pub a_t: f64,
    pub t_in: f64,
}

/// Altitude loop (down-positive). Returns `(p_d, climb-rate demand)`.
pub fn vertical_position_step(
    stack: &mut CascadeState,
    p_t: f64,
    p_off: f64,
    p_terrain: f64,
    p_c: f64,
    dt: f64,
) -> (f64, f64) {
    let p_d = p_t - (p_off + p_terrain);
    let ff = if stack.ff_enabled { p_t } else { 0.0 };
    let g = stack.gains.pos_z;
    let v = stack.pos_z.step(&g, p_d - p_c, ff, dt, false);
    (p_d, v)
}

/// Vertical velocity loop. `v_t` is the climb-rate target (position loop
/// output plus any feed-forward); `a_ff` is a target acceleration.
#[allow(clippy::too_many_arguments)]
pub fn vertical_velocity_step(
    stack: &mut CascadeState,
    v_t: f64,
    v_off: f64,
    v_terrain: f64,
    v_c: f64,
    a_ff: f64,
    a_off: f64,
    a_terrain: f64,
    dt: f64,
) -> f64 {
    let v_d = v_t - (v_off + v_terrain);
    let ff = if stack.ff_enabled { v_t } else { 0.0 };
    let g = stack.gains.vel_z;
    let a_d = stack.vel_z.step(&g, v_d - v_c, ff, dt, false);
    let lim = stack.limits.accel_z_max;
    (a_d + a_ff + a_off + a_terrain).clamp(-lim, lim)
}

/// Vertical acceleration loop. Thrust acts along -D, so the demand is the
/// negated PID output on the down-axis error. Result is in [-1, 1].
pub fn vertical_accel_step(stack: &mut CascadeState, a_t: f64, a_c: f64, dt: f64, freeze: bool) -> f64 {
    let g = stack.gains.acc_z;
    let out = stack.acc_z.step(&g, a_t - a_c, 0.0, dt, freeze);
    (-out).clamp(-1.0, 1.0)
}

/// All three vertical loops in one call with a shared `dt`.
pub fn vertical_cascade_step(
    stack: &mut CascadeState,
    targets: AxisTriple,
    offsets: AxisTriple,
    terrain: AxisTriple,
    measured: AxisTriple,
    dt: f64,
) -> VerticalOutput {
    let (p_d, v_pos) = vertical_position_step(stack, targets.p, offsets.p, terrain.p, measured.p, dt);
    let v_t = v_pos + targets.v;
    let a_t = vertical_velocity_step(
        stack, v_t, offsets.v, terrain.v, measured.v, targets.a, offsets.a, terrain.a, dt,
    );
    let t_in = vertical_accel_step(stack, a_t, measured.a, dt, false);
    VerticalOutput { p_d, v_d: v_t - (offsets.v + terrain.v), a_t, t_in }
}

/// `(T_hover + T_in) / cos(tilt)`, clamped to [0, 1].
pub fn thrust_to_throttle(t_in: f64, t_hover: f64, tilt: f64) -> Result<f64, ControlError> {
    if tilt > MAX_COMPENSATED_TILT {
        return Err(ControlError::TiltTooLarge(tilt));
    }
    Ok(((t_hover + t_in) / tilt.cos()).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{CascadeState, PidGains};

    fn stack() -> CascadeState {
        let mut s = CascadeState::default();
        s.gains.pos_xy = PidGains::p(1.0);
        s.gains.vel_xy = PidGains::p(1.0);
        s
    }

    #[test]
    fn zero_position_error() {
        let mut s = stack();
        let p = Vec3::new(3.0, -2.0, 0.0);
        assert_eq!(horizontal_position_step(&mut s, p, Vec3::ZERO, p, 0.02), Vec3::ZERO);
    }

    #[test]
    fn unit_position_error() {
        let mut s = stack();
        let v = horizontal_position_step(&mut s, Vec3::new(1.0, 0.0, 0.0), Vec3::ZERO, Vec3::ZERO, 0.02);
        assert_eq!(v, Vec3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn position_integral_two_steps() {
        let mut s = stack();
        s.gains.pos_xy = PidGains { kp: 1.0, ki: 0.5, ..PidGains::default() };
        let dt = 0.02;
        let e = [Vec3::new(1.0, -2.0, 0.0), Vec3::new(0.5, -1.0, 0.0)];
        let mut out = Vec3::ZERO;
        for ek in e {
            out = horizontal_position_step(&mut s, ek, Vec3::ZERO, Vec3::ZERO, dt);
        }
        let expect_x = 0.5 + 0.5 * (1.0 + 0.5) * dt;
        let expect_y = -1.0 + 0.5 * (-2.0 - 1.0) * dt;
        assert!((out.x - expect_x).abs() < 1e-12 && (out.y - expect_y).abs() < 1e-12);
    }

    #[test]
    fn velocity_step_cases() {
        let mut s = stack();
        s.limits.accel_xy_max = 10.0;
        let z = Vec3::ZERO;
        assert_eq!(horizontal_velocity_step(&mut s, z, z, z, z, 0.01), z);
        // a_d = (15, 0) saturates
        let a = horizontal_velocity_step(&mut s, Vec3::new(15.0, 0.0, 0.0), z, z, z, 0.01);
        assert_eq!(a, Vec3::new(10.0, 0.0, 0.0));
        let a = horizontal_velocity_step(&mut s, Vec3::new(3.0, 4.0, 0.0), z, z, Vec3::new(1.0, -1.0, 0.0), 0.01);
        assert_eq!(a, Vec3::new(4.0, 3.0, 0.0));
    }

    fn pure_p_vertical() -> CascadeState {
        let mut s = CascadeState::default();
        s.gains.pos_z = PidGains::p(1.0);
        s.gains.vel_z = PidGains::p(1.0);
        s.gains.acc_z = PidGains::p(0.1);
        s
    }

    #[test]
    fn vertical_zero_error() {
        let mut s = pure_p_vertical();
        let z = AxisTriple::default();
        let out = vertical_cascade_step(&mut s, z, z, z, z, 0.0025);
        assert_eq!(out.t_in, 0.0);
    }

    #[test]
    fn vertical_pure_p_chain() {
        let mut s = pure_p_vertical();
        let z = AxisTriple::default();
        let t = AxisTriple { p: 1.0, ..z };
        let out = vertical_cascade_step(&mut s, t, z, z, z, 0.0025);
        // e_p = 1 -> v = 1 -> e_v = 1 -> a_t = 1 (down) -> thrust demand -0.1
        assert_eq!(out.v_d, 1.0);
        assert_eq!(out.a_t, 1.0);
        assert!((out.t_in + 0.1).abs() < 1e-15);
    }

    #[test]
    fn terrain_shifts_desired_altitude() {
        let mut s = pure_p_vertical();
        let (p_d, _) = vertical_position_step(&mut s, -10.0, 0.0, 5.0, -10.0, 0.02);
        assert_eq!(p_d, -15.0);
    }

    #[test]
    fn throttle_compensation() {
        assert!((thrust_to_throttle(0.1, 0.5, 0.0).unwrap() - 0.6).abs() < 1e-15);
        // 0.6 / cos 60 = 1.2 -> clamp
        assert_eq!(thrust_to_throttle(0.1, 0.5, 60f64.to_radians()).unwrap(), 1.0);
        assert_eq!(thrust_to_throttle(0.0, 0.5, 0.0).unwrap(), 0.5);
        assert!(matches!(thrust_to_throttle(0.0, 0.5, 1.2), Err(ControlError::TiltTooLarge(_))));
    }
}
