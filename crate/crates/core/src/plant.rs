//! Rigid-body quadrotor dynamics and sensor generation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::mixer::FrameGeometry;
use crate::math::{Quaternion, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("state left the finite range")]
    NonFinite,
    #[error("integration step {0} s outside (0, 0.01]")]
    BadTimeStep(f64),
    #[error("invalid plant parameter: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantParams {
    pub mass: f64,
    /// Diagonal inertia (Ixx, Iyy, Izz), kg m^2.
    pub inertia: Vec3,
    pub arm_length: f64,
    /// Thrust of one motor at command 1.0, N. Thrust is linear in command.
    pub motor_max_thrust: f64,
    /// Reaction torque per unit command, N m.
    pub yaw_coeff: f64,
    /// Linear drag, N s/m.
    pub drag: f64,
    pub g: f64,
    pub geometry: FrameGeometry,
    /// Down coordinate of the ground plane; `None` disables contact.
    pub ground: Option<f64>,
}

impl Default for PlantParams {
    fn default() -> Self {
        PlantParams {
            mass: 1.5,
            inertia: Vec3::new(0.02, 0.02, 0.04),
            arm_length: 0.25,
            motor_max_thrust: 7.5,
            yaw_coeff: 0.05,
            drag: 0.1,
            g: 9.81,
            geometry: FrameGeometry::QuadX,
            ground: Some(0.0),
        }
    }
}

impl PlantParams {
    pub fn max_total_thrust(&self) -> f64 {
        self.motor_max_thrust * self.geometry.motor_count() as f64
    }

    /// Per-motor command that balances gravity when level.
    pub fn hover_command(&self) -> f64 {
        self.mass * self.g / self.max_total_thrust()
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        let positive = [
            ("mass", self.mass),
            ("inertia.x", self.inertia.x),
            ("inertia.y", self.inertia.y),
            ("inertia.z", self.inertia.z),
            ("arm_length", self.arm_length),
            ("motor_max_thrust", self.motor_max_thrust),
            ("yaw_coeff", self.yaw_coeff),
            ("g", self.g),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(PlantError::InvalidParams(format!("{name} must be positive")));
            }
        }
        if !(self.drag.is_finite() && self.drag >= 0.0) {
            return Err(PlantError::InvalidParams("drag must be non-negative".into()));
        }
        if self.max_total_thrust() <= self.mass * self.g {
            return Err(PlantError::InvalidParams("max thrust cannot lift the vehicle".into()));
        }
        Ok(())
    }
}

/// Ground-truth vehicle state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueState {
    pub position: Vec3,
    pub velocity: Vec3,
    /// Kinematic acceleration over the last step.
    pub acceleration: Vec3,
    pub attitude: Quaternion,
    /// Body rates, rad/s.
    pub rates: Vec3,
    /// Motor commands as applied (after the physical [0, 1] clamp).
    pub motors: [f64; 4],
    pub on_ground: bool,
}

impl TrueState {
    pub fn at_rest(position: Vec3, attitude: Quaternion) -> Self {
        TrueState {
            position,
            velocity: Vec3::ZERO,
            acceleration: Vec3::ZERO,
            attitude,
            rates: Vec3::ZERO,
            motors: [0.0; 4],
            on_ground: false,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.is_finite()
            && self.velocity.is_finite()
            && self.acceleration.is_finite()
            && self.attitude.is_finite()
            && self.rates.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub state: TrueState,
    /// Some command fell outside [0, 1] and was clamped by the motors.
    pub clamped: bool,
}

/// Body force (along -z) and torque produced by the motor commands.
pub fn motor_wrench(u: &[f64; 4], p: &PlantParams) -> (f64, Vec3) {
    let mut thrust = 0.0;
    let mut torque = Vec3::ZERO;
    for (i, &ui) in u.iter().enumerate() {
        let (dir, spin) = p.geometry.motor(i);
        let f = p.motor_max_thrust * ui;
        let r = dir * p.arm_length;
        thrust += f;
        // r x (0, 0, -f)
        torque += Vec3::new(-r.y * f, r.x * f, spin * p.yaw_coeff * ui);
    }
    (thrust, torque)
}

/// Advances the true state by `dt` with semi-implicit Euler.
pub fn step_dynamics(
    s: &TrueState,
    command: &[f64; 4],
    p: &PlantParams,
    dt: f64,
) -> Result<StepResult, PlantError> {
    if !(dt > 0.0 && dt <= 0.01) {
        return Err(PlantError::BadTimeStep(dt));
    }
    let mut clamped = false;
    let u = command.map(|c| {
        let v = c.clamp(0.0, 1.0);
        clamped |= v != c;
        v
    });
    let (thrust, torque) = motor_wrench(&u, p);
    let thrust_world = s.attitude.rotate(Vec3::new(0.0, 0.0, -thrust));
    let force = thrust_world + Vec3::new(0.0, 0.0, p.mass * p.g) - s.velocity * p.drag;

    let mut next = s.clone();
    next.motors = u;

    let resting = p.ground.is_some_and(|gz| s.position.z >= gz) && force.z >= 0.0;
    if resting {
        next.velocity = Vec3::ZERO;
        next.acceleration = Vec3::ZERO;
        next.rates = Vec3::ZERO;
        next.on_ground = true;
        return finish(next, clamped);
    }

    let i = p.inertia;
    let w = s.rates;
    let iw = w.hadamard(i);
    let wdot = (torque - w.cross(iw)).hadamard(Vec3::new(1.0 / i.x, 1.0 / i.y, 1.0 / i.z));
    next.rates = w + wdot * dt;
    next.attitude = s
        .attitude
        .mul_raw(Quaternion::from_rotation_vector(next.rates * dt))
        .normalized();

    let accel = force / p.mass;
    next.acceleration = accel;
    next.velocity = s.velocity + accel * dt;
    next.position = s.position + next.velocity * dt;
    next.on_ground = false;

    if let Some(gz) = p.ground {
        if next.position.z >= gz {
            next.position.z = gz;
            next.velocity = Vec3::ZERO;
            next.acceleration = Vec3::ZERO;
            next.rates = Vec3::ZERO;
            next.on_ground = true;
        }
    }
    finish(next, clamped)
}

fn finish(state: TrueState, clamped: bool) -> Result<StepResult, PlantError> {
    if !state.is_finite() {
        return Err(PlantError::NonFinite);
    }
    Ok(StepResult { state, clamped })
}

/// Per-sensor Gaussian noise standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// m/s^2
    pub accel: f64,
    /// rad/s
    pub gyro: f64,
    /// m, horizontal GPS position
    pub gps: f64,
    /// m
    pub gps_alt: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig { accel: 0.0, gyro: 0.0, gps: 0.0, gps_alt: 0.0 }
    }
}

impl NoiseConfig {
    pub fn realistic() -> Self {
        NoiseConfig { accel: 0.05, gyro: 0.005, gps: 0.5, gps_alt: 0.5 }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (n, v) in [("accel", self.accel), ("gyro", self.gyro), ("gps", self.gps), ("gps_alt", self.gps_alt)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("noise.{n} must be >= 0"));
            }
        }
        Ok(())
    }
}

/// One sample of every sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorFrame {
    pub time: f64,
    /// Specific force in the body frame, m/s^2.
    pub accel: Vec3,
    /// Body rates, rad/s.
    pub gyro: Vec3,
    /// GPS position in NED. The down component is informational; altitude
    /// comes from `gps_alt`.
    pub gps_pos: Vec3,
    /// Altitude above the origin (up-positive), m.
    pub gps_alt: f64,
    pub gps_valid: bool,
    pub alt_valid: bool,
}

/// Ideal measurements `h(x)` with no noise.
pub fn ideal_frame(s: &TrueState, g: f64, time: f64) -> SensorFrame {
    let specific = s.acceleration - Vec3::new(0.0, 0.0, g);
    SensorFrame {
        time,
        accel: s.attitude.rotate_inv(specific),
        gyro: s.rates,
        gps_pos: s.position,
        gps_alt: -s.position.z,
        gps_valid: true,
        alt_valid: true,
    }
}

/// Seeded noisy sensor source. Draws a fixed number of samples per frame
/// so the random stream does not depend on the noise levels.
#[derive(Debug, Clone)]
pub struct SensorModel {
    pub noise: NoiseConfig,
    rng: ChaCha8Rng,
}

impl SensorModel {
    pub fn new(noise: NoiseConfig, seed: u64) -> Self {
        SensorModel { noise, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    fn normal3(&mut self, sigma: f64) -> Vec3 {
        let mut d = || -> f64 { StandardNormal.sample(&mut self.rng) };
        let v = Vec3::new(d(), d(), d());
        v * sigma
    }

    pub fn sense(&mut self, s: &TrueState, g: f64, time: f64) -> SensorFrame {
        let mut f = ideal_frame(s, g, time);
        let n = self.noise;
        f.accel += self.normal3(n.accel);
        f.gyro += self.normal3(n.gyro);
        f.gps_pos += self.normal3(n.gps);
        let alt: f64 = StandardNormal.sample(&mut self.rng);
        f.gps_alt += n.gps_alt * alt;
        f
    }
}
