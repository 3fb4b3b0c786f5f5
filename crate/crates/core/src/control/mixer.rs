use serde::{Deserialize, Serialize};

use crate::math::Vec3;

/// Airframe layout. Fixes motor positions, spin directions and the
/// torque-to-motor mixing matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FrameGeometry {
    /// Motors 1..4 at front-right, back-left, front-left, back-right.
    #[default]
    QuadX,
    /// Motors 1..4 at front, back, left, right.
    QuadPlus,
}

const H: f64 = std::f64::consts::FRAC_1_SQRT_2;

impl FrameGeometry {
    pub fn motor_count(self) -> usize {
        4
    }

    /// Unit arm direction (N, E, 0) in the body frame and yaw spin sign of motor `i`.
    pub fn motor(self, i: usize) -> (Vec3, f64) {
        match self {
            FrameGeometry::QuadX => [
                (Vec3::new(H, H, 0.0), 1.0),
                (Vec3::new(-H, -H, 0.0), 1.0),
                (Vec3::new(H, -H, 0.0), -1.0),
                (Vec3::new(-H, H, 0.0), -1.0),
            ][i],
            FrameGeometry::QuadPlus => [
                (Vec3::new(1.0, 0.0, 0.0), 1.0),
                (Vec3::new(-1.0, 0.0, 0.0), 1.0),
                (Vec3::new(0.0, -1.0, 0.0), -1.0),
                (Vec3::new(0.0, 1.0, 0.0), -1.0),
            ][i],
        }
    }

    /// Mixing matrix rows (roll, pitch, yaw factors) per motor.
    pub fn matrix(self) -> [[f64; 3]; 4] {
        match self {
            FrameGeometry::QuadX => [
                [-0.5, 0.5, 0.5],
                [0.5, -0.5, 0.5],
                [0.5, 0.5, -0.5],
                [-0.5, -0.5, -0.5],
            ],
            FrameGeometry::QuadPlus => [
                [0.0, 0.5, 0.5],
                [0.0, -0.5, 0.5],
                [0.5, 0.0, -0.5],
                [-0.5, 0.0, -0.5],
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotorCommand {
    pub motors: [f64; 4],
    /// Motor hit a mixer limit.
    pub saturated: [bool; 4],
}

impl MotorCommand {
    pub fn any_saturated(&self) -> bool {
        self.saturated.iter().any(|&s| s)
    }

    pub fn zero() -> Self {
        MotorCommand { motors: [0.0; 4], saturated: [false; 4] }
    }
}

/// `u = 1 * thrust + M tau`, each motor clamped to `limits`.
pub fn mix(thrust: f64, tau: Vec3, geometry: FrameGeometry, limits: (f64, f64)) -> MotorCommand {
    let m = geometry.matrix();
    let (lo, hi) = limits;
    let mut out = MotorCommand::zero();
    for i in 0..4 {
        let raw = thrust + m[i][0] * tau.x + m[i][1] * tau.y + m[i][2] * tau.z;
        let u = raw.clamp(lo, hi);
        out.motors[i] = u;
        out.saturated[i] = u != raw;
    }
    out
}
