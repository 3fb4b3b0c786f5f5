//! Per-axis Kalman filtering of position and velocity, plus a complementary
//! attitude filter.
//!
//! Each NED axis runs an independent 2-state (position, velocity) linear
//! filter driven by the accelerometer and corrected by GPS position. The
//! filter keeps the last gain and innovation so the effect of a corrupted
//! measurement on the estimate, `K * a`, can be read back directly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{Quaternion, Vec3};
use crate::plant::SensorFrame;

pub type Mat2 = [[f64; 2]; 2];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("innovation ratio {ratio:.3} exceeds gate {threshold}")]
    GateRejected { ratio: f64, threshold: f64 },
    #[error("no measurement update has run yet")]
    NoGainYet,
    #[error("time step must be positive, got {0}")]
    BadTimeStep(f64),
}

fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
        [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
    ]
}

fn transpose(a: &Mat2) -> Mat2 {
    [[a[0][0], a[1][0]], [a[0][1], a[1][1]]]
}

fn symmetrize(p: &mut Mat2) {
    let off = 0.5 * (p[0][1] + p[1][0]);
    p[0][1] = off;
    p[1][0] = off;
}

/// Constant-velocity transition for a step of `dt`.
pub fn transition(dt: f64) -> Mat2 {
    [[1.0, dt], [0.0, 1.0]]
}

/// Discrete white-noise-acceleration process covariance.
pub fn process_noise(sigma_acc: f64, dt: f64) -> Mat2 {
    let s2 = sigma_acc * sigma_acc;
    [
        [s2 * dt.powi(4) / 4.0, s2 * dt.powi(3) / 2.0],
        [s2 * dt.powi(3) / 2.0, s2 * dt * dt],
    ]
}

/// Result of an accepted measurement update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateInfo {
    pub gain: [f64; 2],
    pub innovation: f64,
    /// Normalized innovation, `y^2 / (H P H' + R)`.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisFilter {
    /// `[position, velocity]`
    pub x: [f64; 2],
    pub p: Mat2,
    pub q: Mat2,
    pub r: f64,
    pub h: [f64; 2],
    gain: Option<[f64; 2]>,
    innovation: f64,
}

impl AxisFilter {
    pub fn new(x: [f64; 2], p: Mat2, q: Mat2, r: f64) -> Self {
        assert!(r > 0.0, "measurement noise must be positive");
        AxisFilter { x, p, q, r, h: [1.0, 0.0], gain: None, innovation: 0.0 }
    }

    /// Filter for a position-measured axis: `Q` from accelerometer noise at
    /// step `dt`, `R` from the position noise standard deviation.
    pub fn for_axis(pos: f64, vel: f64, sigma_acc: f64, sigma_pos: f64, dt: f64) -> Self {
        let r = sigma_pos * sigma_pos;
        AxisFilter::new([pos, vel], [[r, 0.0], [0.0, 0.1]], process_noise(sigma_acc, dt), r)
    }

    pub fn gain(&self) -> Option<[f64; 2]> {
        self.gain
    }

    pub fn innovation(&self) -> f64 {
        self.innovation
    }

    /// `H P H' + R`
    pub fn innovation_variance(&self) -> f64 {
        let h = self.h;
        let ph = [
            self.p[0][0] * h[0] + self.p[0][1] * h[1],
            self.p[1][0] * h[0] + self.p[1][1] * h[1],
        ];
        h[0] * ph[0] + h[1] * ph[1] + self.r
    }

    /// Propagates the state with acceleration input `u` over `dt`.
    pub fn predict(&mut self, u: f64, dt: f64) -> Result<(), EstimatorError> {
        if dt.is_nan() || dt <= 0.0 {
            return Err(EstimatorError::BadTimeStep(dt));
        }
        let f = transition(dt);
        let x = self.x;
        self.x = [
            f[0][0] * x[0] + f[0][1] * x[1] + 0.5 * dt * dt * u,
            f[1][0] * x[0] + f[1][1] * x[1] + dt * u,
        ];
        let fp = mat_mul(&f, &self.p);
        let mut p = mat_mul(&fp, &transpose(&f));
        for i in 0..2 {
            for j in 0..2 {
                p[i][j] += self.q[i][j];
            }
        }
        symmetrize(&mut p);
        self.p = p;
        Ok(())
    }

    /// Fuses a position measurement. With `gate = Some(t)`, a measurement
    /// whose normalized innovation exceeds `t` is discarded.
    pub fn update(&mut self, z: f64, gate: Option<f64>) -> Result<UpdateInfo, EstimatorError> {
        let h = self.h;
        let s = self.innovation_variance();
        let y = z - (h[0] * self.x[0] + h[1] * self.x[1]);
        let ratio = y * y / s;
        self.innovation = y;
        if let Some(threshold) = gate {
            if ratio > threshold {
                return Err(EstimatorError::GateRejected { ratio, threshold });
            }
        }
        let ph = [
            self.p[0][0] * h[0] + self.p[0][1] * h[1],
            self.p[1][0] * h[0] + self.p[1][1] * h[1],
        ];
        let k = [ph[0] / s, ph[1] / s];
        self.x = [self.x[0] + k[0] * y, self.x[1] + k[1] * y];
        // (I - K H) P
        let ikh = [[1.0 - k[0] * h[0], -k[0] * h[1]], [-k[1] * h[0], 1.0 - k[1] * h[1]]];
        let mut p = mat_mul(&ikh, &self.p);
        symmetrize(&mut p);
        self.p = p;
        self.gain = Some(k);
        Ok(UpdateInfo { gain: k, innovation: y, ratio })
    }

    /// Single-step estimate corruption `K * a` caused by a measurement
    /// offset `a`, using the gain of the last accepted update.
    pub fn injected_bias(&self, a: f64) -> Result<[f64; 2], EstimatorError> {
        let k = self.gain.ok_or(EstimatorError::NoGainYet)?;
        Ok([k[0] * a, k[1] * a])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AttitudeMode {
    /// Gyro integration with accelerometer tilt correction. Specific force
    /// on a multirotor stays near body z, so the correction biases the
    /// estimate toward level while the vehicle is accelerating.
    Complementary,
    /// Attitude copied from ground truth.
    #[default]
    Passthrough,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttitudeEstimator {
    pub q: Quaternion,
    /// Fraction of the measured tilt error removed per step.
    pub gain: f64,
    pub mode: AttitudeMode,
}

impl AttitudeEstimator {
    pub fn update(&mut self, gyro: Vec3, accel: Vec3, dt: f64, g: f64, truth: Quaternion) {
        if self.mode == AttitudeMode::Passthrough {
            self.q = truth;
            return;
        }
        let mut q = self.q.mul_raw(Quaternion::from_rotation_vector(gyro * dt)).normalized();
        let f = accel.norm();
        // skip correction in free fall or hard impacts
        if self.gain > 0.0 && f > 0.5 * g && f < 1.5 * g {
            let measured_down = -accel / f;
            let predicted_down = q.rotate_inv(Vec3::new(0.0, 0.0, 1.0));
            let corr = measured_down.cross(predicted_down) * self.gain;
            q = q.mul_raw(Quaternion::from_rotation_vector(corr)).normalized();
        }
        self.q = q;
    }
}

/// Outcome of one axis update within a bank step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AxisOutcome {
    Accepted(UpdateInfo),
    Rejected { ratio: f64 },
    NoMeasurement,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GateStats {
    pub accepted: u64,
    pub rejected: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    pub sigma_acc: f64,
    pub sigma_pos: f64,
    pub sigma_alt: f64,
    pub gate_threshold: f64,
    pub gate_enabled: bool,
    pub comp_gain: f64,
    pub attitude_mode: AttitudeMode,
    pub g: f64,
}

/// Three axis filters (N, E, D) and the attitude filter.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorBank {
    pub axes: [AxisFilter; 3],
    pub attitude: AttitudeEstimator,
    pub gate_threshold: f64,
    pub gate_enabled: bool,
    pub stats: [GateStats; 3],
    /// Kinematic NED acceleration derived from the last accelerometer sample.
    pub accel_ned: Vec3,
    g: f64,
    dt: f64,
}

impl EstimatorBank {
    pub fn new(cfg: &EstimatorConfig, pos: Vec3, vel: Vec3, att: Quaternion, dt: f64) -> Self {
        assert!(cfg.gate_threshold > 0.0);
        let sig = [cfg.sigma_pos, cfg.sigma_pos, cfg.sigma_alt];
        let p = pos.to_array();
        let v = vel.to_array();
        let axes = [0, 1, 2].map(|i| AxisFilter::for_axis(p[i], v[i], cfg.sigma_acc, sig[i], dt));
        EstimatorBank {
            axes,
            attitude: AttitudeEstimator { q: att, gain: cfg.comp_gain, mode: cfg.attitude_mode },
            gate_threshold: cfg.gate_threshold,
            gate_enabled: cfg.gate_enabled,
            stats: [GateStats::default(); 3],
            accel_ned: Vec3::ZERO,
            g: cfg.g,
            dt,
        }
    }

    /// Applies changed noise/gate settings without touching the state.
    pub fn reconfigure(&mut self, cfg: &EstimatorConfig) {
        let q = process_noise(cfg.sigma_acc, self.dt);
        let r = [cfg.sigma_pos, cfg.sigma_pos, cfg.sigma_alt].map(|s| s * s);
        for (axis, r) in self.axes.iter_mut().zip(r) {
            axis.q = q;
            axis.r = r;
        }
        self.gate_threshold = cfg.gate_threshold;
        self.gate_enabled = cfg.gate_enabled;
        self.attitude.gain = cfg.comp_gain;
        self.attitude.mode = cfg.attitude_mode;
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn position(&self) -> Vec3 {
        Vec3::new(self.axes[0].x[0], self.axes[1].x[0], self.axes[2].x[0])
    }

    pub fn velocity(&self) -> Vec3 {
        Vec3::new(self.axes[0].x[1], self.axes[1].x[1], self.axes[2].x[1])
    }

    fn gate(&self) -> Option<f64> {
        self.gate_enabled.then_some(self.gate_threshold)
    }

    /// One predict/correct cycle from a sensor frame.
    pub fn step(&mut self, frame: &SensorFrame, truth_attitude: Quaternion) -> [AxisOutcome; 3] {
        let dt = self.dt;
        self.attitude.update(frame.gyro, frame.accel, dt, self.g, truth_attitude);
        self.accel_ned = self.attitude.q.rotate(frame.accel) + Vec3::new(0.0, 0.0, self.g);
        let u = self.accel_ned.to_array();
        for (axis, u) in self.axes.iter_mut().zip(u) {
            axis.predict(u, dt).expect("estimator dt is positive");
        }
        let z = [
            frame.gps_valid.then_some(frame.gps_pos.x),
            frame.gps_valid.then_some(frame.gps_pos.y),
            frame.alt_valid.then_some(-frame.gps_alt),
        ];
        let gate = self.gate();
        let mut out = [AxisOutcome::NoMeasurement; 3];
        for i in 0..3 {
            let Some(z) = z[i] else { continue };
            out[i] = match self.axes[i].update(z, gate) {
                Ok(info) => {
                    self.stats[i].accepted += 1;
                    AxisOutcome::Accepted(info)
                }
                Err(EstimatorError::GateRejected { ratio, .. }) => {
                    self.stats[i].rejected += 1;
                    AxisOutcome::Rejected { ratio }
                }
                Err(e) => unreachable!("update cannot fail with {e}"),
            };
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eye() -> Mat2 {
        [[1.0, 0.0], [0.0, 1.0]]
    }

    #[test]
    fn constant_velocity_propagation() {
        let mut f = AxisFilter::new([0.0, 1.0], eye(), [[0.0; 2]; 2], 1.0);
        f.predict(0.0, 1.0).unwrap();
        assert_eq!(f.x, [1.0, 1.0]);
    }

    #[test]
    fn constant_accel_propagation() {
        let mut f = AxisFilter::new([0.0, 0.0], eye(), [[0.0; 2]; 2], 1.0);
        f.predict(1.0, 1.0).unwrap();
        assert_eq!(f.x, [0.5, 1.0]);
    }

    #[test]
    fn covariance_propagation_matches_hand_product() {
        let mut f = AxisFilter::new([0.0, 0.0], eye(), [[0.01, 0.0], [0.0, 0.01]], 1.0);
        f.predict(0.0, 0.1).unwrap();
        // F P F' = [[1 + dt^2, dt], [dt, 1]] for P = I, plus Q
        let expect = [[1.0 + 0.01 + 0.01, 0.1], [0.1, 1.0 + 0.01]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((f.p[i][j] - expect[i][j]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn rejects_nonpositive_dt() {
        let mut f = AxisFilter::new([0.0, 0.0], eye(), eye(), 1.0);
        assert!(matches!(f.predict(0.0, 0.0), Err(EstimatorError::BadTimeStep(_))));
    }

    #[test]
    fn zero_innovation_leaves_state() {
        let mut f = AxisFilter::new([3.0, -1.0], eye(), eye(), 1.0);
        f.update(3.0, None).unwrap();
        assert_eq!(f.x, [3.0, -1.0]);
    }

    #[test]
    fn scalar_gain_case() {
        let mut f = AxisFilter::new([0.0, 0.0], eye(), eye(), 1.0);
        let before = f.x;
        let info = f.update(2.0, None).unwrap();
        assert_eq!(info.gain, [0.5, 0.0]);
        assert_eq!([f.x[0] - before[0], f.x[1] - before[1]], [1.0, 0.0]);
    }

    #[test]
    fn gate_rejects_at_twice_threshold() {
        let mut f = AxisFilter::new([0.0, 0.0], eye(), eye(), 1.0);
        // S = 2; ratio = y^2 / 2 = 2 * 25
        let y = (2.0f64 * 25.0 * 2.0).sqrt();
        let err = f.update(y, Some(25.0)).unwrap_err();
        assert!(matches!(err, EstimatorError::GateRejected { ratio, .. } if (ratio - 50.0).abs() < 1e-9));
        assert_eq!(f.x, [0.0, 0.0]);
        assert!(f.gain().is_none());
    }

    #[test]
    fn injected_bias_substitution() {
        let mut f = AxisFilter::new([0.0, 0.0], eye(), eye(), 1.0);
        assert_eq!(f.injected_bias(1.0), Err(EstimatorError::NoGainYet));
        f.gain = Some([0.5, 0.1]);
        assert_eq!(f.injected_bias(2.0).unwrap(), [1.0, 0.2]);
        assert_eq!(f.injected_bias(0.0).unwrap(), [0.0, 0.0]);
    }

    #[test]
    fn attitude_filter_pulls_tilt_toward_gravity() {
        use crate::math::EulerAngles;
        let g = 9.81;
        let truth = Quaternion::from_euler(EulerAngles::new(0.1, -0.05, 0.3));
        let accel = truth.rotate_inv(Vec3::new(0.0, 0.0, -g));
        let mut est = AttitudeEstimator {
            q: Quaternion::from_euler(EulerAngles::new(0.0, 0.0, 0.3)),
            gain: 0.02,
            mode: AttitudeMode::Complementary,
        };
        for _ in 0..2000 {
            est.update(Vec3::ZERO, accel, 0.0025, g, truth);
        }
        let e = est.q.to_euler();
        assert!((e.roll - 0.1).abs() < 1e-6, "{e:?}");
        assert!((e.pitch + 0.05).abs() < 1e-6, "{e:?}");
    }
}
