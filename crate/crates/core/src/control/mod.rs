//! Cascaded flight controller: PID+FF primitive, position/velocity loops,
//! attitude and body-rate loops, and the frame mixer.

pub mod attitude;
pub mod mixer;
pub mod pid;
pub mod position;

use thiserror::Error;

pub use attitude::{accel_to_lean_angles, attitude_error, attitude_p, rate_pid, yaw_slew, YawLimiter};
pub use mixer::{mix, FrameGeometry, MotorCommand};
pub use pid::{pid_step, PidGains, PidState};
pub use position::{
    horizontal_position_step, horizontal_velocity_step, thrust_to_throttle, vertical_cascade_step, AxisTriple,
    VerticalOutput,
};

use crate::math::Vec3;
use crate::params::ParamRegistry;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum ControlError {
    #[error("tilt {0:.3} rad exceeds the throttle compensation limit")]
    TiltTooLarge(f64),
    #[error("sqrt controller branches differ by {0:.1}% at the activation threshold")]
    SqrtDiscontinuity(f64),
}

/// Square-root attitude controller shape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SqrtParams {
    /// Error magnitude (rad) above which the response is compressed.
    pub threshold: f64,
    pub omega_max: f64,
    pub epsilon: f64,
}

impl SqrtParams {
    /// Relative gap between the linear and compressed branches at the
    /// threshold must stay below 5%.
    pub fn check_continuity(&self) -> Result<(), ControlError> {
        let scale = (self.omega_max / (self.threshold + self.epsilon)).sqrt();
        let gap = (scale - 1.0).abs();
        if gap < 0.05 {
            Ok(())
        } else {
            Err(ControlError::SqrtDiscontinuity(gap * 100.0))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CascadeGains {
    pub pos_xy: PidGains,
    pub vel_xy: PidGains,
    pub pos_z: PidGains,
    pub vel_z: PidGains,
    pub acc_z: PidGains,
    /// Roll, pitch, yaw.
    pub rate: [PidGains; 3],
    pub att_kp: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Limits {
    pub accel_xy_max: f64,
    pub accel_z_max: f64,
    pub lean_max: f64,
    pub rate_rp_max: f64,
    pub rate_y_max: f64,
    pub slew_yaw: f64,
    /// Input-shaping bound on the change of the rate target, rad/s^2.
    pub accel_max: f64,
}

/// Every gain, limit and piece of loop memory of the controller.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeState {
    pub gains: CascadeGains,
    pub limits: Limits,
    pub sqrt: SqrtParams,
    pub t_hover: f64,
    pub geometry: FrameGeometry,
    /// Feed-forward terms are only used in guided and auto modes.
    pub ff_enabled: bool,

    pub pos_xy: [PidState; 2],
    pub vel_xy: [PidState; 2],
    pub pos_z: PidState,
    pub vel_z: PidState,
    pub acc_z: PidState,
    pub rate: [PidState; 3],
    pub yaw: YawLimiter,
    pub prev_rate_target: Vec3,
}

impl Default for CascadeState {
    fn default() -> Self {
        CascadeState::from_params(&ParamRegistry::with_defaults())
    }
}

impl CascadeState {
    pub fn from_params(reg: &ParamRegistry) -> Self {
        let mut s = CascadeState {
            gains: CascadeGains {
                pos_xy: PidGains::default(),
                vel_xy: PidGains::default(),
                pos_z: PidGains::default(),
                vel_z: PidGains::default(),
                acc_z: PidGains::default(),
                rate: [PidGains::default(); 3],
                att_kp: Vec3::ZERO,
            },
            limits: Limits {
                accel_xy_max: 0.0,
                accel_z_max: 0.0,
                lean_max: 0.0,
                rate_rp_max: 0.0,
                rate_y_max: 0.0,
                slew_yaw: 0.0,
                accel_max: 0.0,
            },
            sqrt: SqrtParams { threshold: 0.0, omega_max: 0.0, epsilon: 0.0 },
            t_hover: 0.0,
            geometry: FrameGeometry::QuadX,
            ff_enabled: true,
            pos_xy: Default::default(),
            vel_xy: Default::default(),
            pos_z: PidState::default(),
            vel_z: PidState::default(),
            acc_z: PidState::default(),
            rate: Default::default(),
            yaw: YawLimiter::default(),
            prev_rate_target: Vec3::ZERO,
        };
        s.sync(reg);
        s
    }

    /// Reloads gains and limits from the registry, keeping loop memory.
    pub fn sync(&mut self, reg: &ParamRegistry) {
        let v = |n: &str| reg.value(n);
        let pid = |prefix: &str, ff: bool| PidGains {
            kp: v(&format!("{prefix}_P")),
            ki: v(&format!("{prefix}_I")),
            kd: v(&format!("{prefix}_D")),
            kff: if ff { v(&format!("{prefix}_FF")) } else { 0.0 },
            imax: v(&format!("{prefix}_IMAX")),
            out_min: f64::NEG_INFINITY,
            out_max: f64::INFINITY,
        };
        let speed_xy = v("PSC_SPEED_XY_MAX");
        let speed_z = v("PSC_SPEED_Z_MAX");
        self.gains = CascadeGains {
            pos_xy: pid("PSC_POSXY", false).with_limits(-speed_xy, speed_xy),
            vel_xy: pid("PSC_VELXY", true),
            pos_z: pid("PSC_POSZ", false).with_limits(-speed_z, speed_z),
            vel_z: pid("PSC_VELZ", true),
            acc_z: pid("PSC_ACCZ", false),
            rate: [pid("ATC_RAT_RLL", true), pid("ATC_RAT_PIT", true), pid("ATC_RAT_YAW", true)],
            att_kp: Vec3::new(v("ATC_ANG_RLL_P"), v("ATC_ANG_PIT_P"), v("ATC_ANG_YAW_P")),
        };
        self.limits = Limits {
            accel_xy_max: v("PSC_ACC_XY_MAX"),
            accel_z_max: v("PSC_ACC_Z_MAX"),
            lean_max: v("ANGLE_MAX"),
            rate_rp_max: v("ATC_RATE_RP_MAX"),
            rate_y_max: v("ATC_RATE_Y_MAX"),
            slew_yaw: v("ATC_SLEW_YAW"),
            accel_max: v("ATC_ACCEL_MAX"),
        };
        self.sqrt = SqrtParams {
            threshold: v("ATC_SQRT_THRESH"),
            omega_max: v("ATC_SQRT_OMEGA"),
            epsilon: v("ATC_SQRT_EPS"),
        };
        self.t_hover = v("MOT_THST_HOVER");
    }

    /// Clears every integrator and derivative memory.
    pub fn reset_loops(&mut self) {
        for s in self.pos_xy.iter_mut().chain(self.vel_xy.iter_mut()).chain(self.rate.iter_mut()) {
            s.reset();
        }
        self.pos_z.reset();
        self.vel_z.reset();
        self.acc_z.reset();
        self.prev_rate_target = Vec3::ZERO;
    }
}
