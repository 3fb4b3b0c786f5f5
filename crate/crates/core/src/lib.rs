//! Deterministic quadrotor flight-control simulator.
//!
//! The crate models a multirotor autopilot as a chain of cascaded loops
//! (position, velocity, attitude, body rate) feeding a frame mixer and a
//! rigid-body plant, with a per-axis Kalman estimator in the feedback path.
//! On top of that it provides a simulated command/sensor bus on which
//! manipulation events (command injection, parameter tampering, sensor
//! spoofing, main-loop stalls) can be scheduled, and the crash and
//! loop-stall exception handlers that are supposed to catch their effects.
//!
//! Everything runs in virtual time from an explicit seed, so a scenario is
//! reproducible bit for bit.

pub mod attack;
pub mod batch;
pub mod control;
pub mod engine;
pub mod estimator;
pub mod math;
pub mod params;
pub mod plant;
pub mod safety;
pub mod scenario;
pub mod sched;
pub mod telemetry;

pub use engine::{Engine, EngineError, RunOutput};
pub use math::{wrap_pi, EulerAngles, Quaternion, Vec3};
pub use params::{ParamError, ParamRegistry, ParamSource};
pub use scenario::{Scenario, ScenarioError};
pub use telemetry::RunReport;
