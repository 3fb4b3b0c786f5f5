//! Closed-loop simulation engine: scheduler-driven estimator, cascaded
//! controller, mixer, plant, attack runtime and safety handlers.

use thiserror::Error;

use crate::attack::{
    apply_torque_bias, induce_stall, shift_limits, AttackAction, AttackEvent, CommandBus, CommandEffect,
    CommandMessage, RcInput, Spoofer, TorqueBias,
};
use crate::control::attitude::ned_to_heading;
use crate::control::position::{vertical_accel_step, vertical_position_step, vertical_velocity_step, MAX_COMPENSATED_TILT};
use crate::control::{
    accel_to_lean_angles, attitude_error, attitude_p, horizontal_position_step, horizontal_velocity_step, mix,
    rate_pid, thrust_to_throttle, yaw_slew, CascadeState, ControlError, MotorCommand,
};
use crate::estimator::{AxisOutcome, EstimatorBank, EstimatorConfig};
use crate::math::{wrap_pi, EulerAngles, Quaternion, Vec3};
use crate::params::{ParamRegistry, ParamSource};
use crate::plant::{step_dynamics, PlantError, PlantParams, SensorFrame, SensorModel, TrueState};
use crate::safety::{self, crash_check, failsafe_check, FailsafeStage, SafetyActionKind, SafetyInputs, SafetyStatus};
use crate::scenario::{NavMode, Scenario, ScenarioError};
use crate::sched::{SchedError, Scheduler, TaskKind};
use crate::telemetry::{
    EstimateSnapshot, Event, EventRecord, Record, RunReport, SafetySnapshot, TargetSnapshot, TickRecord,
    TruthSnapshot,
};

/// Largest plant integration step, s.
pub const MAX_PLANT_STEP: f64 = 1.0 / 400.0;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ScenarioError),
    #[error(transparent)]
    Sched(#[from] SchedError),
    #[error("simulation diverged at t={time:.4}: {source}")]
    Diverged { time: f64, source: PlantError },
}

/// Telemetry lines plus the report computed from them.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub lines: Vec<String>,
    pub report: RunReport,
}

impl RunOutput {
    pub fn telemetry(&self) -> String {
        let mut s = self.lines.join("\n");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Completed,
    Shutdown,
    Diverged,
}

#[derive(Debug, Clone)]
struct Navigator {
    mode: NavMode,
    position: Vec3,
    velocity: Vec3,
    yaw: f64,
    yaw_rate: f64,
    home: Vec3,
    mission: Vec<Vec3>,
    wp_index: usize,
    sticks: Option<RcInput>,
}

#[derive(Debug, Clone)]
struct AttackRuntime {
    events: Vec<(usize, AttackEvent)>,
    next: usize,
    bus: CommandBus,
    spoofer: Spoofer,
    biases: Vec<(f64, TorqueBias)>,
    limit_shift: (f64, f64),
}

/// Controller intermediates carried between tasks.
#[derive(Debug, Clone)]
struct Signals {
    v_target: Vec3,
    a_target: Vec3,
    q_target: Quaternion,
    omega_target: Vec3,
    tau: Vec3,
    throttle: f64,
    accz_filt: f64,
    motor: MotorCommand,
    limits: (f64, f64),
    saturated: bool,
}

pub struct Engine {
    scenario: Scenario,
    params: ParamRegistry,
    synced_revision: u64,
    stack: CascadeState,
    plant: PlantParams,
    truth: TrueState,
    sensors: SensorModel,
    est: EstimatorBank,
    sched: Scheduler,
    safety: SafetyStatus,
    attacks: Option<AttackRuntime>,
    nav: Navigator,
    next_target: usize,
    sig: Signals,
    frame: Option<SensorFrame>,
    records: Vec<Record>,
    stop: Option<StopReason>,
    last_logged: Option<f64>,
    clamp_active: bool,
    gate_rejecting: [bool; 3],
    tilt_limited: bool,
    link_lost: bool,
    substeps: usize,
}

fn estimator_config(reg: &ParamRegistry, s: &Scenario) -> EstimatorConfig {
    EstimatorConfig {
        sigma_acc: reg.value("EKF_ACC_NOISE"),
        sigma_pos: reg.value("EKF_POS_NOISE"),
        sigma_alt: reg.value("EKF_ALT_NOISE"),
        gate_threshold: reg.value("FS_EKF_THRESH"),
        gate_enabled: reg.flag("EKF_GATE_ENABLE"),
        comp_gain: reg.value("AHRS_COMP_GAIN"),
        attitude_mode: s.estimator.attitude,
        g: s.plant.g,
    }
}

impl Engine {
    /// Engine with the attack runtime attached.
    pub fn new(scenario: Scenario) -> Result<Engine, EngineError> {
        Engine::build(scenario, true)
    }

    /// Engine without any attack machinery; the scenario's attack list is
    /// ignored.
    pub fn without_attacks(scenario: Scenario) -> Result<Engine, EngineError> {
        Engine::build(scenario, false)
    }

    fn build(scenario: Scenario, attach_attacks: bool) -> Result<Engine, EngineError> {
        scenario.validate()?;
        let params = scenario.registry()?;
        let base = params.value("SCHED_LOOP_RATE");
        let sched = Scheduler::new(base, &scenario.rates.specs(base))?;
        let est_dt = sched.period(TaskKind::Estimator).expect("estimator task always present");

        let mut stack = CascadeState::from_params(&params);
        stack.geometry = scenario.plant.geometry;
        let init = &scenario.initial;
        let q0 = Quaternion::from_euler(init.attitude);
        stack.yaw.prev = wrap_pi(init.attitude.yaw);

        let mut truth = TrueState::at_rest(init.position, q0);
        truth.velocity = init.velocity;
        let est = EstimatorBank::new(&estimator_config(&params, &scenario), init.position, init.velocity, q0, est_dt);

        let attacks = attach_attacks.then(|| {
            let mut events: Vec<(usize, AttackEvent)> = scenario.attacks.iter().cloned().enumerate().collect();
            events.sort_by(|a, b| a.1.time.total_cmp(&b.1.time));
            AttackRuntime {
                events,
                next: 0,
                bus: CommandBus::new(scenario.signing_required),
                spoofer: Spoofer::new(),
                biases: Vec::new(),
                limit_shift: (0.0, 0.0),
            }
        });

        let substeps = ((sched.dt() / MAX_PLANT_STEP) - 1e-9).ceil().max(1.0) as usize;
        let limits = (params.value("MOT_OUT_MIN"), params.value("MOT_OUT_MAX"));
        let mut records = Vec::new();
        records.push(Record::Header { seed: scenario.seed, config: scenario.config_echo() });
        for w in sched.warnings() {
            records.push(Record::Event(EventRecord { time: 0.0, event: Event::Warning { message: w.clone() } }));
        }

        Ok(Engine {
            nav: Navigator {
                mode: NavMode::Guided,
                position: init.position,
                velocity: Vec3::ZERO,
                yaw: wrap_pi(init.attitude.yaw),
                yaw_rate: 0.0,
                home: init.position,
                mission: Vec::new(),
                wp_index: 0,
                sticks: None,
            },
            sig: Signals {
                v_target: Vec3::ZERO,
                a_target: Vec3::ZERO,
                q_target: q0,
                omega_target: Vec3::ZERO,
                tau: Vec3::ZERO,
                throttle: 0.0,
                accz_filt: 0.0,
                motor: MotorCommand::zero(),
                limits,
                saturated: false,
            },
            safety: SafetyStatus { armed: init.armed, ..SafetyStatus::armed(0.0) },
            sensors: SensorModel::new(scenario.noise, scenario.seed),
            plant: scenario.plant.clone(),
            synced_revision: params.revision(),
            next_target: 0,
            frame: None,
            records,
            stop: None,
            last_logged: None,
            clamp_active: false,
            gate_rejecting: [false; 3],
            tilt_limited: false,
            link_lost: false,
            substeps,
            scenario,
            params,
            stack,
            truth,
            est,
            sched,
            attacks,
        })
    }

    pub fn time(&self) -> f64 {
        self.sched.time()
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn truth(&self) -> &TrueState {
        &self.truth
    }

    pub fn estimator(&self) -> &EstimatorBank {
        &self.est
    }

    pub fn controller(&self) -> &CascadeState {
        &self.stack
    }

    pub fn params(&self) -> &ParamRegistry {
        &self.params
    }

    pub fn safety(&self) -> &SafetyStatus {
        &self.safety
    }

    pub fn scheduler(&self) -> &Scheduler {
        &self.sched
    }

    pub fn motor_command(&self) -> &MotorCommand {
        &self.sig.motor
    }

    pub fn attitude_target(&self) -> Quaternion {
        self.sig.q_target
    }

    pub fn guided_target(&self) -> Vec3 {
        self.nav.position
    }

    /// Last sensor frame fed to the estimator (after spoofing).
    pub fn last_frame(&self) -> Option<&SensorFrame> {
        self.frame.as_ref()
    }

    pub fn stopped(&self) -> Option<StopReason> {
        self.stop
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    /// Direct parameter write, the same path a PARAM_SET takes.
    pub fn set_param(&mut self, name: &str, value: f64, source: ParamSource) -> Result<(), crate::ParamError> {
        let t = self.time();
        let old = self.params.get(name)?;
        self.params.set(name, value, source, t)?;
        let widened = self.params.change_log().last().is_some_and(|c| c.widened);
        self.event(t, Event::ParamChange { name: name.into(), old, new: value, source, widened });
        Ok(())
    }

    /// Delivers a message on the command bus immediately.
    pub fn inject(&mut self, msg: &CommandMessage) -> Result<CommandEffect, crate::attack::AttackError> {
        let t = self.time();
        let mut bus = match &mut self.attacks {
            Some(rt) => std::mem::take(&mut rt.bus),
            None => CommandBus::new(self.scenario.signing_required),
        };
        let r = self.deliver(&mut bus, msg, t);
        if let Some(rt) = &mut self.attacks {
            rt.bus = bus;
        }
        r
    }

    fn event(&mut self, time: f64, event: Event) {
        self.records.push(Record::Event(EventRecord { time, event }));
    }

    fn deliver(
        &mut self,
        bus: &mut CommandBus,
        msg: &CommandMessage,
        t: f64,
    ) -> Result<CommandEffect, crate::attack::AttackError> {
        let r = bus.inject_command(msg, &mut self.params, t);
        let command = msg.command.name().to_string();
        match &r {
            Ok(effect) => {
                self.event(t, Event::Command { command, source: msg.source, accepted: true, reason: None });
                if let CommandEffect::ParamChanged { name, old, new } = effect {
                    let widened = self.params.change_log().last().is_some_and(|c| c.widened);
                    self.event(
                        t,
                        Event::ParamChange { name: name.clone(), old: *old, new: *new, source: msg.source, widened },
                    );
                }
                self.apply_effect(effect.clone());
                if matches!(effect, CommandEffect::LinkRefreshed) {
                    self.link_lost = false;
                }
            }
            Err(e) => {
                self.event(
                    t,
                    Event::Command { command, source: msg.source, accepted: false, reason: Some(e.to_string()) },
                );
            }
        }
        r
    }

    fn apply_effect(&mut self, e: CommandEffect) {
        let est_pos = self.est.position();
        match e {
            CommandEffect::GuidedTarget { position } => {
                self.nav.mode = NavMode::Guided;
                self.nav.position = position;
                self.nav.velocity = Vec3::ZERO;
            }
            CommandEffect::Home { position } => self.nav.home = position,
            CommandEffect::Sticks { input } => {
                if self.nav.mode != NavMode::Pilot {
                    self.nav.mode = NavMode::Pilot;
                    self.nav.position = est_pos;
                }
                self.nav.sticks = Some(input);
            }
            CommandEffect::MissionStarted { waypoints } => {
                self.nav.mode = NavMode::Auto;
                self.nav.wp_index = 0;
                self.nav.position = waypoints[0];
                self.nav.mission = waypoints;
            }
            _ => {}
        }
    }

    fn apply_targets(&mut self, t: f64) {
        while let Some(tp) = self.scenario.targets.get(self.next_target) {
            if tp.time > t + 1e-12 {
                break;
            }
            let tp = tp.clone();
            self.next_target += 1;
            self.nav.mode = tp.mode;
            self.nav.sticks = None;
            if let Some(p) = tp.position {
                self.nav.position = p;
            } else if tp.mode == NavMode::Pilot {
                self.nav.position = self.est.position();
            }
            self.nav.velocity = tp.velocity.unwrap_or(Vec3::ZERO);
            if let Some(y) = tp.yaw {
                self.nav.yaw = wrap_pi(y);
            }
            self.nav.yaw_rate = tp.yaw_rate.unwrap_or(0.0);
            if tp.mode == NavMode::Auto {
                self.nav.mission = vec![self.nav.position];
                self.nav.wp_index = 0;
            }
        }
    }

    fn fire_attacks(&mut self, t: f64) {
        let Some(mut rt) = self.attacks.take() else { return };
        while let Some((index, ev)) = rt.events.get(rt.next).cloned() {
            if ev.time > t + 1e-12 {
                break;
            }
            rt.next += 1;
            let outcome = match &ev.action {
                AttackAction::Inject(msg) => match self.deliver(&mut rt.bus, msg, t) {
                    Ok(effect) => format!("accepted: {}", serde_json::to_string(&effect).unwrap_or_default()),
                    Err(e) => format!("rejected: {e}"),
                },
                AttackAction::Spoof(p) => match rt.spoofer.add(*p) {
                    Ok(()) => format!("spoofing {:?} from t={}", p.target, p.start),
                    Err(e) => format!("rejected: {e}"),
                },
                AttackAction::Stall { duration } => match induce_stall(t, *duration) {
                    Ok(w) => {
                        self.sched.add_stall(w);
                        format!("loop stalled for {duration} s")
                    }
                    Err(e) => format!("rejected: {e}"),
                },
                AttackAction::LimitShift { du_min, du_max } => {
                    let next = (rt.limit_shift.0 + du_min, rt.limit_shift.1 + du_max);
                    let base = (self.params.value("MOT_OUT_MIN"), self.params.value("MOT_OUT_MAX"));
                    match shift_limits(base, next.0, next.1) {
                        Ok((lo, hi)) => {
                            rt.limit_shift = next;
                            format!("mixer limits now ({lo}, {hi})")
                        }
                        Err(e) => format!("rejected: {e}"),
                    }
                }
                AttackAction::TorqueBias(b) => {
                    rt.biases.push((t, *b));
                    "torque bias active".to_string()
                }
            };
            self.event(t, Event::Attack { index, action: ev.action.kind().to_string(), outcome });
        }
        self.attacks = Some(rt);
    }

    fn sync_params(&mut self) {
        if self.params.revision() != self.synced_revision {
            self.stack.sync(&self.params);
            self.est.reconfigure(&estimator_config(&self.params, &self.scenario));
            self.synced_revision = self.params.revision();
        }
    }

    fn period(&self, k: TaskKind) -> f64 {
        self.sched.period(k).expect("all tasks are scheduled")
    }

    fn run_estimator(&mut self, t: f64) {
        let clean = self.sensors.sense(&self.truth, self.plant.g, t);
        let frame = match &mut self.attacks {
            Some(rt) => {
                let (f, err) = rt.spoofer.apply(&clean, t);
                if let Some(crate::attack::AttackError::ReplayUnderrun { needed, available }) = err {
                    self.event(t, Event::ReplayUnderrun { needed, available });
                }
                f
            }
            None => clean,
        };
        let out = self.est.step(&frame, self.truth.attitude);
        for (i, o) in out.iter().enumerate() {
            match *o {
                AxisOutcome::Rejected { ratio } if !self.gate_rejecting[i] => {
                    self.gate_rejecting[i] = true;
                    self.event(t, Event::GateReject { axis: i, ratio });
                }
                AxisOutcome::Accepted(_) if self.gate_rejecting[i] => {
                    self.gate_rejecting[i] = false;
                    self.event(t, Event::GateRecover { axis: i });
                }
                _ => {}
            }
        }
        self.frame = Some(frame);
    }

    fn pilot_velocity(&self) -> (Vec3, f64) {
        match self.nav.sticks {
            Some(rc) => {
                let sxy = self.params.value("PILOT_SPEED_XY");
                let yaw = self.est.attitude.q.to_euler().yaw;
                let (s, c) = yaw.sin_cos();
                let (fwd, right) = (rc.pitch * sxy, rc.roll * sxy);
                let v = Vec3::new(c * fwd - s * right, s * fwd + c * right, -rc.throttle * self.params.value("PILOT_SPEED_Z"));
                (v, rc.yaw * self.params.value("PILOT_YAW_RATE"))
            }
            None => (self.nav.velocity, self.nav.yaw_rate),
        }
    }

    fn run_position(&mut self) {
        let dt = self.period(TaskKind::Position);
        let p = self.est.position();
        if self.nav.mode == NavMode::Auto && !self.nav.mission.is_empty() {
            let radius = self.params.value("WP_RADIUS");
            let last = self.nav.mission.len() - 1;
            if self.nav.wp_index < last && (p - self.nav.position).norm() < radius {
                self.nav.wp_index += 1;
                self.nav.position = self.nav.mission[self.nav.wp_index];
            }
        }
        self.stack.ff_enabled = self.nav.mode.feed_forward();
        if self.nav.mode == NavMode::Pilot {
            let (v, _) = self.pilot_velocity();
            self.sig.v_target = v;
            self.nav.position = p;
            return;
        }
        let target = self.nav.position;
        let v_xy = horizontal_position_step(&mut self.stack, target, Vec3::ZERO, p, dt);
        let (_, v_z) = vertical_position_step(&mut self.stack, target.z, 0.0, 0.0, p.z, dt);
        self.sig.v_target = Vec3::new(v_xy.x, v_xy.y, v_z) + self.nav.velocity;
    }

    fn run_velocity(&mut self) {
        let dt = self.period(TaskKind::Velocity);
        let v = self.est.velocity();
        let vt = self.sig.v_target;
        let a_xy = horizontal_velocity_step(&mut self.stack, vt, Vec3::ZERO, v, Vec3::ZERO, dt);
        let a_z = vertical_velocity_step(&mut self.stack, vt.z, 0.0, 0.0, v.z, 0.0, 0.0, 0.0, dt);
        self.sig.a_target = Vec3::new(a_xy.x, a_xy.y, a_z);
    }

    fn run_attitude(&mut self, t: f64) {
        let dt = self.period(TaskKind::Attitude);
        if self.nav.mode == NavMode::Pilot {
            let (_, rate) = self.pilot_velocity();
            self.nav.yaw = wrap_pi(self.nav.yaw + rate * dt);
            self.nav.yaw_rate = rate;
        }
        let (yaw_t, _) = yaw_slew(&mut self.stack, self.nav.yaw, self.nav.yaw_rate, dt);
        let q_b = self.est.attitude.q;
        let a_h = ned_to_heading(self.sig.a_target, yaw_t);
        let (roll, pitch) = accel_to_lean_angles(a_h, self.plant.g, self.stack.limits.lean_max);
        let q_t = Quaternion::from_euler(EulerAngles::new(roll, pitch, yaw_t));
        self.sig.q_target = q_t;
        let e_body = q_b.rotate_inv(attitude_error(q_t, q_b));
        self.sig.omega_target = attitude_p(&mut self.stack, e_body, dt);

        // first-order filter on the measured vertical acceleration
        let fc = self.params.value("PSC_ACCZ_FILT");
        let alpha = dt / (dt + 1.0 / (2.0 * std::f64::consts::PI * fc));
        self.sig.accz_filt += alpha * (self.est.accel_ned.z - self.sig.accz_filt);
        let t_in = vertical_accel_step(&mut self.stack, self.sig.a_target.z, self.sig.accz_filt, dt, self.sig.saturated);
        let tilt = q_b.tilt();
        self.sig.throttle = match thrust_to_throttle(t_in, self.stack.t_hover, tilt) {
            Ok(th) => {
                self.tilt_limited = false;
                th
            }
            Err(ControlError::TiltTooLarge(a)) => {
                if !self.tilt_limited {
                    self.tilt_limited = true;
                    self.event(t, Event::Tilt { tilt: a });
                }
                thrust_to_throttle(t_in, self.stack.t_hover, MAX_COMPENSATED_TILT).unwrap_or(1.0)
            }
            Err(_) => unreachable!("throttle compensation only fails on tilt"),
        };
    }

    fn run_rate(&mut self, t: f64) {
        let dt = self.period(TaskKind::Rate);
        let gyro = self.frame.as_ref().map_or(self.truth.rates, |f| f.gyro);
        let mut tau = rate_pid(&mut self.stack, self.sig.omega_target, gyro, dt, self.sig.saturated);
        if let Some(rt) = &self.attacks {
            for (t0, b) in &rt.biases {
                tau = apply_torque_bias(tau, b.value(t - t0));
            }
        }
        self.sig.tau = tau;
        self.safety.record_loop(t);
    }

    fn motor_limits(&self) -> (f64, f64) {
        let shift = self.attacks.as_ref().map_or((0.0, 0.0), |rt| rt.limit_shift);
        let lo = self.params.value("MOT_OUT_MIN") + shift.0;
        let hi = self.params.value("MOT_OUT_MAX") + shift.1;
        if lo < hi {
            (lo, hi)
        } else {
            (lo, lo)
        }
    }

    fn run_mixer(&mut self) {
        self.sig.limits = self.motor_limits();
        let cmd = mix(self.sig.throttle, self.sig.tau, self.stack.geometry, self.sig.limits);
        self.sig.saturated = cmd.any_saturated();
        self.sig.motor = cmd;
        self.override_motors();
    }

    /// Disarm, crash and failsafe outputs take precedence over the mixer.
    fn override_motors(&mut self) {
        let level = if self.safety.crash_confirmed || self.safety.stage == FailsafeStage::Shutdown {
            Some(0.0)
        } else if self.safety.stage == FailsafeStage::DisarmedMinThrust {
            Some(self.params.value("MOT_OUT_MIN"))
        } else if !self.safety.armed {
            Some(0.0)
        } else {
            None
        };
        if let Some(u) = level {
            self.sig.motor = MotorCommand { motors: [u; 4], saturated: [false; 4] };
        }
    }

    fn run_safety(&mut self, t: f64) {
        let dt = self.period(TaskKind::Safety);
        let q_b = self.est.attitude.q;
        let f = self.scenario.flags;
        let inputs = SafetyInputs {
            armed: self.safety.armed,
            crash_check_enabled: self.params.flag("FS_CRASH_CHECK"),
            standby: f.standby,
            forced_flight: f.forced_flight,
            angle_stabilized: f.angle_stabilized,
            flipping: f.flipping,
            autorotation: f.autorotation,
            lean: q_b.tilt(),
            accel: self.est.accel_ned.norm(),
            thrust_error: self.sig.q_target.body_z().angle_to(q_b.body_z()),
            horizontal_speed: self.est.velocity().norm_xy(),
            time: t,
        };
        let was = self.safety.crash_confirmed;
        self.safety = crash_check(&inputs, &self.safety, dt);
        if self.safety.crash_confirmed && !was {
            self.event(t, Event::Crash);
            self.override_motors();
        }

        let last_hb = self.attacks.as_ref().and_then(|rt| rt.bus.last_heartbeat);
        if !self.link_lost && safety::link_lost(last_hb, t, self.params.value("FS_HB_TIMEOUT")) {
            self.link_lost = true;
            self.nav.mode = NavMode::Guided;
            self.nav.position = self.nav.home;
            self.nav.velocity = Vec3::ZERO;
            self.safety.actions.push(safety::SafetyAction { time: t, kind: SafetyActionKind::LinkLossReturn });
            self.event(t, Event::LinkLoss);
        }
    }

    fn tick_record(&self, t: f64) -> TickRecord {
        let q_b = self.est.attitude.q;
        let active = self.attacks.as_ref().map_or(0, |rt| {
            rt.spoofer.active_count(t)
                + rt.biases.iter().filter(|(t0, b)| b.duration.is_none_or(|d| t - t0 < d)).count()
                + self.sched.stalls().iter().filter(|w| t >= w.start && t < w.start + w.duration).count()
        });
        TickRecord {
            time: t,
            truth: TruthSnapshot {
                position: self.truth.position,
                velocity: self.truth.velocity,
                attitude: self.truth.attitude.to_euler(),
                rates: self.truth.rates,
                lean: self.truth.attitude.tilt(),
                on_ground: self.truth.on_ground,
            },
            estimate: EstimateSnapshot {
                position: self.est.position(),
                velocity: self.est.velocity(),
                attitude: q_b.to_euler(),
            },
            targets: TargetSnapshot {
                mode: self.nav.mode,
                position: self.nav.position,
                velocity: self.sig.v_target,
                accel: self.sig.a_target,
                attitude: self.sig.q_target.to_euler(),
                rates: self.sig.omega_target,
                throttle: self.sig.throttle,
            },
            motors: self.sig.motor.motors,
            motor_limits: [self.sig.limits.0, self.sig.limits.1],
            saturated: self.sig.motor.saturated,
            safety: SafetySnapshot {
                armed: self.safety.armed,
                crash_counter: self.safety.crash_counter,
                crash_confirmed: self.safety.crash_confirmed,
                stage: self.safety.stage,
            },
            gate: self.est.stats,
            active_attacks: active,
        }
    }

    fn log_tick(&mut self, t: f64) {
        let r = self.tick_record(t);
        self.records.push(Record::Tick(r));
        self.last_logged = Some(t);
    }

    /// Advances one base tick. Returns false once the run has stopped.
    pub fn step(&mut self) -> bool {
        if self.stop.is_some() {
            return false;
        }
        let t = self.time();
        if t >= self.scenario.duration - 1e-12 {
            self.finish(StopReason::Completed, t);
            return false;
        }
        self.apply_targets(t);
        self.fire_attacks(t);
        self.sync_params();

        let plan = self.sched.tick();
        for task in &plan.due {
            match task {
                TaskKind::Estimator => self.run_estimator(t),
                TaskKind::Position => self.run_position(),
                TaskKind::Velocity => self.run_velocity(),
                TaskKind::Attitude => self.run_attitude(t),
                TaskKind::Rate => self.run_rate(t),
                TaskKind::Mixer => self.run_mixer(),
                TaskKind::Safety => self.run_safety(t),
                TaskKind::Logging => self.log_tick(t),
            }
        }

        let motors_active = self.safety.armed && self.sig.motor.motors.iter().any(|&u| u > 0.0);
        let (st, action) = failsafe_check(&self.safety, t, motors_active, self.params.flag("FS_LOOP_CHECK"));
        self.safety = st;
        if action.is_some() {
            self.event(t, Event::Failsafe { stage: self.safety.stage });
            self.override_motors();
        }

        let h = self.sched.dt() / self.substeps as f64;
        for _ in 0..self.substeps {
            match step_dynamics(&self.truth, &self.sig.motor.motors, &self.plant, h) {
                Ok(r) => {
                    if r.clamped && !self.clamp_active {
                        self.event(t, Event::MotorClamp { motors: self.sig.motor.motors });
                    }
                    self.clamp_active = r.clamped;
                    self.truth = r.state;
                }
                Err(e) => {
                    self.event(t, Event::Diverged { reason: e.to_string() });
                    self.finish(StopReason::Diverged, t);
                    return false;
                }
            }
        }

        if self.safety.stage == FailsafeStage::Shutdown {
            self.finish(StopReason::Shutdown, self.time());
            return false;
        }
        true
    }

    fn finish(&mut self, reason: StopReason, t: f64) {
        if self.stop.is_none() {
            self.stop = Some(reason);
            // on divergence the truth still holds the last finite state
            if self.last_logged != Some(t) {
                self.log_tick(t);
            }
        }
    }

    /// Runs to the scenario duration or until the run stops.
    pub fn run(mut self) -> RunOutput {
        while self.step() {}
        self.output()
    }

    pub fn output(&self) -> RunOutput {
        let lines: Vec<String> = self.records.iter().map(Record::to_line).collect();
        let report = RunReport::from_lines(lines.iter().map(String::as_str))
            .expect("engine telemetry always parses");
        RunOutput { lines, report }
    }
}

/// Loads nothing from disk: validates, assembles and runs one scenario.
pub fn run_scenario(s: &Scenario) -> Result<RunOutput, EngineError> {
    Ok(Engine::new(s.clone())?.run())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::Command;

    #[test]
    fn short_hover_holds_position() {
        let out = run_scenario(&Scenario::new("h", 5.0)).unwrap();
        assert!(!out.report.diverged);
        assert!(!out.report.crash_confirmed);
        assert!(out.report.final_position_error < 0.1, "{:?}", out.report);
    }

    #[test]
    fn rejected_command_is_logged() {
        let mut s = Scenario::new("sig", 1.0);
        s.signing_required = true;
        let mut e = Engine::new(s).unwrap();
        let msg = CommandMessage::new(Command::DoReposition { position: Vec3::new(1.0, 0.0, -5.0) }, ParamSource::Attacker, false);
        assert!(e.inject(&msg).is_err());
        assert_eq!(e.guided_target(), Vec3::new(0.0, 0.0, -5.0));
        let out = e.run();
        assert_eq!(out.report.metrics.commands_rejected, 1);
    }

    #[test]
    fn low_loop_rate_substeps_plant() {
        let mut s = Scenario::new("slow", 1.0);
        s.params.insert("SCHED_LOOP_RATE".into(), 100.0);
        let e = Engine::new(s).unwrap();
        assert_eq!(e.substeps, 4);
    }
}
