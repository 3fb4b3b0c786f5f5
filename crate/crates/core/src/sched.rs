//! Virtual-time cooperative scheduler.
//!
//! One tick is `1 / base_rate` seconds. Each task has an integer divider of
//! the base rate and fires on ticks that are multiples of it, in a fixed
//! priority order. Stall windows suspend every task while the clock keeps
//! running.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchedError {
    #[error("task {task} rate {rate} Hz outside [1, {base}] Hz")]
    InvalidRate { task: TaskKind, rate: f64, base: f64 },
    #[error("base loop rate {0} Hz outside [50, 1000] Hz")]
    InvalidBaseRate(f64),
}

/// Task identities, declared in execution priority order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Estimator,
    Position,
    Velocity,
    Attitude,
    Rate,
    Mixer,
    Safety,
    Logging,
}

impl TaskKind {
    pub const ALL: [TaskKind; 8] = [
        TaskKind::Estimator,
        TaskKind::Position,
        TaskKind::Velocity,
        TaskKind::Attitude,
        TaskKind::Rate,
        TaskKind::Mixer,
        TaskKind::Safety,
        TaskKind::Logging,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Estimator => "estimator",
            TaskKind::Position => "position",
            TaskKind::Velocity => "velocity",
            TaskKind::Attitude => "attitude",
            TaskKind::Rate => "rate",
            TaskKind::Mixer => "mixer",
            TaskKind::Safety => "safety",
            TaskKind::Logging => "logging",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub rate_hz: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub spec: TaskSpec,
    /// Runs every `divider` ticks.
    pub divider: u64,
    pub last_run: Option<f64>,
    pub count: u64,
}

impl Task {
    /// Effective rate after rounding to an integer divider.
    pub fn effective_rate(&self, base: f64) -> f64 {
        base / self.divider as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StallWindow {
    pub start: f64,
    pub duration: f64,
}

impl StallWindow {
    fn contains(&self, t: f64) -> bool {
        t >= self.start && t < self.start + self.duration
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterSample {
    pub task: TaskKind,
    pub time: f64,
    /// Actual interval minus nominal period, s.
    pub jitter: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScheduleTrace {
    /// Per task, in `TaskKind::ALL` order of the tasks present.
    pub run_times: Vec<(TaskKind, Vec<f64>)>,
    pub jitter: Vec<JitterSample>,
    pub stalls: Vec<StallWindow>,
    /// Ticks skipped because of a stall.
    pub stalled_ticks: u64,
}

impl ScheduleTrace {
    pub fn count(&self, kind: TaskKind) -> usize {
        self.run_times.iter().find(|(k, _)| *k == kind).map_or(0, |(_, v)| v.len())
    }
}

/// Result of one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct TickPlan {
    pub tick: u64,
    pub time: f64,
    pub stalled: bool,
    pub due: Vec<TaskKind>,
}

#[derive(Debug, Clone)]
pub struct Scheduler {
    base_rate: f64,
    tasks: Vec<Task>,
    tick: u64,
    stalls: Vec<StallWindow>,
    warnings: Vec<String>,
    trace: Option<ScheduleTrace>,
    jitter: Vec<JitterSample>,
    stalled_ticks: u64,
}

impl Scheduler {
    pub fn new(base_rate: f64, specs: &[TaskSpec]) -> Result<Self, SchedError> {
        if !(50.0..=1000.0).contains(&base_rate) {
            return Err(SchedError::InvalidBaseRate(base_rate));
        }
        let mut tasks = Vec::with_capacity(specs.len());
        let mut warnings = Vec::new();
        for spec in specs {
            if !(spec.rate_hz >= 1.0 && spec.rate_hz <= base_rate) {
                return Err(SchedError::InvalidRate { task: spec.kind, rate: spec.rate_hz, base: base_rate });
            }
            let exact = base_rate / spec.rate_hz;
            let divider = exact.round();
            let divider = if (exact - divider).abs() < 1e-9 {
                divider as u64
            } else {
                let d = exact.ceil() as u64;
                let msg = format!(
                    "{} rate {} Hz does not divide {} Hz, running at {} Hz",
                    spec.kind,
                    spec.rate_hz,
                    base_rate,
                    base_rate / d as f64
                );
                log::warn!("{msg}");
                warnings.push(msg);
                d
            };
            tasks.push(Task { spec: *spec, divider, last_run: None, count: 0 });
        }
        tasks.sort_by_key(|t| t.spec.kind);
        Ok(Scheduler {
            base_rate,
            tasks,
            tick: 0,
            stalls: Vec::new(),
            warnings,
            trace: None,
            jitter: Vec::new(),
            stalled_ticks: 0,
        })
    }

    /// Keeps per-task run times for [`Scheduler::trace`].
    pub fn record_times(mut self) -> Self {
        let run_times = self.tasks.iter().map(|t| (t.spec.kind, Vec::new())).collect();
        self.trace = Some(ScheduleTrace { run_times, ..ScheduleTrace::default() });
        self
    }

    pub fn base_rate(&self) -> f64 {
        self.base_rate
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.base_rate
    }

    /// Time of the next tick.
    pub fn time(&self) -> f64 {
        self.tick as f64 / self.base_rate
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn task(&self, kind: TaskKind) -> Option<&Task> {
        self.tasks.iter().find(|t| t.spec.kind == kind)
    }

    /// Nominal period of a task, s.
    pub fn period(&self, kind: TaskKind) -> Option<f64> {
        self.task(kind).map(|t| t.divider as f64 / self.base_rate)
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn jitter(&self) -> &[JitterSample] {
        &self.jitter
    }

    pub fn stalls(&self) -> &[StallWindow] {
        &self.stalls
    }

    pub fn add_stall(&mut self, w: StallWindow) {
        self.stalls.push(w);
    }

    pub fn is_stalled(&self, t: f64) -> bool {
        self.stalls.iter().any(|w| w.contains(t))
    }

    /// Advances the clock by one tick and returns the tasks to run now.
    pub fn tick(&mut self) -> TickPlan {
        let k = self.tick;
        let time = self.time();
        self.tick += 1;
        if self.is_stalled(time) {
            self.stalled_ticks += 1;
            return TickPlan { tick: k, time, stalled: true, due: Vec::new() };
        }
        let mut due = Vec::new();
        for t in &mut self.tasks {
            if !k.is_multiple_of(t.divider) {
                continue;
            }
            let period = t.divider as f64 / self.base_rate;
            if let Some(prev) = t.last_run {
                let j = (time - prev) - period;
                if j.abs() > 1e-9 {
                    self.jitter.push(JitterSample { task: t.spec.kind, time, jitter: j });
                }
            }
            t.last_run = Some(time);
            t.count += 1;
            if let Some(tr) = &mut self.trace {
                if let Some((_, v)) = tr.run_times.iter_mut().find(|(kind, _)| *kind == t.spec.kind) {
                    v.push(time);
                }
            }
            due.push(t.spec.kind);
        }
        TickPlan { tick: k, time, stalled: false, due }
    }

    /// Snapshot of the trace so far (run times only when recording).
    pub fn trace(&self) -> ScheduleTrace {
        let mut tr = self.trace.clone().unwrap_or_default();
        tr.jitter = self.jitter.clone();
        tr.stalls = self.stalls.clone();
        tr.stalled_ticks = self.stalled_ticks;
        tr
    }
}

/// Default pipeline rates, capped at the base rate.
pub fn default_tasks(base_rate: f64) -> Vec<TaskSpec> {
    let r = |kind, hz: f64| TaskSpec { kind, rate_hz: hz.min(base_rate) };
    vec![
        r(TaskKind::Estimator, base_rate),
        r(TaskKind::Position, 50.0),
        r(TaskKind::Velocity, 100.0),
        r(TaskKind::Attitude, base_rate),
        r(TaskKind::Rate, base_rate),
        r(TaskKind::Mixer, base_rate),
        r(TaskKind::Safety, 10.0),
        r(TaskKind::Logging, 10.0),
    ]
}

/// Runs bare tasks for `duration` seconds and returns the trace.
pub fn run(tasks: &[TaskSpec], base_rate: f64, duration: f64, stalls: &[StallWindow]) -> Result<ScheduleTrace, SchedError> {
    let mut s = Scheduler::new(base_rate, tasks)?.record_times();
    for w in stalls {
        s.add_stall(*w);
    }
    let ticks = (duration * base_rate).round() as u64;
    for _ in 0..ticks {
        s.tick();
    }
    Ok(s.trace())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: TaskKind, rate_hz: f64) -> TaskSpec {
        TaskSpec { kind, rate_hz }
    }

    #[test]
    fn counts_follow_rates() {
        let tr = run(&[spec(TaskKind::Rate, 400.0), spec(TaskKind::Position, 50.0)], 400.0, 1.0, &[]).unwrap();
        assert_eq!(tr.count(TaskKind::Rate), 400);
        assert_eq!(tr.count(TaskKind::Position), 50);
        assert_eq!(tr.count(TaskKind::Rate) / tr.count(TaskKind::Position), 8);
        assert!(tr.jitter.is_empty());
    }

    #[test]
    fn priority_order_within_tick() {
        let mut s = Scheduler::new(400.0, &default_tasks(400.0)).unwrap();
        let plan = s.tick();
        assert_eq!(plan.due, TaskKind::ALL.to_vec());
    }

    #[test]
    fn stall_suspends_everything() {
        let w = StallWindow { start: 0.5, duration: 2.5 };
        let tr = run(&[spec(TaskKind::Rate, 400.0), spec(TaskKind::Safety, 10.0)], 400.0, 4.0, &[w]).unwrap();
        for (_, times) in &tr.run_times {
            assert!(times.iter().all(|&t| !(0.5..3.0).contains(&t)));
        }
        let gap = tr.jitter.iter().find(|j| j.task == TaskKind::Rate).unwrap();
        assert!((gap.jitter - 2.5).abs() < 1e-9);
        assert_eq!(tr.stalled_ticks, 1000);
    }

    #[test]
    fn rate_above_base_is_rejected() {
        let e = Scheduler::new(100.0, &[spec(TaskKind::Rate, 400.0)]).unwrap_err();
        assert!(matches!(e, SchedError::InvalidRate { .. }));
        assert!(matches!(Scheduler::new(2000.0, &[]), Err(SchedError::InvalidBaseRate(_))));
    }

    #[test]
    fn non_dividing_rate_rounds_down_with_warning() {
        let s = Scheduler::new(400.0, &[spec(TaskKind::Position, 60.0)]).unwrap();
        let t = s.task(TaskKind::Position).unwrap();
        assert_eq!(t.divider, 7);
        assert!(t.effective_rate(400.0) <= 60.0);
        assert_eq!(s.warnings().len(), 1);
    }

    #[test]
    fn run_times_strictly_increase() {
        let tr = run(&default_tasks(400.0), 400.0, 2.0, &[StallWindow { start: 0.3, duration: 0.2 }]).unwrap();
        for (_, v) in &tr.run_times {
            assert!(v.windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn identical_runs_identical_traces() {
        let stalls = [StallWindow { start: 0.1, duration: 0.05 }];
        let a = run(&default_tasks(400.0), 400.0, 1.0, &stalls).unwrap();
        let b = run(&default_tasks(400.0), 400.0, 1.0, &stalls).unwrap();
        assert_eq!(a, b);
    }
}
