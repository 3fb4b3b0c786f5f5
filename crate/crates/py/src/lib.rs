//! Python bindings. Structured values (reports, states, commands) cross the
//! boundary as plain dicts and lists.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyString;
use serde::Serialize;

use quadsec_core::attack::CommandMessage;
use quadsec_core::batch::{self, RunOptions};
use quadsec_core::engine::{self, StopReason};
use quadsec_core::{wrap_pi, EulerAngles, ParamSource, Quaternion, RunReport};

fn to_py<T: Serialize>(py: Python<'_>, v: &T) -> PyResult<PyObject> {
    let s = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (s,))?.unbind())
}

/// Accepts either a JSON string or any JSON-serializable Python value.
fn json_arg(py: Python<'_>, v: &Bound<'_, PyAny>) -> PyResult<String> {
    if let Ok(s) = v.downcast::<PyString>() {
        return Ok(s.to_str()?.to_owned());
    }
    py.import("json")?.call_method1("dumps", (v,))?.extract()
}

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_source(s: &str) -> PyResult<ParamSource> {
    serde_json::from_value(serde_json::Value::String(s.to_owned()))
        .map_err(|_| PyValueError::new_err(format!("unknown source {s:?} (pilot, gcs, attacker)")))
}

/// A validated scenario.
#[pyclass(name = "Scenario", module = "quadsec")]
#[derive(Clone)]
struct PyScenario {
    inner: quadsec_core::Scenario,
}

#[pymethods]
impl PyScenario {
    /// Attack-free scenario with default settings.
    #[new]
    fn new(name: &str, duration: f64) -> PyResult<Self> {
        let inner = quadsec_core::Scenario::new(name, duration);
        inner.validate().map_err(value_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_toml(src: &str) -> PyResult<Self> {
        quadsec_core::Scenario::from_toml_str(src).map(|inner| Self { inner }).map_err(value_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        quadsec_core::Scenario::load(&path).map(|inner| Self { inner }).map_err(value_err)
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    #[getter]
    fn duration(&self) -> f64 {
        self.inner.duration
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    /// Fully resolved configuration.
    fn config(&self, py: Python<'_>) -> PyResult<PyObject> {
        to_py(py, &self.inner.config_echo())
    }

    /// Runs to completion and returns a `RunResult`.
    fn run(&self) -> PyResult<RunResult> {
        engine::run_scenario(&self.inner).map(RunResult::from).map_err(value_err)
    }

    fn __repr__(&self) -> String {
        format!("Scenario(name={:?}, duration={}, seed={})", self.inner.name, self.inner.duration, self.inner.seed)
    }
}

/// Telemetry and report of a finished run.
#[pyclass(module = "quadsec")]
struct RunResult {
    out: engine::RunOutput,
}

impl From<engine::RunOutput> for RunResult {
    fn from(out: engine::RunOutput) -> Self {
        Self { out }
    }
}

#[pymethods]
impl RunResult {
    fn report(&self, py: Python<'_>) -> PyResult<PyObject> {
        to_py(py, &self.out.report)
    }

    /// Telemetry as JSON lines.
    fn telemetry(&self) -> Vec<String> {
        self.out.lines.clone()
    }

    fn write_telemetry(&self, path: PathBuf) -> PyResult<()> {
        std::fs::write(path, self.out.telemetry()).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    #[getter]
    fn diverged(&self) -> bool {
        self.out.report.diverged
    }

    #[getter]
    fn crashed(&self) -> bool {
        self.out.report.crash_confirmed
    }

    #[getter]
    fn final_position_error(&self) -> f64 {
        self.out.report.final_position_error
    }
}

/// Step-by-step simulation.
#[pyclass(name = "Engine", module = "quadsec", unsendable)]
struct PyEngine {
    inner: Option<engine::Engine>,
}

impl PyEngine {
    fn get(&self) -> PyResult<&engine::Engine> {
        self.inner.as_ref().ok_or_else(|| PyRuntimeError::new_err("engine already finished"))
    }

    fn get_mut(&mut self) -> PyResult<&mut engine::Engine> {
        self.inner.as_mut().ok_or_else(|| PyRuntimeError::new_err("engine already finished"))
    }
}

#[pymethods]
impl PyEngine {
    #[new]
    #[pyo3(signature = (scenario, attacks = true))]
    fn new(scenario: &PyScenario, attacks: bool) -> PyResult<Self> {
        let s = scenario.inner.clone();
        let e = if attacks { engine::Engine::new(s) } else { engine::Engine::without_attacks(s) };
        e.map(|e| Self { inner: Some(e) }).map_err(value_err)
    }

    /// Advances one base-rate tick. Returns False once the run has stopped.
    fn step(&mut self) -> PyResult<bool> {
        Ok(self.get_mut()?.step())
    }

    /// Steps until `time` (or the run stops). Returns the number of ticks.
    fn run_until(&mut self, time: f64) -> PyResult<usize> {
        let e = self.get_mut()?;
        let mut n = 0;
        while e.time() < time && e.step() {
            n += 1;
        }
        Ok(n)
    }

    #[getter]
    fn time(&self) -> PyResult<f64> {
        Ok(self.get()?.time())
    }

    /// None while running, else "completed", "shutdown" or "diverged".
    #[getter]
    fn stopped(&self) -> PyResult<Option<&'static str>> {
        Ok(self.get()?.stopped().map(|r| match r {
            StopReason::Completed => "completed",
            StopReason::Shutdown => "shutdown",
            StopReason::Diverged => "diverged",
        }))
    }

    /// True state: position, velocity, euler [roll, pitch, yaw], rates, motors.
    fn truth(&self, py: Python<'_>) -> PyResult<PyObject> {
        let s = self.get()?.truth();
        let euler: [f64; 3] = s.attitude.to_euler().into();
        to_py(
            py,
            &serde_json::json!({
                "position": <[f64; 3]>::from(s.position),
                "velocity": <[f64; 3]>::from(s.velocity),
                "attitude": euler,
                "rates": <[f64; 3]>::from(s.rates),
                "motors": s.motors,
                "on_ground": s.on_ground,
            }),
        )
    }

    /// Estimated position, velocity and gate statistics.
    fn estimate(&self, py: Python<'_>) -> PyResult<PyObject> {
        let est = self.get()?.estimator();
        let rejected: Vec<u64> = est.stats.iter().map(|s| s.rejected).collect();
        to_py(
            py,
            &serde_json::json!({
                "position": <[f64; 3]>::from(est.position()),
                "velocity": <[f64; 3]>::from(est.velocity()),
                "gate_rejections": rejected,
            }),
        )
    }

    fn param(&self, name: &str) -> PyResult<f64> {
        self.get()?.params().get(name).map_err(value_err)
    }

    #[pyo3(signature = (name, value, source = "gcs"))]
    fn set_param(&mut self, name: &str, value: f64, source: &str) -> PyResult<()> {
        let src = parse_source(source)?;
        self.get_mut()?.set_param(name, value, src).map_err(value_err)
    }

    /// Delivers a command message (dict or JSON string) and returns its effect.
    fn inject(&mut self, py: Python<'_>, message: &Bound<'_, PyAny>) -> PyResult<PyObject> {
        let msg: CommandMessage = serde_json::from_str(&json_arg(py, message)?).map_err(value_err)?;
        let effect = self.get_mut()?.inject(&msg).map_err(value_err)?;
        to_py(py, &effect)
    }

    /// Telemetry recorded so far.
    fn telemetry(&self) -> PyResult<Vec<String>> {
        Ok(self.get()?.records().iter().map(|r| r.to_line()).collect())
    }

    /// Runs to the end and returns the `RunResult`. The engine is consumed.
    fn finish(&mut self) -> PyResult<RunResult> {
        let e = self.inner.take().ok_or_else(|| PyRuntimeError::new_err("engine already finished"))?;
        Ok(e.run().into())
    }
}

/// Report recomputed from telemetry lines (list of str) or a file path.
#[pyfunction]
fn report_from_telemetry(py: Python<'_>, source: &Bound<'_, PyAny>) -> PyResult<PyObject> {
    let report = if let Ok(lines) = source.extract::<Vec<String>>() {
        RunReport::from_lines(lines.iter().map(String::as_str))
    } else {
        RunReport::from_path(&source.extract::<PathBuf>()?)
    };
    to_py(py, &report.map_err(value_err)?)
}

/// Runs every scenario in `dir`; returns (exit_code, summary_csv).
#[pyfunction]
#[pyo3(signature = (dir, jobs = 1, seed = None, out_dir = None))]
fn run_batch(
    py: Python<'_>,
    dir: PathBuf,
    jobs: usize,
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
) -> PyResult<(i32, String)> {
    let opts = RunOptions { seed, out_dir };
    let s = py
        .allow_threads(|| batch::run_batch(&dir, jobs, &opts))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok((s.exit_code(), s.to_csv()))
}

/// Z-Y-X euler angles [roll, pitch, yaw] of a scalar-first quaternion.
#[pyfunction]
fn quat_to_euler(q: [f64; 4]) -> [f64; 3] {
    Quaternion::from(q).normalized().to_euler().into()
}

#[pyfunction]
fn euler_to_quat(e: [f64; 3]) -> [f64; 4] {
    Quaternion::from_euler(EulerAngles::from(e)).into()
}

#[pyfunction(name = "wrap_pi")]
fn py_wrap_pi(a: f64) -> f64 {
    wrap_pi(a)
}

#[pymodule]
fn quadsec(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_class::<PyEngine>()?;
    m.add_class::<RunResult>()?;
    m.add_function(wrap_pyfunction!(report_from_telemetry, m)?)?;
    m.add_function(wrap_pyfunction!(run_batch, m)?)?;
    m.add_function(wrap_pyfunction!(quat_to_euler, m)?)?;
    m.add_function(wrap_pyfunction!(euler_to_quat, m)?)?;
    m.add_function(wrap_pyfunction!(py_wrap_pi, m)?)?;
    Ok(())
}
