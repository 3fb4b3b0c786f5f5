//! Single-file and directory runs with expectation checks, telemetry
//! persistence and a CSV summary.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::engine::{Engine, RunOutput};
use crate::safety::FailsafeStage;
use crate::scenario::{load_scenario, Expectations};
use crate::telemetry::RunReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Diverged,
    ConfigError,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Pass => 0,
            Status::Fail => 1,
            Status::Diverged => 2,
            Status::ConfigError => 3,
        }
    }
}

/// Violated expectations, one message each.
pub fn check_expectations(e: &Expectations, r: &RunReport) -> Vec<String> {
    let mut out = Vec::new();
    if let Some(c) = e.crash {
        if c != r.crash_confirmed {
            out.push(format!("crash expected {c}, got {}", r.crash_confirmed));
        }
    }
    if let Some(d) = e.diverged {
        if d != r.diverged {
            out.push(format!("diverged expected {d}, got {}", r.diverged));
        }
    }
    if let Some(s) = e.failsafe_stage {
        if s != r.failsafe_stage {
            out.push(format!("failsafe stage expected {s:?}, got {:?}", r.failsafe_stage));
        }
    }
    if let Some(m) = e.max_final_error {
        if r.final_position_error > m {
            out.push(format!("final error {:.4} > {m}", r.final_position_error));
        }
    }
    if let Some(m) = e.max_rms_error {
        if r.metrics.rms_position_error > m {
            out.push(format!("rms error {:.4} > {m}", r.metrics.rms_position_error));
        }
    }
    if let Some(m) = e.max_lean {
        if r.max_lean > m {
            out.push(format!("max lean {:.4} > {m}", r.max_lean));
        }
    }
    if let Some(m) = e.min_gate_rejections {
        if r.metrics.gate_rejections < m {
            out.push(format!("gate rejections {} < {m}", r.metrics.gate_rejections));
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub file: PathBuf,
    pub name: String,
    pub seed: Option<u64>,
    pub status: Status,
    pub report: Option<RunReport>,
    pub failures: Vec<String>,
    pub telemetry: Option<PathBuf>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    /// Directory for `<stem>.jsonl` telemetry files.
    pub out_dir: Option<PathBuf>,
}

fn classify(expect: &Expectations, report: &RunReport) -> (Status, Vec<String>) {
    let failures = check_expectations(expect, report);
    let status = if report.diverged && expect.diverged != Some(true) {
        Status::Diverged
    } else if failures.is_empty() {
        Status::Pass
    } else {
        Status::Fail
    };
    (status, failures)
}

fn telemetry_path(out: &Path, file: &Path) -> PathBuf {
    let stem = file.file_stem().map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned());
    out.join(format!("{stem}.jsonl"))
}

/// Loads, runs and checks one scenario file. Never panics on bad input.
pub fn run_file(path: &Path, opts: &RunOptions) -> (ScenarioResult, Option<RunOutput>) {
    let mut result = ScenarioResult {
        file: path.to_path_buf(),
        name: String::new(),
        seed: None,
        status: Status::ConfigError,
        report: None,
        failures: Vec::new(),
        telemetry: None,
    };
    let mut scenario = match load_scenario(path) {
        Ok(s) => s,
        Err(e) => {
            result.failures.push(e.to_string());
            return (result, None);
        }
    };
    if let Some(seed) = opts.seed {
        scenario.seed = seed;
    }
    result.name = scenario.name.clone();
    result.seed = Some(scenario.seed);
    let expect = scenario.expect.clone();
    let engine = match Engine::new(scenario) {
        Ok(e) => e,
        Err(e) => {
            result.failures.push(e.to_string());
            return (result, None);
        }
    };
    let out = engine.run();
    let (status, failures) = classify(&expect, &out.report);
    result.status = status;
    result.failures = failures;
    result.report = Some(out.report.clone());
    if let Some(dir) = &opts.out_dir {
        let p = telemetry_path(dir, path);
        match std::fs::create_dir_all(dir).and_then(|_| std::fs::write(&p, out.telemetry())) {
            Ok(()) => result.telemetry = Some(p),
            Err(e) => {
                result.status = result.status.max(Status::Diverged);
                result.failures.push(format!("cannot write {}: {e}", p.display()));
            }
        }
    }
    (result, Some(out))
}

fn stage_name(s: FailsafeStage) -> String {
    serde_json::to_value(s).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

#[derive(Debug, Clone, Default)]
pub struct BatchSummary {
    pub results: Vec<ScenarioResult>,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    file: String,
    name: &'a str,
    seed: Option<u64>,
    status: Status,
    final_position_error: Option<f64>,
    rms_position_error: Option<f64>,
    max_lean: Option<f64>,
    crash: Option<bool>,
    failsafe_stage: Option<String>,
    diverged: Option<bool>,
    failures: String,
}

impl BatchSummary {
    /// Worst status across the batch as a process exit code.
    pub fn exit_code(&self) -> i32 {
        self.results.iter().map(|r| r.status).max().unwrap_or(Status::Pass).exit_code()
    }

    pub fn count(&self, s: Status) -> usize {
        self.results.iter().filter(|r| r.status == s).count()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        if self.results.is_empty() {
            w.write_record([
                "file",
                "name",
                "seed",
                "status",
                "final_position_error",
                "rms_position_error",
                "max_lean",
                "crash",
                "failsafe_stage",
                "diverged",
                "failures",
            ])
            .expect("in-memory csv");
        }
        for r in &self.results {
            let rep = r.report.as_ref();
            w.serialize(CsvRow {
                file: r.file.file_name().map_or_else(String::new, |f| f.to_string_lossy().into_owned()),
                name: &r.name,
                seed: r.seed,
                status: r.status,
                final_position_error: rep.map(|x| x.final_position_error),
                rms_position_error: rep.map(|x| x.metrics.rms_position_error),
                max_lean: rep.map(|x| x.max_lean),
                crash: rep.map(|x| x.crash_confirmed),
                failsafe_stage: rep.map(|x| stage_name(x.failsafe_stage)),
                diverged: rep.map(|x| x.diverged),
                failures: r.failures.join("; "),
            })
            .expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
    }
}

/// Scenario files (`*.toml`) in `dir`, sorted by name.
pub fn scenario_files(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "toml"))
        .collect();
    files.sort();
    Ok(files)
}

/// Runs every scenario in `dir` on up to `jobs` threads. Per-scenario
/// errors are recorded in the summary; only an unreadable directory is an
/// error.
pub fn run_batch(dir: &Path, jobs: usize, opts: &RunOptions) -> std::io::Result<BatchSummary> {
    let files = scenario_files(dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(std::io::Error::other)?;
    let results = pool.install(|| files.par_iter().map(|f| run_file(f, opts).0).collect());
    Ok(BatchSummary { results })
}
