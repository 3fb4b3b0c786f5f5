use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use quadsec_core::batch::{run_batch, run_file, RunOptions, ScenarioResult, Status};
use quadsec_core::RunReport;

#[derive(Parser)]
#[command(name = "quadsec", version, about = "Run quadrotor attack/failsafe scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Verb,
    /// Override the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (telemetry, summary) or file for `report`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Parallel scenarios for `batch`.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Print only errors.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Verb {
    /// Run one scenario file.
    Run { file: PathBuf },
    /// Run every `*.toml` scenario in a directory.
    Batch { dir: PathBuf },
    /// Recompute the report of a telemetry file.
    Report { telemetry: PathBuf },
}

/// Prints to stdout; a closed pipe (`| head`) is not an error.
macro_rules! say {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

fn print_result(r: &ScenarioResult) {
    let status = format!("{:?}", r.status).to_lowercase();
    match &r.report {
        Some(rep) => say!(
            "{:<24} {:<12} final {:.3} m  rms {:.3} m  lean {:.3} rad  crash {}  failsafe {}",
            r.name, status, rep.final_position_error, rep.metrics.rms_position_error, rep.max_lean,
            rep.crash_confirmed, serde_json::to_value(rep.failsafe_stage).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
        ),
        None => say!("{:<24} {status}", r.file.display()),
    }
    for f in &r.failures {
        say!("    {f}");
    }
}

fn cmd_run(file: &Path, cli: &Cli) -> ExitCode {
    let opts = RunOptions { seed: cli.seed, out_dir: cli.out.clone() };
    let (result, out) = run_file(file, &opts);
    if result.status == Status::ConfigError {
        eprintln!("{}: {}", file.display(), result.failures.join("; "));
        return ExitCode::from(3);
    }
    if !cli.quiet {
        print_result(&result);
        if let (Some(out), None) = (&out, &cli.out) {
            say!("{}", serde_json::to_string_pretty(&out.report).expect("report serializes"));
        }
        if let Some(p) = &result.telemetry {
            say!("telemetry: {}", p.display());
        }
    }
    ExitCode::from(result.status.exit_code() as u8)
}

fn cmd_batch(dir: &Path, cli: &Cli) -> ExitCode {
    let opts = RunOptions { seed: cli.seed, out_dir: cli.out.clone() };
    let summary = match run_batch(dir, cli.jobs, &opts) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("cannot read {}: {e}", dir.display());
            return ExitCode::from(3);
        }
    };
    let csv = summary.to_csv();
    if let Some(out) = &cli.out {
        let path = out.join("summary.csv");
        if let Err(e) = std::fs::write(&path, &csv) {
            eprintln!("cannot write {}: {e}", path.display());
            return ExitCode::from(2);
        }
    }
    if !cli.quiet {
        if cli.out.is_some() {
            for r in &summary.results {
                print_result(r);
            }
        } else {
            let _ = std::io::stdout().lock().write_all(csv.as_bytes());
        }
        say!(
            "{} scenarios: {} pass, {} fail, {} diverged, {} config errors",
            summary.results.len(),
            summary.count(Status::Pass),
            summary.count(Status::Fail),
            summary.count(Status::Diverged),
            summary.count(Status::ConfigError)
        );
    }
    for r in summary.results.iter().filter(|r| r.status == Status::ConfigError) {
        eprintln!("{}: {}", r.file.display(), r.failures.join("; "));
    }
    ExitCode::from(summary.exit_code() as u8)
}

fn cmd_report(path: &Path, cli: &Cli) -> ExitCode {
    let report = match RunReport::from_path(path) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            return ExitCode::from(3);
        }
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    if let Some(out) = &cli.out {
        if let Err(e) = std::fs::write(out, &json) {
            eprintln!("cannot write {}: {e}", out.display());
            return ExitCode::from(2);
        }
    }
    if !cli.quiet {
        say!("{json}");
    }
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        Verb::Run { file } => cmd_run(file, &cli),
        Verb::Batch { dir } => cmd_batch(dir, &cli),
        Verb::Report { telemetry } => cmd_report(telemetry, &cli),
    }
}
