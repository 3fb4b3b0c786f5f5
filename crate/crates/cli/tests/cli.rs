use std::path::PathBuf;
use std::process::{Command, Output};

fn quadsec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quadsec")).args(args).output().unwrap()
}

fn scenarios() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn arg(p: &std::path::Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_telemetry_and_report_round_trips() {
    let out = tempfile::tempdir().unwrap();
    let r = quadsec(&["run", arg(&scenarios().join("hover.toml")), "--out", arg(out.path())]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    let tele = out.path().join("hover.jsonl");
    assert!(tele.is_file());

    let json = out.path().join("report.json");
    let r = quadsec(&["report", arg(&tele), "--out", arg(&json), "--quiet"]);
    assert_eq!(r.status.code(), Some(0));
    assert!(r.stdout.is_empty());
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(rep["crash_confirmed"], false);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "name = \"bad\"\nduration = 0\n").unwrap();
    assert_eq!(quadsec(&["run", arg(&bad)]).status.code(), Some(3));
    assert_eq!(quadsec(&["run", arg(&dir.path().join("missing.toml"))]).status.code(), Some(3));

    let fail = dir.path().join("fail.toml");
    std::fs::write(&fail, "name = \"f\"\nduration = 1.0\n[expect]\ncrash = true\n").unwrap();
    assert_eq!(quadsec(&["run", arg(&fail), "--quiet"]).status.code(), Some(1));

    // config error outranks expectation failure
    assert_eq!(quadsec(&["batch", arg(dir.path()), "--quiet"]).status.code(), Some(3));

    assert_eq!(quadsec(&["report", arg(&bad)]).status.code(), Some(3));
    assert_eq!(quadsec(&["bogus"]).status.code(), Some(2));
}

#[test]
fn empty_batch_is_clean() {
    let dir = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let r = quadsec(&["batch", arg(dir.path()), "--out", arg(out.path())]);
    assert_eq!(r.status.code(), Some(0));
    let csv = std::fs::read_to_string(out.path().join("summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
}

#[test]
fn batch_csv_goes_to_stdout_and_respects_seed() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(scenarios().join("hover_noisy.toml"), dir.path().join("a.toml")).unwrap();
    let r = quadsec(&["batch", arg(dir.path()), "--seed", "5", "--jobs", "2"]);
    assert_eq!(r.status.code(), Some(0));
    let text = String::from_utf8(r.stdout).unwrap();
    let row = text.lines().nth(1).unwrap();
    assert!(row.starts_with("a.toml,hover_noisy,5,pass,"), "{row}");
}
