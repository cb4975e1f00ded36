use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bicon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bicon"))
        .args(args)
        .env_remove("BICON_SEED")
        .output()
        .unwrap()
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn check_on_a_cycle_passes_everywhere() {
    let dir = tempfile::tempdir().unwrap();
    let g = write(dir.path(), "c4.txt", "# nodes: 4\n0 1\n1 2\n2 3\n3 0\n");
    let out = dir.path().join("out");
    let o = bicon(&["check", arg(&g), "--epsilon", "0.01", "--out", arg(&out)]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(String::from_utf8_lossy(&o.stdout).contains("passed: 4/4"));
    let rows = json(out.join("verdicts.json"));
    assert_eq!(rows.as_array().unwrap().len(), 4);
    assert!(rows.as_array().unwrap().iter().all(|r| r["passed"] == true));
    let csv = fs::read_to_string(out.join("verdicts.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn analyze_reports_cut_vertex_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let g = write(dir.path(), "p3.txt", "# nodes: 3\n0 1 0.5\n1 2 2.0\n");
    let out = dir.path().join("a");
    let o = bicon(&["analyze", arg(&g), "--out", arg(&out)]);
    assert_eq!(o.status.code(), Some(0));
    let summary = json(out.join("summary.json"));
    assert_eq!(summary["articulation_points"], serde_json::json!([1]));
    assert_eq!(summary["biconnected"], false);

    // the exported edge list describes the same graph
    let again = dir.path().join("b");
    assert_eq!(
        bicon(&["analyze", arg(&out.join("graph.txt")), "--out", arg(&again)])
            .status
            .code(),
        Some(0)
    );
    assert_eq!(json(again.join("summary.json")), summary);
    assert_eq!(
        fs::read_to_string(out.join("graph.txt")).unwrap(),
        fs::read_to_string(again.join("graph.txt")).unwrap()
    );
}

#[test]
fn positions_build_the_disk_graph() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "p.txt", "0 0\n0.3 0\n0.6 0\n");
    let out = dir.path().join("o");
    let o = bicon(&["analyze", arg(&p), "--positions", "--out", arg(&out)]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(json(out.join("summary.json"))["edges"], 2);
    let o = bicon(&[
        "analyze",
        arg(&p),
        "--positions",
        "--radius",
        "0.7",
        "--out",
        arg(&out),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(json(out.join("summary.json"))["edges"], 3);
}

#[test]
fn estimate_converges_with_enough_time() {
    let dir = tempfile::tempdir().unwrap();
    let g = write(dir.path(), "p4.txt", "# nodes: 4\n0 1\n1 2\n2 3\n");
    let out = dir.path().join("e");
    let o = bicon(&[
        "estimate",
        arg(&g),
        "--eigen-index",
        "2",
        "--max-duration",
        "200",
        "--out",
        arg(&out),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let s = json(out.join("summary.json"));
    assert_eq!(s["converged"], true);
    let est: Vec<f64> = serde_json::from_value(s["estimate"].clone()).unwrap();
    let reference: Vec<f64> = serde_json::from_value(s["reference"].clone()).unwrap();
    let dot: f64 = est.iter().zip(&reference).map(|(a, b)| a * b).sum();
    let norm: f64 = est.iter().map(|a| a * a).sum::<f64>().sqrt();
    assert!((dot / norm).abs() > 0.999);
    let samples = fs::read_to_string(out.join("estimator.csv")).unwrap();
    assert!(samples.starts_with("t,agent,component,value\n"));
    assert_eq!((samples.lines().count() - 1) % 16, 0);
}

#[test]
fn run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = bicon(&["run", arg(&scenario("bowtie.toml")), "--out", arg(&out)]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    for f in [
        "config.toml",
        "trajectory.csv",
        "events.jsonl",
        "controller.csv",
        "summary.json",
    ] {
        assert!(out.join(f).is_file(), "{f}");
    }
    assert_eq!(json(out.join("summary.json"))["biconnected"], true);
    // the resolved config reproduces the run
    let again = dir.path().join("again");
    assert_eq!(
        bicon(&["run", arg(&out.join("config.toml")), "--out", arg(&again)])
            .status
            .code(),
        Some(0)
    );
    assert_eq!(
        fs::read(out.join("trajectory.csv")).unwrap(),
        fs::read(again.join("trajectory.csv")).unwrap()
    );
}

#[test]
fn exit_codes_distinguish_failures() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let missing = dir.path().join("nope.toml");
    assert_eq!(
        bicon(&["run", arg(&missing), "--out", arg(&out)])
            .status
            .code(),
        Some(1)
    );
    let bad = write(dir.path(), "bad.toml", "dt = -1.0\n");
    assert_eq!(
        bicon(&["run", arg(&bad), "--out", arg(&out)]).status.code(),
        Some(2)
    );
    let unknown = write(dir.path(), "unknown.toml", "speed = 3\n");
    assert_eq!(
        bicon(&["run", arg(&unknown), "--out", arg(&out)])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(bicon(&["check", "--bogus"]).status.code(), Some(2));
    let garbage = write(dir.path(), "g.txt", "0 x\n");
    let o = bicon(&["analyze", arg(&garbage), "--out", arg(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!o.stderr.is_empty());
    let g = write(dir.path(), "k2.txt", "0 1\n");
    assert_eq!(
        bicon(&["check", arg(&g), "--epsilon", "0", "--out", arg(&out)])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(bicon(&["--help"]).status.code(), Some(0));
}
