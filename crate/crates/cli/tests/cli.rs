use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const CONFIG: &str = r#"
schema_version = 1
seed = 42
calibration_size = 8
deltas = [0.1, 0.2]
schemes = ["constant", "band"]

[counts]
success_id = 16
success_ood = 2
fail_id = 4
fail_ood = 2

[rnd]
width_scale = 0.015625
out_dim = 8

[train]
epochs = 2
batch_size = 32
lr = 0.001

[windows]
sweep = [1, 2, 3]
"#;

fn rmon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rmon"))
        .args(args)
        .env_remove("RMON_SEED")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = rmon(args);
    assert!(
        out.status.success(),
        "rmon {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Run {
    dir: tempfile::TempDir,
}

impl Run {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("run.toml"), CONFIG).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn prepare(&self) {
        let (cfg, data, calib, rnd) = (
            self.path("run.toml"),
            self.path("data.jsonl"),
            self.path("calib.jsonl"),
            self.path("rnd.json"),
        );
        ok(&["simulate", "--config", s(&cfg), "--out", s(&data), "--calib-out", s(&calib)]);
        ok(&["train-rnd", "--config", s(&cfg), "--traces", s(&calib), "--out", s(&rnd)]);
    }

    fn evaluate(&self, traces: &str, out: &str) -> Output {
        ok(&[
            "evaluate",
            "--config",
            s(&self.path("run.toml")),
            "--traces",
            s(&self.path(traces)),
            "--calib",
            s(&self.path("calib.jsonl")),
            "--rnd",
            s(&self.path("rnd.json")),
            "--out",
            s(&self.path(out)),
        ])
    }
}

#[test]
fn pipeline_is_byte_reproducible() {
    let a = Run::new();
    let b = Run::new();
    a.prepare();
    b.prepare();
    a.evaluate("data.jsonl", "report.csv");
    b.evaluate("data.jsonl", "report.csv");
    for f in ["data.jsonl", "calib.jsonl", "rnd.json", "report.csv"] {
        let x = std::fs::read(a.path(f)).unwrap();
        let y = std::fs::read(b.path(f)).unwrap();
        assert!(x == y, "{f} differs between identical runs");
    }
    let csv = std::fs::read_to_string(a.path("report.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("# mode=and")));
    assert!(csv.contains("constant") && csv.contains("band"));
}

#[test]
fn overlapping_calibration_warns_and_continues() {
    let run = Run::new();
    run.prepare();
    let out = run.evaluate("calib.jsonl", "overlap.csv");
    let stderr = String::from_utf8_lossy(&out.stderr);
    let warning: Value = stderr
        .lines()
        .filter_map(|l| serde_json::from_str::<Value>(l).ok())
        .find(|v| v["kind"] == "calibration_overlap")
        .expect("overlap warning on stderr");
    assert_eq!(warning["level"], "warning");
    assert_eq!(warning["detail"]["count"], 8);
    assert!(run.path("overlap.csv").exists());
}

#[test]
fn calibrate_then_monitor_emits_one_record_per_rollout() {
    let run = Run::new();
    run.prepare();
    let prefix = run.path("profile");
    ok(&[
        "calibrate",
        "--config",
        s(&run.path("run.toml")),
        "--traces",
        s(&run.path("calib.jsonl")),
        "--rnd",
        s(&run.path("rnd.json")),
        "--scheme",
        "constant",
        "--delta",
        "0.1",
        "--out",
        s(&prefix),
    ]);
    let out = ok(&[
        "monitor",
        "--traces",
        s(&run.path("data.jsonl")),
        "--rnd",
        s(&run.path("rnd.json")),
        "--profile-obs",
        s(&run.path("profile.obs.json")),
        "--profile-act",
        s(&run.path("profile.act.json")),
        "--mode",
        "or",
    ]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<Value> = stdout.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let header = &lines[0];
    assert_eq!(header["mode"], "or");
    assert!(header["config_hash"].is_string());
    // 24 rollouts minus the 8 split off for calibration.
    assert_eq!(lines.len() - 1, 16);
    for rec in &lines[1..] {
        assert!(rec["id"].is_string());
        assert_eq!(rec["flagged"].as_bool().unwrap(), !rec["t_star"].is_null());
    }
}

#[test]
fn errors_are_json_records_with_nonzero_exit() {
    let out = rmon(&["train-rnd", "--traces", "/nonexistent/traces.jsonl", "--out", "/tmp/x.json"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    let rec: Value = serde_json::from_str(stderr.lines().last().unwrap()).unwrap();
    assert_eq!(rec["level"], "error");
    assert!(rec["kind"].is_string());
    assert!(rec["error"].as_str().unwrap().contains("nonexistent"));
}

#[test]
fn bad_config_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "schema_version = 1\nunknown_key = 3\n").unwrap();
    let out = rmon(&["simulate", "--config", s(&cfg), "--out", s(&dir.path().join("o.jsonl"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("\"level\":\"error\""));
}

#[test]
fn unknown_subcommand_prints_usage() {
    let out = rmon(&["frobnicate"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}
