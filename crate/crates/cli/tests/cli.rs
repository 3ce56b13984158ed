//! End-to-end checks of the command-line surface: exit codes, diagnostics,
//! and the files a run leaves behind.

use std::process::Command;

fn airband() -> Command {
    Command::new(env!("CARGO_BIN_EXE_airband"))
}

#[test]
fn capacity_reports_a_rate() {
    let out = airband()
        .args(["capacity", "--topology", "g", "--duration", "2", "--seed", "1"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("capacity"), "stdout: {text}");
    assert!(text.contains("Mbps"), "stdout: {text}");
}

#[test]
fn bad_topology_fails_with_diagnostic() {
    let out = airband()
        .args(["capacity", "--topology", "g-AP-q"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("error"), "stderr: {err}");
    assert!(err.contains("unknown hop token"), "stderr: {err}");
}

#[test]
fn run_writes_reports_and_compare_reads_them() {
    let dir = tempfile::tempdir().unwrap();
    let sp_dir = dir.path().join("sp");
    let ss_dir = dir.path().join("ss");
    for (method, out_dir) in [("sp", &sp_dir), ("ss", &ss_dir)] {
        let out = airband()
            .args([
                "run",
                "--topology",
                "g",
                "--loss",
                "0.01",
                "--rates",
                "4",
                "--method",
                method,
                "--seed",
                "5",
                "--duration",
                "8",
                "--out",
            ])
            .arg(out_dir)
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "stderr: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(out_dir.join("summary.csv").is_file());
        assert!(out_dir
            .join("cells")
            .join("r4000000")
            .join("windows.csv")
            .is_file());
    }
    let out = airband()
        .arg("compare")
        .arg(&sp_dir)
        .arg(&ss_dir)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("sp") && text.contains("ss"), "stdout: {text}");
}

#[test]
fn compare_rejects_different_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (topo, out_dir) in [("g", &a), ("g-AP-g", &b)] {
        let out = airband()
            .args([
                "run", "--topology", topo, "--rates", "2", "--seed", "5", "--duration", "6",
                "--out",
            ])
            .arg(out_dir)
            .output()
            .unwrap();
        assert!(out.status.success());
    }
    let out = airband().arg("compare").arg(&a).arg(&b).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("do not match"), "stderr: {err}");
}

#[test]
fn scenario_file_drives_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let scenario_path = dir.path().join("scenario.toml");
    std::fs::write(
        &scenario_path,
        r#"
topology = "g X2"
seed = 11
duration_s = 6.0
window_ms = 200.0

[wireless]
loss = 0.02

[media]
rate_mbps = 3.0
"#,
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = airband()
        .args(["run", "--mode", "fixed", "--rates", "3", "--scenario"])
        .arg(&scenario_path)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary = std::fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert!(summary.contains("g X2"), "summary: {summary}");
    assert!(summary.contains(",11,"), "summary: {summary}");
}
