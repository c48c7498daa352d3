use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn isoreal(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_isoreal"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("ISOREAL_PROFILE")
        .output()
        .expect("binary runs")
}

fn run(file: &Path, out: &Path) -> (i32, String) {
    let o = isoreal(&["run", file.to_str().unwrap()], out);
    (
        o.status.code().unwrap(),
        String::from_utf8(o.stdout).unwrap(),
    )
}

fn inline(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("scenario.json");
    fs::write(&p, text).unwrap();
    p
}

/// The residual printed on a summary line.
fn residual(line: &str) -> f64 {
    let rest = line.split("max normalized residual ").nth(1).unwrap();
    rest.split(',').next().unwrap().parse().unwrap()
}

#[test]
fn closed_form_with_data_matches() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out) = run(&scenario("closed_form.json"), dir.path());
    assert_eq!(code, 0, "{out}");
    let recon = out.lines().find(|l| l.contains("reconstruct")).unwrap();
    let err: f64 = recon
        .rsplit("= ")
        .next()
        .unwrap()
        .split(' ')
        .next()
        .unwrap()
        .parse()
        .unwrap();
    assert!(err <= 1e-6, "{recon}");
    let verify = out.lines().find(|l| l.contains("] verify ")).unwrap();
    assert!(residual(verify) <= 1e-6);
    assert!(dir.path().join("trajectory.tsv").exists());
}

#[test]
fn worked_fan_builds_exact_values() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out) = run(&scenario("worked_fan.json"), dir.path());
    assert_eq!(code, 0, "{out}");
    assert!(out.contains("exact σ (1, 2, 4, 2)"), "{out}");
    let verify = out.lines().find(|l| l.contains("] verify ")).unwrap();
    assert!(residual(verify) <= 1e-5);
    let table = fs::read_to_string(dir.path().join("sigma.tsv")).unwrap();
    assert_eq!(table.lines().count(), 21 * 21 + 1);
}

#[test]
fn sign_condition_failure_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out) = run(&scenario("bad_fan.json"), dir.path());
    assert_eq!(code, 1);
    let line = out.lines().find(|l| l.contains("FAILED")).unwrap();
    assert!(
        line.contains("ξ3") && line.contains("= -4 is not positive"),
        "{line}"
    );
    assert!(out.contains("reconstruct fan: skipped"));
    let summary = fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    assert_eq!(summary, out);
}

#[test]
fn separated_and_piecewise_scenarios_pass() {
    for name in ["separated.json", "two_cells.json"] {
        let dir = tempfile::tempdir().unwrap();
        let (code, out) = run(&scenario(name), dir.path());
        assert_eq!(code, 0, "{name}: {out}");
    }
}

#[test]
fn exported_table_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out) = run(&scenario("round_trip.json"), dir.path());
    assert_eq!(code, 0, "{out}");
    let verifies: Vec<f64> = out
        .lines()
        .filter(|l| l.contains("] verify "))
        .map(residual)
        .collect();
    assert_eq!(verifies.len(), 3);
    assert!(verifies[1] <= (2.0 * verifies[0]).max(1e-5));
    assert!(verifies[2] > 1e-2);
}

#[test]
fn malformed_json_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let p = inline(dir.path(), "{\"name\": ");
    let o = isoreal(&["run", p.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("parse error"));

    let p = inline(
        dir.path(),
        r#"{"name": "x", "domain": {"lo": [0], "hi": [1]}, "fields": {}, "tasks": [], "extra": 1}"#,
    );
    assert_eq!(
        isoreal(&["check", p.to_str().unwrap()], dir.path())
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn invalid_scenarios_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        r#"{"name": "x", "domain": {"lo": [0, 0], "hi": [1, 1]},
            "fields": {"u": {"kind": "expression", "expr": "x1", "dim": 2}},
            "tasks": [{"task": "verify", "field": "v"}]}"#,
        r#"{"name": "x", "domain": {"lo": [0, 0], "hi": [1, 1]},
            "fields": {"u": {"kind": "expression", "expr": "x1", "dim": 3}}, "tasks": []}"#,
        r#"{"name": "x", "domain": {"lo": [1, 0], "hi": [0, 1]},
            "fields": {"u": {"kind": "expression", "expr": "x1", "dim": 2}}, "tasks": []}"#,
        r#"{"name": "x", "domain": {"lo": [0, 0], "hi": [1, 1]}, "tolerances": {"tol_weak": -1},
            "fields": {"u": {"kind": "expression", "expr": "x1", "dim": 2}}, "tasks": []}"#,
    ];
    for text in cases {
        let p = inline(dir.path(), text);
        let o = isoreal(&["run", p.to_str().unwrap()], dir.path());
        assert_eq!(o.status.code(), Some(3), "{text}");
        assert!(String::from_utf8_lossy(&o.stderr).starts_with("invalid scenario"));
    }
}

#[test]
fn profile_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let file = scenario("worked_fan.json");
    let o = Command::new(env!("CARGO_BIN_EXE_isoreal"))
        .args(["check", file.to_str().unwrap()])
        .env("ISOREAL_PROFILE", "strict")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("profile strict"));

    let o = Command::new(env!("CARGO_BIN_EXE_isoreal"))
        .args(["run", file.to_str().unwrap(), "--out"])
        .arg(dir.path())
        .env("ISOREAL_PROFILE", "sloppy")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn runs_are_deterministic_across_thread_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let file = scenario("worked_fan.json");
    let f = file.to_str().unwrap();
    assert_eq!(
        isoreal(&["run", f, "--threads", "1"], a.path())
            .status
            .code(),
        Some(0)
    );
    assert_eq!(
        isoreal(&["run", f, "--threads", "4"], b.path())
            .status
            .code(),
        Some(0)
    );
    for name in ["summary.txt", "sigma.tsv", "residual.tsv"] {
        let x = fs::read(a.path().join(name)).unwrap();
        let y = fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name} differs");
    }
}

#[test]
fn trace_subcommand_prints_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let file = scenario("closed_form.json");
    let f = file.to_str().unwrap();
    let o = isoreal(&["trace", f, "--point", "0.5,-0.5"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("t\tx1\tx2\tI"));
    let last: Vec<f64> = text
        .lines()
        .last()
        .unwrap()
        .split('\t')
        .map(|v| v.parse().unwrap())
        .collect();
    // u = x1 + x2^2/4 vanishes at the end point
    assert!((last[1] + last[2] * last[2] / 4.0).abs() < 1e-9);

    let o = isoreal(
        &["trace", f, "--point", "0.5,-0.5", "--tmax", "0.1"],
        dir.path(),
    );
    let text = String::from_utf8(o.stdout).unwrap();
    let t: f64 = text
        .lines()
        .last()
        .unwrap()
        .split('\t')
        .next()
        .unwrap()
        .parse()
        .unwrap();
    assert!((t.abs() - 0.1).abs() < 1e-12, "{t}");

    assert_eq!(
        isoreal(&["trace", f, "--point", "0.5"], dir.path())
            .status
            .code(),
        Some(3)
    );
}
