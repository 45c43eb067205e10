use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn scenario(file: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(file)
}

fn lincert(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lincert")).args(args).output().unwrap()
}

fn report(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn missing_scenario_file_exits_2() {
    let out = lincert(&["run", "--scenario", "/nonexistent/scenario.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot access"));
}

#[test]
fn stage_without_scenario_exits_2() {
    assert_eq!(lincert(&["spectrum"]).status.code(), Some(2));
    assert_eq!(lincert(&["bogus-subcommand"]).status.code(), Some(2));
}

#[test]
fn spectrum_report_passes_with_oracle_checks() {
    let out = lincert(&["spectrum", "--scenario", scenario("ts2.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    assert_eq!(r["schema_version"], 1);
    assert_eq!(r["pass"], true);
    let checks = r["checks"].as_array().unwrap();
    assert!(checks.iter().any(|c| c["name"] == "exponent 2 vs -2"));
    assert!(checks.iter().all(|c| !c["anchor"].as_str().unwrap().is_empty()));
}

#[test]
fn csv_format_lists_checks() {
    let out = lincert(&["spectrum", "--scenario", scenario("ts2.toml").to_str().unwrap(), "--format", "csv"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    assert_eq!(rd.headers().unwrap().get(3), Some("name"));
    assert_eq!(rd.records().count(), 3);
}

#[test]
fn reruns_are_identical_apart_from_runtime() {
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let out = lincert(&[
            "conjugacy",
            "--scenario",
            scenario("expression_rde.toml").to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        let mut r: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("expression_rde.report.json")).unwrap()).unwrap();
        r.as_object_mut().unwrap().remove("runtime_ms");
        r
    };
    assert_eq!(run(), run());
}

#[test]
fn seed_flag_replaces_the_ensemble_base() {
    let out = lincert(&["spectrum", "--scenario", scenario("ts3.toml").to_str().unwrap(), "--seed", "40", "--workers", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let seeds: Vec<u64> = report(&out)["seeds"].as_array().unwrap().iter().map(|s| s.as_u64().unwrap()).collect();
    assert_eq!(seeds, (40..50).collect::<Vec<_>>());
}

#[test]
fn worker_count_does_not_change_the_report() {
    let run = |w: &str| {
        let mut r = report(&lincert(&["spectrum", "--scenario", scenario("ts3.toml").to_str().unwrap(), "--workers", w]));
        r.as_object_mut().unwrap().remove("runtime_ms");
        r["config"]["workers"] = Value::Null;
        r
    };
    assert_eq!(run("1"), run("3"));
}

#[test]
fn negative_controls_exit_3() {
    let out = lincert(&["run", "--scenario", scenario("ts1_negative_control.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let r = report(&out);
    assert_eq!(r["expected_rejection"], true);
    assert!(r["errors"][0]["message"].as_str().unwrap().contains("K·L < α"));
    let out = lincert(&["run", "--scenario", scenario("unstable_negative_control.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(report(&out)["stage"], "spectrum");
}

#[test]
fn trajectories_are_written_as_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = lincert(&[
        "conjugacy",
        "--scenario",
        scenario("ts1.toml").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    // The printed L_G bound fails on TS1; every other check passes.
    assert_eq!(out.status.code(), Some(1));
    let r = report(&out);
    let failing: Vec<&str> = r["checks"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["pass"] == false)
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    assert_eq!(failing, ["empirical Lipschitz of G"]);
    let text = std::fs::read_to_string(dir.path().join("ts1.seed0.trajectories.csv")).unwrap();
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    assert_eq!(rd.headers().unwrap().len(), 4);
    assert_eq!(rd.records().count(), 1001);
    assert!(dir.path().join("ts1.checks.csv").exists());
}

fn suite_dir(files: &[(&str, String)]) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for (name, text) in files {
        std::fs::write(dir.path().join(name), text).unwrap();
    }
    dir
}

#[test]
fn suite_counts_expected_rejections_as_passes() {
    let read = |f: &str| std::fs::read_to_string(scenario(f)).unwrap();
    let dir = suite_dir(&[("a.toml", read("ts2.toml")), ("b.toml", read("unstable_negative_control.toml"))]);
    let out = lincert(&["verify", "--suite", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    assert_eq!(report(&out)["checks"].as_array().unwrap().len(), 2);
}

#[test]
fn corrupted_tolerance_fails_the_suite() {
    let ts2 = std::fs::read_to_string(scenario("ts2.toml")).unwrap();
    let corrupted = format!("{ts2}\n[tolerances]\ntol_conj = 0.0\n");
    let dir = suite_dir(&[("a.toml", ts2), ("b.toml", corrupted)]);
    let out = lincert(&["verify", "--suite", dir.path().to_str().unwrap()]);
    assert_ne!(out.status.code(), Some(0));
    let r = report(&out);
    let failing = r["checks"].as_array().unwrap().iter().filter(|c| c["pass"] == false).count();
    assert_eq!(failing, 1);
    assert!(r["errors"][0]["message"].as_str().unwrap().contains("tol_conj"));
}

#[test]
fn expression_scenario_with_unknown_variable_exits_2() {
    let text = std::fs::read_to_string(scenario("expression_rde.toml")).unwrap().replace("sin(x1)", "sin(z1)");
    let dir = suite_dir(&[("bad.toml", text)]);
    let out = lincert(&["run", "--scenario", dir.path().join("bad.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bundled_scenarios_can_be_exported() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(lincert(&["scenarios", "--out", dir.path().to_str().unwrap()]).status.code(), Some(0));
    assert!(dir.path().join("ts5.toml").exists());
}
