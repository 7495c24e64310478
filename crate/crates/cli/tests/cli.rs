use std::path::PathBuf;
use std::process::{Command, Output};

fn repo(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn nrloc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nrloc")).args(args).output().unwrap()
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn static_run_prints_report_and_writes_files() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = repo("scenarios/square_static.toml");
    let out = nrloc(&[
        "static",
        "--scenario",
        scenario.to_str().unwrap(),
        "--method",
        "dl_tdoa",
        "--mu",
        "3",
        "--runs",
        "30",
        "--seed",
        "42",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&out);
    assert_eq!(report["mu"], 3);
    assert_eq!(report["runs"], 30);
    assert!(report["rmse"].as_f64().unwrap() < 1.0);
    let saved: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(saved, report);
    let errors = std::fs::read_to_string(dir.path().join("errors.csv")).unwrap();
    assert!(errors.lines().count() > 30);
    assert!(dir.path().join("cdf.csv").exists());
}

#[test]
fn track_run_accepts_nlos_policy() {
    let scenario = repo("scenarios/indoor_industrial.toml");
    let out = nrloc(&[
        "track",
        "--scenario",
        scenario.to_str().unwrap(),
        "--method",
        "dl_tdoa",
        "--mu",
        "3",
        "--runs",
        "2",
        "--nlos",
        "gate=3",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(&out)["mode"], "track");
}

#[test]
fn invalid_inputs_exit_with_two() {
    let scenario = repo("scenarios/square_static.toml");
    let s = scenario.to_str().unwrap();
    assert_eq!(nrloc(&["static", "--scenario", s, "--method", "dl_tdoa", "--mu", "9"]).status.code(), Some(2));
    assert_eq!(nrloc(&["static", "--scenario", s, "--method", "dl_tdoa", "--runs", "0"]).status.code(), Some(2));
    assert_eq!(nrloc(&["static", "--scenario", "/nonexistent.toml", "--method", "dl_tdoa"]).status.code(), Some(2));
    assert_eq!(nrloc(&["static", "--scenario", s, "--method", "gps"]).status.code(), Some(2));
    assert_eq!(nrloc(&["grid-check", "--config", s]).status.code(), Some(2));
}

#[test]
fn grid_check_reports_valid_grid_and_collisions() {
    let good = repo("scenarios/grid_prs.toml");
    let out = nrloc(&["grid-check", "--config", good.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let report = json(&out);
    assert_eq!(report["valid"], true);
    assert!(report["occupied_elements"].as_u64().unwrap() > 0);

    let dir = tempfile::tempdir().unwrap();
    let clash = dir.path().join("clash.toml");
    let extra = "\n[[prs]]\ncell_id = 4\nresource_id = 0\ncomb_size = 4\nn_symbols = 4\nre_offset = 0\nstart_symbol = 3\nperiodicity = 20\nn_rb = 24\n";
    std::fs::write(&clash, std::fs::read_to_string(&good).unwrap() + extra).unwrap();
    let out = nrloc(&["grid-check", "--config", clash.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stdout));
    let report = json(&out);
    assert_eq!(report["valid"], false);
    assert!(!report["collisions"].as_array().unwrap().is_empty());
}


#[test]
fn unreachable_base_stations_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let deaf = dir.path().join("deaf.toml");
    let text = std::fs::read_to_string(repo("scenarios/square_static.toml")).unwrap();
    std::fs::write(&deaf, text.replacen("[rf]", "[rf]\nmax_range_m = 1.0", 1)).unwrap();
    let out = nrloc(&["static", "--scenario", deaf.to_str().unwrap(), "--method", "dl_tdoa", "--runs", "3"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
