use std::path::Path;
use std::process::{Command, Output};

fn comove(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_comove")).args(args).current_dir(cwd).output().expect("spawn comove")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = comove(args, cwd);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

const SMALL_SPEC: &str = r#"{"n_services": 12, "n_users": 6, "timestep_count": 40, "seed": 5,
    "area": {"x_min": 0, "x_max": 150, "y_min": 0, "y_max": 150}}"#;

fn small_scenario(dir: &Path) {
    std::fs::write(dir.join("spec.json"), SMALL_SPEC).unwrap();
    ok(&["gen", "--spec", "spec.json", "--out", "sc", "--quiet"], dir);
}

#[test]
fn version_prints_crate_version() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["version"], dir.path());
    assert_eq!(out.trim(), format!("comove {}", env!("CARGO_PKG_VERSION")));
}

#[test]
fn gen_writes_scenario_directory() {
    let dir = tempfile::tempdir().unwrap();
    small_scenario(dir.path());
    for f in ["services.csv", "users.csv", "scenario.json", "manifest.json"] {
        assert!(dir.path().join("sc").join(f).exists(), "{f} missing");
    }
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("sc/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["n_services"], 12);
    assert_eq!(manifest["n_users"], 6);
    assert_eq!(manifest["meta"]["tool"], "comove");
    assert_eq!(manifest["meta"]["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn discover_output_independent_of_workers() {
    let dir = tempfile::tempdir().unwrap();
    small_scenario(dir.path());
    ok(&["discover", "--scenario", "sc/scenario.json", "--out", "d1.json", "--workers", "1"], dir.path());
    ok(&["discover", "--scenario", "sc/scenario.json", "--out", "d8.json", "--workers", "8"], dir.path());
    let a = std::fs::read(dir.path().join("d1.json")).unwrap();
    let b = std::fs::read(dir.path().join("d8.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn discover_single_user_and_unknown_user() {
    let dir = tempfile::tempdir().unwrap();
    small_scenario(dir.path());
    ok(&["discover", "--scenario", "sc/scenario.json", "--user", "user:0000", "--out", "d.json"], dir.path());
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("d.json")).unwrap()).unwrap();
    assert_eq!(v["users"].as_array().unwrap().len(), 1);
    assert_eq!(v["users"][0]["steps"].as_array().unwrap().len(), 40);

    let out = comove(&["discover", "--scenario", "sc/scenario.json", "--user", "user:9999", "--out", "x.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "invalid_input");
}

#[test]
fn train_compose_evaluate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    small_scenario(dir.path());
    let d = dir.path();
    let line = ok(
        &["train", "--scenario", "sc/scenario.json", "--out", "m.ckpt", "--memory", "64", "--batch", "8", "--repetition", "1", "--seed", "9"],
        d,
    );
    assert!(line.starts_with("command=train status=ok"), "{line}");
    let log = std::fs::read_to_string(d.join("m.ckpt.log.csv")).unwrap();
    assert_eq!(log.lines().next().unwrap(), "episode,cum_reward,epsilon,loss");

    ok(&["compose", "--scenario", "sc/scenario.json", "--model", "m.ckpt", "--out", "plan.json"], d);
    ok(&["compose", "--scenario", "sc/scenario.json", "--model", "m.ckpt", "--user", "sc/users.csv", "--out", "all.json"], d);
    let all: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("all.json")).unwrap()).unwrap();
    assert_eq!(all["plans"].as_array().unwrap().len(), 6);

    let line = ok(&["evaluate", "--scenario", "sc/scenario.json", "--mode", "accuracy", "--plan", "plan.json", "--out", "r.json"], d);
    assert!(line.contains("accuracy="), "{line}");
    assert!(d.join("r.series.csv").exists());

    let out = comove(
        &["evaluate", "--scenario", "sc/scenario.json", "--mode", "accuracy", "--plan", "plan.json", "--out", "r.json", "--require-accuracy", "1.01"],
        d,
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn usage_and_domain_errors_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(comove(&["frobnicate"], dir.path()).status.code(), Some(2));
    assert_eq!(comove(&["discover", "--scenario", "missing.json", "--out", "x.json"], dir.path()).status.code(), Some(1));
    assert_eq!(comove(&["discover", "--scenario", "missing.json"], dir.path()).status.code(), Some(2));
}

#[test]
fn ingest_gps_splits_services_and_users() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("trip_id,timestamp,lon,lat\n");
    for trip in 0..12 {
        for k in 0..5 {
            csv.push_str(&format!("t{trip},{},{},{}\n", 1000 + k, -87.0 + 0.0001 * trip as f64, 41.0 + 0.0001 * k as f64));
        }
    }
    std::fs::write(dir.path().join("gps.csv"), csv).unwrap();
    let line = ok(&["ingest", "--format", "gps", "--in", "gps.csv", "--out", "g", "--user-fraction", "0.5"], dir.path());
    assert!(line.contains("services=") && line.contains("users="), "{line}");
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("g/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["distance_mode"], "haversine");
    assert_eq!(m["n_services"].as_u64().unwrap() + m["n_users"].as_u64().unwrap(), 12);
}
