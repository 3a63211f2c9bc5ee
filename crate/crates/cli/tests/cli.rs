use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_scalar-thermo");

const CLASSICAL: &str = r#"{
  "schema": "scalar-thermo/1",
  "lattice": {"N": 2, "ell": 6.283185307179586, "c": 1.0, "hbar": 1.0},
  "thermostat": {"beta": 1.0, "gamma_phi": 0.5, "gamma_pi": "detailed_balance"},
  "protocol": {"initial": 1.0, "segments": [{"type": "linear_ramp", "duration": 0.2, "to": 1.4}]},
  "run": {"dt": 0.002, "steps": 200, "ensemble": 300, "seed": 11, "stride": 20},
  "initial": {"beta": 0.5, "phi_amplitude": 0.4}
}"#;

fn quantum(thermostat: &str, protocol: &str, initial: &str) -> String {
    format!(
        r#"{{
  "schema": "scalar-thermo/1",
  "lattice": {{"N": 2, "ell": 6.283185307179586, "c": 1.0, "hbar": 1.0}},
  "thermostat": {thermostat},
  "protocol": {protocol},
  "run": {{"dt": 0.002, "steps": 200, "stride": 20, "fock_truncation": 20}},
  "initial": {initial}
}}"#
    )
}

const DBC: &str = r#"{"beta": 1.0, "gamma_phi": 0.5, "gamma_pi": "detailed_balance"}"#;
const FROZEN: &str = r#"{"initial": 1.0}"#;

fn run(dir: &Path, config: &str, args: &[&str]) -> Output {
    let path = dir.join("scenario.json");
    fs::write(&path, config).unwrap();
    Command::new(BIN)
        .args(args)
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn column(path: &Path, name: &str) -> Vec<String> {
    let (header, rows) = read_csv(path);
    let i = header.iter().position(|h| h == name).unwrap();
    rows.into_iter().map(|r| r[i].clone()).collect()
}

fn floats(path: &Path, name: &str) -> Vec<f64> {
    column(path, name)
        .iter()
        .map(|s| s.parse().unwrap())
        .collect()
}

#[test]
fn classical_run_writes_three_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), CLASSICAL, &["classical-run"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let o = dir.path().join("out");
    for name in [
        "trajectory.csv",
        "moments.csv",
        "laws.csv",
        "manifest.json",
        "summary.json",
    ] {
        assert!(o.join(name).exists(), "{name}");
    }
    for p in floats(&o.join("laws.csv"), "production_rate") {
        assert!(p >= 0.0, "production {p}");
    }
    // ten strides plus the initial state
    assert_eq!(floats(&o.join("laws.csv"), "t").len(), 11);
    // discretization error only: small against the energy scale
    let e = floats(&o.join("trajectory.csv"), "energy");
    let scale = e.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for r in floats(&o.join("trajectory.csv"), "first_law_residual") {
        assert!(r.abs() < 1e-2 * scale, "residual {r}");
    }
}

#[test]
fn same_seed_gives_identical_bytes_for_any_thread_count() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(
        run(a.path(), CLASSICAL, &["classical-run", "--threads", "1"])
            .status
            .success()
    );
    assert!(
        run(b.path(), CLASSICAL, &["classical-run", "--threads", "3"])
            .status
            .success()
    );
    for name in ["trajectory.csv", "moments.csv", "laws.csv"] {
        let x = fs::read(a.path().join("out").join(name)).unwrap();
        let y = fs::read(b.path().join("out").join(name)).unwrap();
        assert!(x == y, "{name} differs");
    }
    let c = tempfile::tempdir().unwrap();
    assert!(run(c.path(), CLASSICAL, &["classical-run", "--seed", "12"])
        .status
        .success());
    let x = fs::read(a.path().join("out/laws.csv")).unwrap();
    let y = fs::read(c.path().join("out/laws.csv")).unwrap();
    assert!(x != y);
}

#[test]
fn manifest_echoes_a_parseable_config() {
    let dir = tempfile::tempdir().unwrap();
    assert!(
        run(dir.path(), CLASSICAL, &["classical-run", "--seed", "5"])
            .status
            .success()
    );
    let text = fs::read_to_string(dir.path().join("out/manifest.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["command"], "classical-run");
    assert_eq!(v["seed"], 5);
    assert_eq!(v["config"]["run"]["seed"], 5);
    let echo = serde_json::to_string_pretty(&v["config"]).unwrap();
    let again = tempfile::tempdir().unwrap();
    assert!(run(again.path(), &echo, &["classical-run"])
        .status
        .success());
    let x = fs::read(dir.path().join("out/laws.csv")).unwrap();
    let y = fs::read(again.path().join("out/laws.csv")).unwrap();
    assert!(x == y);
}

#[test]
fn json_format_writes_objects() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        CLASSICAL,
        &["classical-run", "--format", "json"],
    );
    assert!(out.status.success());
    let text = fs::read_to_string(dir.path().join("out/laws.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 11);
    assert!(v[0]["energy_oracle"].is_number());
}

#[test]
fn quantum_gibbs_with_frozen_mass_is_stationary() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &quantum(DBC, FROZEN, "{}"), &["quantum-run"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let t = dir.path().join("out/qthermo.csv");
    for col in ["heat_rate", "work_rate", "production_rate", "s_rel"] {
        for v in floats(&t, col) {
            assert!(v.abs() < 1e-9, "{col} = {v}");
        }
    }
    assert!(column(&t, "cptp").iter().all(|s| s == "true"));
}

#[test]
fn hot_state_releases_heat() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &quantum(DBC, FROZEN, r#"{"beta": 0.3}"#),
        &["quantum-run"],
    );
    assert!(out.status.success());
    let t = dir.path().join("out/qthermo.csv");
    for q in floats(&t, "heat_rate") {
        assert!(q < 0.0);
    }
    let s = floats(&t, "s_rel");
    assert!(s.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn brownian_quantization_is_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let th = r#"{"beta": 1.0, "gamma_phi": 0.0, "gamma_pi": 0.5}"#;
    let out = run(
        dir.path(),
        &quantum(th, FROZEN, r#"{"amplitudes": [1.0, 0.0, 0.5]}"#),
        &["quantum-run"],
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lost positivity"));
    let o = dir.path().join("out");
    assert!(column(&o.join("qthermo.csv"), "cptp")
        .iter()
        .all(|s| s == "false"));
    assert!(!floats(&o.join("events.csv"), "min_eigenvalue").is_empty());
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(o.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["checks"]["cptp"], false);
    assert!(!summary["events"].as_array().unwrap().is_empty());
}

#[test]
fn bad_config_exits_one_with_a_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let bad = CLASSICAL.replace("\"ell\"", "\"length\"");
    let out = run(dir.path(), &bad, &["classical-run"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("scenario.json:3:"), "{err}");
    assert!(err.contains("unknown field `length`"), "{err}");

    let bad = CLASSICAL.replace("\"dt\": 0.002", "\"dt\": 0.0");
    let out = run(dir.path(), &bad, &["classical-run"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("scenario.json:6: run.dt"));

    let out = Command::new(BIN).arg("classical-run").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = Command::new(BIN).arg("no-such-command").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = Command::new(BIN).arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn cptp_scan_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = CLASSICAL.replace(
        "\"initial\": {\"beta\"",
        "\"cptp_scan\": {\"omega\": 2.0, \"gamma_phi\": [0.0, 0.5], \"gamma_pi\": [0.0, 1.0], \"beta_hbar_omega\": {\"lo\": 0.1, \"hi\": 10.0, \"points\": 20}},\n  \"initial\": {\"beta\"",
    );
    let out = run(dir.path(), &cfg, &["cptp-scan"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let o = dir.path().join("out");
    assert_eq!(floats(&o.join("cptp_scan.csv"), "det_lh").len(), 2 * 2 * 20);
    let verdicts = column(&o.join("dbc_curve.csv"), "scan_cptp");
    assert_eq!(verdicts, vec!["true", "true"]);
}

#[test]
fn classical_limit_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = CLASSICAL.replace(
        "\"initial\": {\"beta\"",
        "\"classical_limit\": {\"omega\": 1.0, \"hbar_sequence\": [1.0, 0.1, 0.01], \"t_end\": 2.0, \"samples\": 20},\n  \"initial\": {\"beta\"",
    );
    let out = run(dir.path(), &cfg, &["classical-limit"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let dev = floats(
        &dir.path().join("out/classical_limit.csv"),
        "relaxation_sup_deviation",
    );
    assert_eq!(dev.len(), 3);
    assert!(dev.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn check_needs_no_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(BIN)
        .args(["check", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    assert!(dir.path().join("checks.csv").exists());
}
