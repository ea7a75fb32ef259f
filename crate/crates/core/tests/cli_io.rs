use kinetrate::cli_io::*;
use kinetrate::linalg::c;
use kinetrate::phase_grid::C64;
use kinetrate::transfer_operator::{leading_eigenpair, nu_prime_zero, spectral_radius, TransferMatrix};
use kinetrate::Error;
use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kinetrate"))
}

fn run_in(dir: &Path, args: &[&str]) -> std::process::Output {
    bin().current_dir(dir).args(args).env_remove("KINETRATE_THREADS").output().unwrap()
}

#[test]
fn config_round_trip() {
    let text = r#"{"domain": {"shape": "ellipse", "semi_axes": [2.0, 1.0]},
                   "kernel": {"family": "maxwellian", "theta": "bump"},
                   "measure": {"weight": "power:-0.5", "c": 0.3},
                   "experiment": {"eta": [0.5, 1.0], "f0": "halfspace"},
                   "seed": 17}"#;
    let cfg = parse_config(text).unwrap();
    let again = parse_config(&cfg.to_json()).unwrap();
    assert_eq!(cfg, again);
    assert_eq!(cfg.hash(), again.hash());
    assert_eq!(cfg.grid_spec(), kinetrate::phase_grid::GridSpec::baseline());
}

#[test]
fn config_errors_name_the_key() {
    let cases = [
        (r#"{"measure": {"c": 1.5}}"#, "measure.c"),
        (r#"{"measure": {"c": 0.0}}"#, "measure.c"),
        (r#"{"grid": {"speeds": 1}}"#, "grid.speeds"),
        (r#"{"domain": {"shape": "torus"}}"#, "domain.shape"),
        (r#"{"kernel": {"theta": "warm"}}"#, "kernel.theta"),
        (r#"{"kernel": {"family": "power-law", "exponent_a": -1}}"#, "kernel.exponent_a"),
        (r#"{"experiment": {"f0": "nonexistent-preset"}}"#, "experiment.f0"),
        (r#"{"experiment": {"method": "euler"}}"#, "experiment.method"),
        (r#"{"colour": 3}"#, "colour"),
    ];
    for (text, key) in cases {
        match parse_config(text) {
            Err(Error::Config { path, .. }) => assert_eq!(path, key, "{text}"),
            other => panic!("{text}: {other:?}"),
        }
    }
}

#[test]
fn float_cells_reingest_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    let xs = [0.1, 1.0 / 3.0, -7.25e-310, 1e300, f64::MIN_POSITIVE];
    let rows: Vec<Vec<Cell>> = xs.iter().map(|x| vec![Cell::F(*x), Cell::S("a".into())]).collect();
    write_csv(&path, &["x", "tag"], &rows).unwrap();
    let (header, back) = read_csv(&path).unwrap();
    assert_eq!(header, vec!["x", "tag"]);
    for (x, r) in xs.iter().zip(&back) {
        assert_eq!(r[0].parse::<f64>().unwrap().to_bits(), x.to_bits());
    }
    // no temporary files are left behind
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn verify_chv_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["verify-chv", "--out", "chv.csv"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = read_csv(&dir.path().join("chv.csv")).unwrap();
    assert_eq!(header, vec!["test_id", "lhs", "rhs", "residual", "bound_slack"]);
    for r in &rows {
        let residual: f64 = r[3].parse().unwrap();
        let slack: f64 = r[4].parse().unwrap();
        match r[0].as_str() {
            id if id.starts_with("identity") || id.starts_with("shell") || id == "l0_forms" => {
                assert!(residual < 1e-8, "{r:?}")
            }
            "c_omega_resample" => assert!(residual < 1e-6, "{r:?}"),
            "symmetry" => assert!(residual <= 1e-12, "{r:?}"),
            "bound_basic" | "bound_c2" => assert!(slack <= 1e-12, "{r:?}"),
            other => panic!("unexpected row {other}"),
        }
    }
    let log = std::fs::read_to_string(dir.path().join("run.log")).unwrap();
    let entry: serde_json::Value = serde_json::from_str(log.lines().last().unwrap()).unwrap();
    assert_eq!(entry["command"], "verify-chv");
    assert_eq!(entry["status"], "ok");
    assert_eq!(entry["config_hash"].as_str().unwrap().len(), 64);
    assert!(entry["wall_time_s"].as_f64().unwrap() >= 0.0);
}

#[test]
fn same_seed_gives_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let args = |name: &'static str| ["relax", "--method", "mc", "--T", "2", "--seed", "5", "--out", name];
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"experiment": {"particles": 4000}}"#).unwrap();
    let cfg = cfg.to_str().unwrap().to_string();
    let a = bin().current_dir(dir.path()).args(args("a.csv")).args(["--config", &cfg, "--threads", "1"]).output().unwrap();
    let b = bin().current_dir(dir.path()).args(args("b.csv")).args(["--config", &cfg]).env("KINETRATE_THREADS", "3").output().unwrap();
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(b.status.code(), Some(0));
    let ra = std::fs::read(dir.path().join("a.csv")).unwrap();
    let rb = std::fs::read(dir.path().join("b.csv")).unwrap();
    assert_eq!(ra, rb);
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["transmogrify"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run_in(dir.path(), &["spectrum", "--config", "missing.json"]);
    assert_eq!(out.status.code(), Some(2));
    let record: serde_json::Value = serde_json::from_str(String::from_utf8_lossy(&out.stderr).lines().last().unwrap()).unwrap();
    assert_eq!(record["error"], "config");
    std::fs::write(dir.path().join("bad.json"), r#"{"measure": {"c": 1.5}}"#).unwrap();
    let out = run_in(dir.path(), &["spectrum", "--config", "bad.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("measure.c"));
    let out = bin().current_dir(dir.path()).args(["spectrum"]).env("KINETRATE_THREADS", "zero").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_one() {
    // the phase grid is planar, so a ball model cannot be built
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("ball.json"), r#"{"domain": {"shape": "ball"}}"#).unwrap();
    let out = run_in(dir.path(), &["invariant", "--config", "ball.json", "--out", "psi.csv"]);
    assert_eq!(out.status.code(), Some(1));
    let record: serde_json::Value = serde_json::from_str(String::from_utf8_lossy(&out.stderr).lines().last().unwrap()).unwrap();
    assert_eq!(record["exit_code"], 1);
    assert!(!dir.path().join("psi.csv").exists());
    let log = std::fs::read_to_string(dir.path().join("run.log")).unwrap();
    assert!(log.contains("\"status\":\"domain\""));
}

#[test]
fn invariant_csv_feeds_boundary_function() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["invariant", "--out", "psi.csv"]);
    assert_eq!(out.status.code(), Some(0));
    let (header, rows) = read_csv(&dir.path().join("psi.csv")).unwrap();
    assert_eq!(header, vec!["cell", "x1", "x2", "x3", "v1", "v2", "v3", "value"]);
    assert!(rows.iter().all(|r| r[7].parse::<f64>().unwrap() > 0.0));
    // Ψ has nonzero mean, so the η = 0 boundary function diverges: numerical failure
    let out = run_in(dir.path(), &["boundary-function", "--eta", "0", "--f", "psi.csv", "--out", "rf.csv"]);
    assert_eq!(out.status.code(), Some(1));
    let out = run_in(dir.path(), &["boundary-function", "--eta", "1", "--f", "psi.csv", "--out", "rf.csv"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn effective_config_is_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["spectrum", "--eta", "1", "--out", "s.csv"]);
    let err = String::from_utf8_lossy(&out.stderr);
    let line = err.lines().find(|l| l.starts_with("effective config: ")).unwrap();
    let cfg = parse_config(line.trim_start_matches("effective config: ")).unwrap();
    assert_eq!(cfg.experiment.eta, Some(vec![1.0]));
}

#[test]
fn regression_fixture() {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/baseline.json")).unwrap();
    let fixture: serde_json::Value = serde_json::from_str(&text).unwrap();
    let cfg = ExperimentConfig::default();
    assert_eq!(fixture["config_hash"].as_str().unwrap(), cfg.hash(), "fixture was produced by a different configuration");
    let tol = fixture["tolerance"].as_f64().unwrap();
    let model = cfg.model().unwrap();
    let sp = leading_eigenpair(&model, c(0.0)).unwrap();
    let mut computed = vec![("nu_prime_zero".to_string(), nu_prime_zero(&model, &sp.phi))];
    for eta in [0.5, 1.0, 2.0] {
        let t = TransferMatrix::assemble(&model, C64::new(0.0, eta)).unwrap();
        computed.push((format!("r_sigma_eta_{eta}"), spectral_radius(&model, &t).unwrap().value));
    }
    for (key, value) in computed {
        let pinned = fixture["values"][&key].as_f64().unwrap_or_else(|| panic!("fixture lacks {key}"));
        assert!((value - pinned).abs() <= tol * pinned.abs(), "{key}: computed {value:.17e}, fixture {pinned:.17e}");
    }
}
