use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use serde_json::Value;
use shearmix::harris::{inequality_audit, HarrisConstants};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shearmix"))
        .args(args)
        .env_remove("SHEARMIX_WORKERS")
        .output()
        .expect("spawn shearmix")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).expect("json on stdout")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn help_lists_subcommands() {
    let o = run(&["--help"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    for cmd in ["verify", "sweep", "constants", "couple", "drift", "minorize"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn unknown_flag_is_usage_error() {
    assert_eq!(code(&run(&["constants", "--bogus"])), 2);
}

#[test]
fn constants_default_passes_and_round_trips() {
    let o = run(&["constants"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&o);
    assert!(v["log_domain"].is_string());
    assert_eq!(v["audit"]["all_pass"], Value::Bool(true));
    let hc: HarrisConstants = serde_json::from_value(v["constants"].clone()).unwrap();
    let again = inequality_audit(&hc).unwrap();
    let reported: Vec<bool> = v["audit"]["checks"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["pass"].as_bool().unwrap())
        .collect();
    assert_eq!(again.checks.iter().map(|c| c.pass).collect::<Vec<_>>(), reported);
}

#[test]
fn constants_rejects_bad_inputs() {
    assert_eq!(code(&run(&["constants", "--amplitude", "0.5"])), 2);
    let dir = tempfile::tempdir().unwrap();
    let c = write_config(dir.path(), "c.json", r#"{"params": {"q": -1}}"#);
    assert_eq!(code(&run(&["constants", "--config", &c])), 2);
    let c = write_config(dir.path(), "h.json", r#"{"params": {"harris_c": 0.5}}"#);
    assert_eq!(code(&run(&["constants", "--config", &c])), 2);
}

#[test]
fn constants_has_no_csv_form() {
    assert_eq!(code(&run(&["constants", "--format", "csv"])), 2);
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let top = write_config(dir.path(), "top.json", r#"{"sed": 3}"#);
    assert_eq!(code(&run(&["constants", "--config", &top])), 2);
    let inner = write_config(dir.path(), "inner.json", r#"{"params": {"amplitud": 3}}"#);
    let o = run(&["constants", "--config", &inner]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("amplitud"));
}

#[test]
fn stochastic_commands_need_a_seed() {
    for cmd in ["verify", "drift", "minorize", "couple"] {
        let o = run(&[cmd]);
        assert_eq!(code(&o), 2, "{cmd}");
        assert!(String::from_utf8_lossy(&o.stderr).contains("--seed"));
    }
    assert_eq!(code(&run(&["sweep", "--amplitudes", "2"])), 2);
}

#[test]
fn sweep_without_amplitudes_is_usage_error() {
    let o = run(&["sweep", "--seed", "1"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("amplitude"));
}

const SMALL_SWEEP: &str = r#"{"seed": 5, "params": {"amplitudes": [2, 4], "trials": 2, "n_periods": 3, "n_grid": 512}}"#;

#[test]
fn sweep_output_is_reproducible_across_workers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s.json", SMALL_SWEEP);
    let mut outs = Vec::new();
    for w in ["1", "4", "1"] {
        let out = dir.path().join(format!("out{}.csv", outs.len()));
        let o = run(&["sweep", "--config", &cfg, "--workers", w, "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        outs.push(std::fs::read(out).unwrap());
    }
    assert_eq!(outs[0], outs[1]);
    assert_eq!(outs[0], outs[2]);
    let text = String::from_utf8(outs[0].clone()).unwrap();
    assert!(text.starts_with("A,trial,period,h_minus_1,h1_initial,rate,r2\n"));
    assert!(!text.contains('\r'));
}

#[test]
fn flags_override_config_and_env() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s.json", SMALL_SWEEP);
    let a = run(&["sweep", "--config", &cfg, "--seed", "6", "--amplitudes", "3", "--format", "json"]);
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    let v = json(&a);
    assert_eq!(v["config"]["seed"], 6);
    assert_eq!(v["config"]["amplitudes"], serde_json::json!([3.0]));
    let env = Command::new(env!("CARGO_BIN_EXE_shearmix"))
        .args(["sweep", "--config", &cfg, "--seed", "6", "--amplitudes", "3", "--format", "json"])
        .env("SHEARMIX_WORKERS", "3")
        .output()
        .unwrap();
    assert_eq!(env.stdout, a.stdout);
    let bad = Command::new(env!("CARGO_BIN_EXE_shearmix"))
        .args(["sweep", "--config", &cfg])
        .env("SHEARMIX_WORKERS", "many")
        .output()
        .unwrap();
    assert_eq!(code(&bad), 2);
    let flag_wins = Command::new(env!("CARGO_BIN_EXE_shearmix"))
        .args(["sweep", "--config", &cfg, "--workers", "2"])
        .env("SHEARMIX_WORKERS", "many")
        .output()
        .unwrap();
    assert_eq!(code(&flag_wins), 0);
}

#[test]
fn sweep_two_amplitudes_finishes_in_time() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "s.json",
        r#"{"seed": 3, "params": {"amplitudes": [2, 4], "trials": 2, "n_periods": 20, "n_grid": 1024}}"#,
    );
    let t = Instant::now();
    let o = run(&["sweep", "--config", &cfg]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(t.elapsed() < Duration::from_secs(300));
}

#[test]
fn couple_random_pair_closes() {
    let o = run(&["couple", "--seed", "9"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&o);
    assert!(v["residual"].as_f64().unwrap() < 1e-9);
    assert_eq!(v["n1_within_bound"], Value::Bool(true));
    assert_eq!(v["steps"].as_array().unwrap().len(), 2 * v["n1"].as_u64().unwrap() as usize);
}

#[test]
fn couple_antipodal_start_has_empty_plan() {
    let dir = tempfile::tempdir().unwrap();
    let pi = std::f64::consts::PI;
    let cfg = write_config(dir.path(), "z.json", &format!(r#"{{"params": {{"z": [0.5, 1.0, {}, {}]}}}}"#, 0.5 + pi, 1.0 + pi));
    let o = run(&["couple", "--config", &cfg]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&o);
    assert_eq!(v["n1"], 0);
    assert!(v["steps"].as_array().unwrap().is_empty());
}

#[test]
fn couple_rejects_near_diagonal_start() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "z.json", r#"{"params": {"z": [1.0, 1.0, 1.001, 1.0]}}"#);
    assert_eq!(code(&run(&["couple", "--config", &cfg])), 1);
}

#[test]
fn verify_default_passes() {
    let o = run(&["verify", "--seed", "1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let v = json(&o);
    assert_eq!(v["all_pass"], Value::Bool(true));
    assert!(v["checks"].as_array().unwrap().len() >= 9);
}

#[test]
fn verify_zero_tolerance_reports_witnesses() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "v.json",
        r#"{"seed": 1, "params": {"determinant_tol": 0, "fd_first_tol": 0, "fd_second_tol": 0, "fd_samples": 10, "qift_pairs": 100, "qift_directions": 3}}"#,
    );
    let o = run(&["verify", "--config", &cfg]);
    assert_eq!(code(&o), 1);
    let v = json(&o);
    let failed: Vec<&Value> = v["checks"].as_array().unwrap().iter().filter(|c| c["pass"] == false).collect();
    assert!(failed.len() >= 2);
    for c in failed {
        assert!(!c["witness"].is_null(), "{c}");
    }
}

#[test]
fn drift_and_minorize_small_runs() {
    let dir = tempfile::tempdir().unwrap();
    let d = write_config(dir.path(), "d.json", r#"{"seed": 2, "params": {"z_samples": 10, "mc_samples": 1000}}"#);
    let o = run(&["drift", "--config", &d]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(json(&o)["report"]["gamma_hat"].as_f64().unwrap() < 1.0);
    let m = write_config(dir.path(), "m.json", r#"{"seed": 2, "params": {"mc_samples": 20000, "rho_out": [0.5, 1.0]}}"#);
    let out = dir.path().join("m.out.json");
    let o = run(&["minorize", "--config", &m, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stdout.is_empty());
    let v: Value = serde_json::from_slice(&std::fs::read(out).unwrap()).unwrap();
    assert_eq!(v["report"]["estimates"].as_array().unwrap().len(), 2);
}
