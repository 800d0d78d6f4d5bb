use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn diffctl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_diffctl"))
        .args(args)
        .env_remove("DIFFCTL_OUT_DIR")
        .output()
        .expect("failed to launch diffctl")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn config_path(name: &str) -> String {
    configs().join(name).to_str().unwrap().to_string()
}

fn write_config(dir: &Path, name: &str, v: &Value) -> String {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p.to_str().unwrap().to_string()
}

fn load(name: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(configs().join(name)).unwrap()).unwrap()
}

#[test]
fn solve_reproduces_bm_constrained_threshold() {
    let o = diffctl(&["solve", "--config", &config_path("bm.json")]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["problem"], "constrained-discounted");
    let y = v["threshold"].as_f64().unwrap();
    assert!((y - 4.01379).abs() < 5e-6, "{y}");
    assert!(v["residual"].as_f64().unwrap().abs() < 1e-8);
    assert!(v["value_at_x0"].is_number());
    assert_eq!(v["config_echo"]["gamma"], 0.001);
}

#[test]
fn config_echo_reproduces_the_output_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let first = diffctl(&["solve", "--config", &config_path("ou.json"), "--tol-root", "1e-11"]);
    assert_eq!(first.status.code(), Some(0), "{}", stderr(&first));
    let v: Value = serde_json::from_str(&stdout(&first)).unwrap();
    assert_eq!(v["config_echo"]["root_tol"], 1e-11);
    let echo = write_config(dir.path(), "echo.json", &v["config_echo"]);
    let second = diffctl(&["solve", "--config", &echo]);
    assert_eq!(stdout(&first), stdout(&second));
}

#[test]
fn lambda_sweep_approaches_the_singular_threshold() {
    let o = diffctl(&["sweep", "--axis", "lambda", "--config", &config_path("ou_lambda_sweep.json")]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "axis,param,threshold,target_threshold,threshold_gap,value,target_value,value_gap"
    );
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').skip(1).map(|c| c.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 4);
    let target = rows[0][2];
    for w in rows.windows(2) {
        assert!(w[1][1] > w[0][1], "threshold column not increasing");
        assert!(w[1][1] < target);
        assert!(w[1][3] < w[0][3], "gap column not decreasing");
    }
}

#[test]
fn discount_sweep_json_and_table() {
    let o = diffctl(&["sweep", "--config", &config_path("ou_discount_sweep.json"), "--format", "json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["axis"], "discount");
    assert_eq!(v["target_problem"], "constrained-ergodic");
    assert_eq!(v["diagnostics"]["threshold_gaps_decreasing"], true);
    let t = diffctl(&["sweep", "--config", &config_path("ou_discount_sweep.json"), "--format", "table"]);
    assert!(stdout(&t).contains("threshold gaps decreasing true"));
}

#[test]
fn verify_passes_on_ou() {
    let o = diffctl(&["verify", "--config", &config_path("ou.json")]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["pass"], true);
    let names: Vec<&str> = v["checks"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    for n in ["resolvent-equation", "generator-identity", "integral-vs-derivative", "natural-boundary"] {
        assert!(names.contains(&n), "{names:?}");
    }
}

#[test]
fn unknown_keys_are_rejected_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = load("bm.json");
    v["model"]["sigma"] = 1.0.into();
    let p = write_config(dir.path(), "bad.json", &v);
    let o = diffctl(&["solve", "--config", &p]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("model") && err.contains("sigma"), "{err}");
}

#[test]
fn missing_config_and_wrong_schema_exit_2() {
    assert_eq!(diffctl(&["solve"]).status.code(), Some(2));
    assert_eq!(diffctl(&["solve", "--config", "/nonexistent.json"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let mut v = load("bm.json");
    v["schema_version"] = 2.into();
    let p = write_config(dir.path(), "v2.json", &v);
    assert_eq!(diffctl(&["solve", "--config", &p]).status.code(), Some(2));
}

#[test]
fn transient_model_fails_ergodic_precondition_and_audit() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = load("bm.json");
    v["problem"] = "singular-ergodic".into();
    let p = write_config(dir.path(), "bm_ergodic.json", &v);
    let o = diffctl(&["solve", "--config", &p]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("recurrent"));
    let a = diffctl(&["audit", "--config", &p]);
    assert_eq!(a.status.code(), Some(2));
    let rep: Value = serde_json::from_str(&stdout(&a)).unwrap();
    assert_eq!(rep["report"]["recurrent"], false);
    let ok = diffctl(&["audit", "--config", &config_path("bm.json"), "--format", "table"]);
    assert_eq!(ok.status.code(), Some(0));
    assert!(stdout(&ok).contains("PASS"));
}

#[test]
fn discount_sweep_of_transient_model_exits_2() {
    let o = diffctl(&["sweep", "--axis", "discount", "--config", &config_path("bm.json")]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn quadrature_breakdown_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = load("ou.json");
    v["quadrature"] = serde_json::json!({ "max_panels": 1, "panel_width": 1e-3 });
    let p = write_config(dir.path(), "starved.json", &v);
    let o = diffctl(&["solve", "--config", &p]);
    assert_eq!(o.status.code(), Some(3), "{}{}", stdout(&o), stderr(&o));
}

#[test]
fn simulate_matches_ergodic_cost_and_is_seed_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = load("ou.json");
    v["sim"] = serde_json::json!({ "horizon": 200.0, "n_paths": 40 });
    let p = write_config(dir.path(), "sim.json", &v);
    let log = dir.path().join("events.csv");
    let a = diffctl(&["simulate", "--config", &p, "--seed", "11", "--event-log", log.to_str().unwrap()]);
    assert_eq!(a.status.code(), Some(0), "{}{}", stdout(&a), stderr(&a));
    let b = diffctl(&["simulate", "--config", &p, "--seed", "11"]);
    assert_eq!(stdout(&a), stdout(&b));
    let r: Value = serde_json::from_str(&stdout(&a)).unwrap();
    assert_eq!(r["pass"], true);
    assert_eq!(r["config_echo"]["sim"]["seed"], 11);
    assert!(r["z_score"].as_f64().unwrap() <= 3.0);
    let events = std::fs::read_to_string(log).unwrap();
    assert!(events.starts_with("t,x,event,push_size\n"));
    assert!(events.contains("poisson-push"));
}

#[test]
fn simulate_reports_failed_check_with_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = load("ou.json");
    // a zero-width band rejects any noisy estimate
    v["sim"] = serde_json::json!({ "horizon": 100.0, "n_paths": 8, "sigmas": 0.0 });
    let p = write_config(dir.path(), "strict.json", &v);
    let o = diffctl(&["simulate", "--config", &p, "--format", "table"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn output_goes_to_env_directory_or_out_flag() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_diffctl"))
        .args(["solve", "--config", &config_path("bm.json"), "--format", "csv"])
        .env("DIFFCTL_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).is_empty());
    let csv = std::fs::read_to_string(dir.path().join("solve.csv")).unwrap();
    assert!(csv.starts_with("problem,threshold,x0,value,residual\nconstrained-discounted,4.0137"));

    let out = dir.path().join("nested/table.txt");
    let o = diffctl(&[
        "solve",
        "--config",
        &config_path("bm.json"),
        "--format",
        "table",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(std::fs::read_to_string(out).unwrap().contains("threshold"));
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = load("ou.json");
    v["problem"] = "singular-discounted".into();
    v["sim"] = serde_json::json!({ "horizon": 20.0, "n_paths": 24 });
    let p = write_config(dir.path(), "threads.json", &v);
    let a = diffctl(&["simulate", "--config", &p, "--threads", "1"]);
    let b = diffctl(&["simulate", "--config", &p, "--threads", "3"]);
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    assert_eq!(stdout(&a), stdout(&b));
}
