use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn sdidml(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdidml")).args(args).output().expect("binary runs")
}

fn error_json(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(stderr.trim()).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {stderr}"))
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn simulate_into(dir: &Path, scenario: &str, seed: &str) {
    let out = sdidml(&["simulate", scenario, "--seed", seed, "--output", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

/// Small bootstrap so the end-to-end runs stay quick.
fn write_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("config.json");
    let sep = if extra.is_empty() { "" } else { "," };
    fs::write(&path, format!(r#"{{"bootstrap": {{"B": 49, "mode": "fixed_nuisance"}}{sep}{extra}}}"#)).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn simulate_null_scenario_has_zero_oracle() {
    let dir = TempDir::new().unwrap();
    simulate_into(dir.path(), "S4_null", "3");
    let oracle = read_json(&dir.path().join("oracle.json"));
    assert_eq!(oracle["true_overall_att"], 0.0);
    let cells = oracle["true_att"].as_array().unwrap();
    assert!(!cells.is_empty());
    assert!(cells.iter().all(|c| c["att"] == 0.0));
}

#[test]
fn simulate_is_byte_identical_for_a_seed() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    simulate_into(a.path(), "S1", "11");
    simulate_into(b.path(), "S1", "11");
    assert_eq!(fs::read(a.path().join("panel.csv")).unwrap(), fs::read(b.path().join("panel.csv")).unwrap());
    assert_eq!(fs::read(a.path().join("oracle.json")).unwrap(), fs::read(b.path().join("oracle.json")).unwrap());
}

#[test]
fn unknown_scenario_lists_valid_names() {
    let out = sdidml(&["simulate", "S9_bogus"]);
    assert_eq!(out.status.code(), Some(2));
    let err = error_json(&out);
    assert_eq!(err["error"]["class"], "ConfigError");
    assert_eq!(err["error"]["code"], "cli.unknown_scenario");
    let msg = err["error"]["message"].as_str().unwrap();
    for name in ["S1_homogeneous", "S2_dynamic_heterogeneous", "S3_highdim_nonlinear", "S4_null", "S5_pretrend_violation"] {
        assert!(msg.contains(name), "{msg}");
    }
}

#[test]
fn run_on_simulated_panel_writes_all_outputs() {
    let dir = TempDir::new().unwrap();
    simulate_into(dir.path(), "S1", "5");
    let cfg = write_config(dir.path(), "");
    let out_dir = dir.path().join("results");
    let panel = dir.path().join("panel.csv");
    let out = sdidml(&[
        "run",
        "--config",
        &cfg,
        "--input",
        panel.to_str().unwrap(),
        "--output",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let echo: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(echo["seed"], 0);
    assert_eq!(echo["resolved_config"]["K"], 5);

    for f in ["results.json", "group_time.csv", "event_curve.csv", "diagnostics.json"] {
        assert!(out_dir.join(f).exists(), "missing {f}");
    }
    let results = read_json(&out_dir.join("results.json"));
    let truth = read_json(&dir.path().join("oracle.json"))["true_overall_att"].as_f64().unwrap();
    let att = results["overall"]["att"].as_f64().unwrap();
    let se = results["overall"]["se"].as_f64().unwrap();
    assert!((att - truth).abs() < 4.0 * se, "att {att}, truth {truth}, se {se}");
    assert!(results["overall"]["ci_low"].as_f64().unwrap() < att);
    assert_eq!(results["config_echo"]["bootstrap"]["B"], 49);
    let weights: f64 = results["overall"]["weights"].as_array().unwrap().iter().map(|w| w["weight"].as_f64().unwrap()).sum();
    assert!((weights - 1.0).abs() < 1e-12);
    let header = fs::read_to_string(out_dir.join("group_time.csv")).unwrap();
    assert!(header.starts_with("g,t,event_time,tau,n_treated,n_control"));
    let curve = fs::read_to_string(out_dir.join("event_curve.csv")).unwrap();
    assert!(curve.starts_with("e,att,ci_low,ci_high"));

    // The echoed config alone reproduces the run.
    let before = fs::read(out_dir.join("results.json")).unwrap();
    let echo_path = dir.path().join("echo.json");
    fs::write(&echo_path, results["config_echo"].to_string()).unwrap();
    let again = sdidml(&["run", "--config", echo_path.to_str().unwrap()]);
    assert!(again.status.success(), "{}", String::from_utf8_lossy(&again.stderr));
    assert_eq!(fs::read(out_dir.join("results.json")).unwrap(), before);

    let diag = sdidml(&["diagnose", out_dir.to_str().unwrap()]);
    assert!(diag.status.success());
    let text = String::from_utf8_lossy(&diag.stdout);
    assert!(text.lines().any(|l| l.starts_with("pretrend  ")), "{text}");
    assert!(text.lines().any(|l| l.starts_with("placebo   ")), "{text}");
    assert!(text.lines().any(|l| l.starts_with("overlap   ")), "{text}");
}

#[test]
fn single_thread_run_matches_default() {
    let dir = TempDir::new().unwrap();
    simulate_into(dir.path(), "S1", "8");
    let cfg = write_config(dir.path(), r#""placebo_shift": null"#);
    let panel = dir.path().join("panel.csv");
    let run = |threads: Option<&str>, out: &str| {
        let out_dir = dir.path().join(out);
        let mut args = vec!["run", "--config", &cfg, "--input", panel.to_str().unwrap()];
        let out_str = out_dir.to_str().unwrap().to_string();
        args.extend(["--output", &out_str]);
        if let Some(t) = threads {
            args.extend(["--threads", t]);
        }
        let o = sdidml(&args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let mut v = read_json(&out_dir.join("results.json"));
        v["config_echo"]["output_dir"] = Value::Null;
        v
    };
    assert_eq!(run(Some("1"), "one"), run(None, "many"));
}

#[test]
fn single_fold_needs_override() {
    let dir = TempDir::new().unwrap();
    simulate_into(dir.path(), "S1", "2");
    let cfg = write_config(dir.path(), r#""K": 1"#);
    let panel = dir.path().join("panel.csv");
    let out = sdidml(&["run", "--config", &cfg, "--input", panel.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = error_json(&out);
    assert_eq!(err["error"]["code"], "config.no_crossfit");
    let msg = err["error"]["message"].as_str().unwrap();
    assert!(msg.contains("--allow-no-crossfit") && msg.contains("diagnostic"), "{msg}");
}

#[test]
fn missing_treatment_column_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("bad.csv");
    fs::write(&csv, "unit,time,outcome,x0\na,1,1.0,0.5\na,2,1.5,0.5\n").unwrap();
    let out = sdidml(&["run", "--input", csv.to_str().unwrap(), "--output", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let err = error_json(&out);
    assert_eq!(err["error"]["class"], "DataError");
    assert_eq!(err["error"]["code"], "panel.missing_column");
    assert!(err["error"]["message"].as_str().unwrap().contains("treatment"));
}

#[test]
fn run_without_input_is_a_config_error() {
    let out = sdidml(&["run"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"]["code"], "config.missing_input");
}

#[test]
fn unknown_config_field_is_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"bootsrap": {"B": 9}}"#).unwrap();
    let out = sdidml(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"]["code"], "config.parse");
}

#[test]
fn benchmark_zero_reps_is_usage_error() {
    let dir = TempDir::new().unwrap();
    let out = sdidml(&["benchmark", "S2", "--reps", "0", "--output", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"]["code"], "cli.usage");
}

#[test]
fn benchmark_s2_favours_sdidml_and_is_stable() {
    let dir = TempDir::new().unwrap();
    let mc = dir.path().join("mc.json");
    fs::write(&mc, r#"{"B": 0}"#).unwrap();
    let run = |sub: &str| {
        let out_dir = dir.path().join(sub);
        let out = sdidml(&[
            "benchmark",
            "S2_dynamic_heterogeneous",
            "--reps",
            "6",
            "--seed",
            "4",
            "--config",
            mc.to_str().unwrap(),
            "--output",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        (fs::read_to_string(out_dir.join("benchmark.csv")).unwrap(), read_json(&out_dir.join("benchmark.json")))
    };
    let (csv_a, json_a) = run("a");
    let (csv_b, _) = run("b");
    assert_eq!(csv_a, csv_b);
    assert!(csv_a.starts_with("method,mean_estimate,bias,rmse,mc_se,coverage"));

    let table = json_a["table"].as_array().unwrap();
    let bias = |m: &str| table.iter().find(|r| r["method"] == m).unwrap()["bias"].as_f64().unwrap();
    assert!(bias("twfe").abs() > bias("sdidml").abs());
    assert_eq!(json_a["replications"].as_array().unwrap().len(), 6);
}

#[test]
fn diagnose_empty_directory_reports_missing_artifacts() {
    let dir = TempDir::new().unwrap();
    let out = sdidml(&["diagnose", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_json(&out)["error"]["code"], "cli.missing_artifacts");
}

#[test]
fn zero_threads_is_rejected() {
    let out = sdidml(&["--threads", "0", "diagnose", "."]);
    assert_eq!(out.status.code(), Some(2));
}
