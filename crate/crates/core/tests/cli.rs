//! End-to-end tests of the command-line front end.

use std::path::{Path, PathBuf};

use serde_json::Value;
use tempfile::TempDir;
use xdesign::cli::{run, EXIT_INAPPLICABLE, EXIT_INPUT, EXIT_OK};
use xdesign::model::{GroupScenario, GroupSizes, PopulationSpec};
use GroupScenario::*;

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn write_spec(dir: &Path, name: &str, spec: &PopulationSpec) -> PathBuf {
    write(dir, name, &serde_json::to_string_pretty(spec).unwrap())
}

fn call(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let mut full = vec!["xdesign"];
    full.extend_from_slice(args);
    let code = run(full, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn json(args: &[&str]) -> Value {
    let mut a = args.to_vec();
    a.extend(["--output", "json", "--no-timestamp"]);
    let (code, out, err) = call(&a);
    assert_eq!(code, EXIT_OK, "{err}");
    serde_json::from_str(&out).unwrap()
}

fn setup1_spec() -> PopulationSpec {
    let mut s = PopulationSpec::uniform(GroupSizes::new(0.0, 0.0, 0.0, 2000.0), 0.0, 0.8);
    s.set(IPsi, 0.1, 0.8);
    s
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn effects_reports_the_intersection_example() {
    let dir = TempDir::new().unwrap();
    let spec = write_spec(dir.path(), "s.json", &setup1_spec());
    let v = json(&["effects", "--spec", path(&spec), "--setup", "intersection"]);
    let s = &v["payload"]["summaries"][0];
    assert_eq!(s["setup"], "intersection-only");
    assert!((s["delta"].as_f64().unwrap() - 0.1).abs() < 1e-12);
    assert!((s["theta_star"].as_f64().unwrap() - 0.112_063_408_724_518_7).abs() < 1e-9);
    assert_eq!(v["manifest"]["command"], "effects");
    assert!(v["manifest"]["timestamp"].is_null());
    let (code, table, _) = call(&["effects", "--spec", path(&spec), "--setup", "1"]);
    assert_eq!(code, EXIT_OK);
    assert!(table.contains("0.1120634087"));
}

#[test]
fn inapplicable_setup_exits_with_code_3() {
    let dir = TempDir::new().unwrap();
    let spec = write_spec(
        dir.path(),
        "s.json",
        &setup1_spec().with_sizes(GroupSizes::new(10.0, 10.0, 10.0, 0.0)),
    );
    let (code, _, err) = call(&["effects", "--spec", path(&spec), "--setup", "intersection"]);
    assert_eq!(code, EXIT_INAPPLICABLE);
    assert!(err.contains("n3"), "{err}");
    // Without an explicit setup the inapplicable one is skipped with a warning.
    let (code, _, err) = call(&["effects", "--spec", path(&spec)]);
    assert_eq!(code, EXIT_OK);
    assert!(err.contains("warning"));
}

#[test]
fn malformed_inputs_exit_with_code_2() {
    let dir = TempDir::new().unwrap();
    let text = serde_json::to_string(&setup1_spec())
        .unwrap()
        .replace("\"g3\"", "\"g5\"");
    let bad = write(dir.path(), "bad.json", &text);
    let (code, _, err) = call(&["effects", "--spec", path(&bad)]);
    assert_eq!(code, EXIT_INPUT);
    assert!(err.contains("g5") && err.contains("line"), "{err}");

    let neg = setup1_spec().with_sizes(GroupSizes::new(-1.0, 0.0, 0.0, 10.0));
    let neg = write_spec(dir.path(), "neg.json", &neg);
    let (code, _, err) = call(&["effects", "--spec", path(&neg)]);
    assert_eq!(code, EXIT_INPUT);
    assert!(err.contains("g0"), "{err}");

    let spec = write_spec(dir.path(), "s.json", &setup1_spec());
    let cfg = write(dir.path(), "cfg.json", r#"{"alpha": 0.5, "power": 0.4}"#);
    assert_eq!(
        call(&["effects", "--spec", path(&spec), "--config", path(&cfg)]).0,
        EXIT_INPUT
    );
    assert_eq!(call(&["effects", "--spec", "/nonexistent/spec.json"]).0, EXIT_INPUT);
    assert_eq!(
        call(&["compare", "--spec", path(&spec), "--a", "7", "--b", "1"]).0,
        EXIT_INPUT
    );
}

#[test]
fn compare_examples() {
    let dir = TempDir::new().unwrap();
    let mut noisy = PopulationSpec::uniform(GroupSizes::new(1000.0, 1000.0, 1000.0, 1000.0), 0.0, 1.0);
    noisy.set(C0, 0.0, 10.0).set(I2, 0.1, 1.0);
    let noisy = write_spec(dir.path(), "noisy.json", &noisy);
    let v = json(&[
        "compare",
        "--spec",
        path(&noisy),
        "--a",
        "qualified",
        "--b",
        "all-samples",
    ]);
    assert_eq!(v["payload"]["verdict"]["winner"], "qualified-only");
    assert_eq!(v["payload"]["verdict"]["criterion"], "1");

    // Per-group size far below the required n for the given lift difference.
    let mut small = PopulationSpec::uniform(GroupSizes::new(0.0, 1e4, 1e4, 1e4), 0.2, 0.16);
    small.set(I2, 0.205, 0.16);
    let small = write_spec(dir.path(), "small.json", &small);
    let v = json(&[
        "compare",
        "--spec",
        path(&small),
        "--a",
        "dual-control",
        "--b",
        "qualified",
    ]);
    assert_eq!(v["payload"]["verdict"]["winner"], "qualified-only");
    let v = json(&["dual-control-check", "--spec", path(&small)]);
    assert_eq!(v["payload"]["dual_control_superior"], false);

    let v = json(&[
        "compare",
        "--spec",
        path(&small),
        "--a",
        "qualified",
        "--b",
        "qualified",
    ]);
    assert!(v["payload"]["verdict"]["winner"].is_null());
    assert_eq!(v["payload"]["verdict"]["criterion"], "none");
}

#[test]
fn dilution_check_reports_a_verdict_or_inapplicability() {
    let dir = TempDir::new().unwrap();
    let mut spec = PopulationSpec::uniform(GroupSizes::new(1000.0, 1000.0, 1000.0, 1000.0), 0.0, 1.0);
    spec.set(C0, 0.0, 10.0).set(I2, 0.1, 1.0);
    let p = write_spec(dir.path(), "d.json", &spec);
    let v = json(&["dilution-check", "--spec", path(&p)]);
    assert_eq!(v["payload"]["verdict"]["undiluted_superior"], true);
    assert_eq!(v["payload"]["verdict"]["rule"], "smaller-mde");
    let p0 = write_spec(
        dir.path(),
        "d0.json",
        &spec.with_sizes(GroupSizes::new(0.0, 10.0, 10.0, 10.0)),
    );
    assert_eq!(call(&["dilution-check", "--spec", path(&p0)]).0, EXIT_INAPPLICABLE);
}

#[test]
fn required_n_examples() {
    let v = json(&["required-n", "--sigma2", "0.16", "--delta", "0.005"]);
    let n = v["payload"]["required_n"]["value"].as_f64().unwrap();
    assert!((5.0e6..5.2e6).contains(&n), "{n}");
    assert_eq!(v["payload"]["ceil"].as_f64().unwrap(), n.ceil());
    let q = json(&["required-n", "--sigma2", "0.16", "--delta", "0.01"])["payload"]["required_n"]["value"]
        .as_f64()
        .unwrap();
    assert!((q * 4.0 / n - 1.0).abs() < 1e-12);

    let (code, out, err) = call(&["required-n", "--sigma2", "0.16", "--delta", "0"]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("infinite") && err.contains("warning"));
    assert_eq!(call(&["required-n", "--sigma2", "-1", "--delta", "0.1"]).0, EXIT_INPUT);
}

const TINY: &str = r#"{"seed": 5, "n_evaluations": 10, "n_effect_samples": 100, "n_bootstrap": 100,
    "n_mde_samples": 3, "power_batch_reps": 50, "max_batches": 4}"#;

#[test]
fn validate_smoke_determinism_and_round_trip() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "eval.json", TINY);
    let report = dir.path().join("report.json");
    let table = dir.path().join("table.txt");
    let args = [
        "validate",
        "--eval-config",
        path(&cfg),
        "--setup",
        "qualified",
        "--output",
        "json",
        "--no-timestamp",
    ];
    let mut with_files = args.to_vec();
    with_files.extend(["--report", path(&report), "--table", path(&table)]);

    let start = std::time::Instant::now();
    let (code, first, err) = call(&with_files);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(start.elapsed().as_secs() < 10);
    let (_, second, _) = call(&args);
    assert_eq!(first, second, "reruns must be byte-identical");

    let v: Value = serde_json::from_str(&first).unwrap();
    assert_eq!(v["payload"]["records"].as_array().unwrap().len(), 10);
    assert_eq!(v["manifest"]["seed"], 5);
    assert!(v["payload"]["aggregate"][0]["mde"]["display"]
        .as_str()
        .unwrap()
        .contains('/'));
    assert!(std::fs::read_to_string(&table).unwrap().contains("qualified"));

    let again = json(&["validate", "--from-report", path(&report)]);
    assert_eq!(again["payload"]["aggregate"], v["payload"]["aggregate"]);
}

#[test]
fn mde_rows_are_present_with_default_sampling() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "eval.json",
        r#"{"n_evaluations": 1, "n_mde_samples": 2, "n_effect_samples": 50}"#,
    );
    let v = json(&["validate", "--eval-config", path(&cfg)]);
    let agg = v["payload"]["aggregate"].as_array().unwrap();
    assert_eq!(agg.len(), 4);
    assert!(agg.iter().all(|a| a["mde"]["total"].as_u64() == Some(1)));
}

#[test]
fn invalid_evaluation_config_exits_with_code_2() {
    let dir = TempDir::new().unwrap();
    let bad = write(dir.path(), "bad.json", r#"{"parameter_ranges": {"var": [1.0, 0.5]}}"#);
    assert_eq!(call(&["validate", "--eval-config", path(&bad)]).0, EXIT_INPUT);
    let unknown = write(dir.path(), "unknown.json", r#"{"n_evals": 3}"#);
    assert_eq!(call(&["validate", "--eval-config", path(&unknown)]).0, EXIT_INPUT);
}

#[test]
fn seed_environment_variable_overrides_the_config() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "eval.json", TINY);
    let run_bin = |seed: &str| {
        std::process::Command::new(env!("CARGO_BIN_EXE_xdesign"))
            .args([
                "validate",
                "--eval-config",
                path(&cfg),
                "--setup",
                "2",
                "--output",
                "json",
                "--no-timestamp",
            ])
            .env("XDESIGN_SEED", seed)
            .output()
            .unwrap()
    };
    let out = run_bin("99");
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["manifest"]["seed"], 99);
    assert_eq!(v["payload"]["config"]["seed"], 99);
    assert_eq!(run_bin("not-a-number").status.code(), Some(EXIT_INPUT));
}
