use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use corrfield::kalman_exponent::periodic_exponent;
use corrfield::{exponent, scalar_exponent, FieldParams, SensorLayout};
use serde_json::Value;

const CONFIG_SCHEMA_ID: &str = "https://corrfield.invalid/schemas/experiment_config.schema.json";

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_corrfield"))
        .args(args)
        .env_remove("CORRFIELD_THREADS")
        .output()
        .expect("spawn corrfield")
}

fn json_ok(args: &[&str]) -> Value {
    let out = run(args);
    assert_eq!(out.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json output")
}

fn crate_path(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(rel)
}

fn load(rel: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(crate_path(rel)).unwrap()).unwrap()
}

fn validators() -> (jsonschema::Validator, jsonschema::Validator) {
    let config = load("schemas/experiment_config.schema.json");
    let output = load("schemas/output.schema.json");
    let registry = jsonschema::Registry::new()
        .add(CONFIG_SCHEMA_ID, config.clone())
        .unwrap()
        .prepare()
        .unwrap();
    let build = |schema: &Value| jsonschema::options().with_registry(&registry).build(schema).unwrap();
    (build(&config), build(&output))
}

fn assert_valid(v: &jsonschema::Validator, doc: &Value) {
    let errors: Vec<String> = v.iter_errors(doc).map(|e| format!("{} at {}", e, e.instance_path())).collect();
    assert!(errors.is_empty(), "{errors:#?}");
}

#[test]
fn exponent_matches_library_exactly() {
    let v = json_ok(&["exponent", "--A", "1.5", "--snr", "2", "--spacing", "0.3"]);
    let k = v["result"]["exponent"]["exponent_per_sensor"].as_f64().unwrap();
    let p = FieldParams::from_snr(1.5, 2.0).unwrap();
    assert_eq!(k, scalar_exponent(&p, 0.3).unwrap().exponent_per_sensor);
}

#[test]
fn single_offset_periodic_equals_uniform() {
    let v = json_ok(&["exponent", "--snr-db", "3", "--offsets", "0.4"]);
    let k = v["result"]["exponent"]["exponent_per_sensor"].as_f64().unwrap();
    let p = FieldParams::from_snr_db(1.0, 3.0).unwrap();
    assert!((k - scalar_exponent(&p, 0.4).unwrap().exponent_per_sensor).abs() < 1e-10);
}

#[test]
fn clustered_output_carries_periodic_cross_check() {
    let v = json_ok(&["exponent", "--snr-db", "-3", "--cluster-size", "3", "--period", "0.5", "--cluster-count", "4"]);
    let k = v["result"]["exponent"]["exponent_per_block"].as_f64().unwrap();
    let check = v["result"]["periodic_cross_check"]["exponent_per_sensor"].as_f64().unwrap();
    let p = FieldParams::from_snr_db(1.0, -3.0).unwrap();
    let layout = SensorLayout::Clustered { cluster_size: 3, cluster_count: 4, period: 0.5 };
    assert_eq!(k, exponent(&p, &layout).unwrap().exponent_per_block);
    let vector = periodic_exponent(&p, &[0.0, 0.0, 0.5]).unwrap().exponent_per_sensor;
    assert_eq!(check, vector);
    assert!((k / 3.0 - vector).abs() < 1e-8);
}

#[test]
fn cluster_sweep_csv_marks_spreading_at_high_snr() {
    let out = run(&["sweep", "--axis", "cluster", "--A", "10", "--snr-db", "10", "--format", "csv"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# settings: {"));
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "is_argmax").unwrap();
    let best: Vec<&str> = lines
        .filter(|l| l.split(',').nth(col) == Some("1"))
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(best, vec!["1"]);
}

#[test]
fn sweep_argmax_agrees_between_json_and_csv() {
    let base = ["sweep", "--axis", "delta1", "--A", "8", "--snr-db", "10", "--period", "0.02", "--grid-points", "41"];
    let v = json_ok(&base);
    let json_best = v["result"]["argmax_coords"][0].as_f64().unwrap();
    let mut csv_args = base.to_vec();
    csv_args.extend(["--format", "csv"]);
    let text = String::from_utf8(run(&csv_args).stdout).unwrap();
    let row = text.lines().skip(2).find(|l| l.ends_with(",1")).unwrap();
    let csv_best: f64 = row.split(',').next().unwrap().parse().unwrap();
    assert_eq!(json_best, csv_best);
}

#[test]
fn malformed_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"diffusion_rate": 1, "stationary_variance": 1, "noise_variance": 1, "bogus": 2}"#)
        .unwrap();
    let out = run(&["exponent", "--config", path.to_str().unwrap(), "--spacing", "1"]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(err["message"].as_str().unwrap().contains("bogus"));
    assert!(out.stdout.is_empty());

    std::fs::write(&path, "{ not json").unwrap();
    assert_eq!(run(&["exponent", "--config", path.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn invalid_arguments_exit_two() {
    let out = run(&["optimize", "--snr", "1"]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "domain");
    assert_eq!(run(&["exponent", "--snr", "-1", "--spacing", "1"]).status.code(), Some(2));
    assert_eq!(run(&["exponent", "--snr", "1", "--snr-db", "0"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn failed_validation_exits_one() {
    let out = run(&[
        "validate", "--spacing", "0.5", "--snr", "1", "--n-values", "4,8,12,16,20,24,28,32", "--trials", "10000",
        "--tolerance", "1e-9",
    ]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["result"]["pass"], false);
}

#[test]
fn output_is_byte_identical_across_runs_and_thread_counts() {
    let args = ["simulate", "--spacing", "0.2", "--snr", "0.5", "--n-values", "5,10,20", "--trials", "20000", "--seed", "7"];
    let a = run(&args).stdout;
    let b = run(&args).stdout;
    let mut seq = vec!["--sequential"];
    seq.extend(args);
    let c = run(&seq).stdout;
    let mut capped = vec!["--threads", "1"];
    capped.extend(args);
    let d = run(&capped).stdout;
    assert!(!a.is_empty());
    assert_eq!(a, b);
    assert_eq!(a, c);
    assert_eq!(a, d);
}

#[test]
fn out_flag_writes_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("k.json");
    let out = run(&["--out", path.to_str().unwrap(), "exponent", "--snr", "1", "--spacing", "1"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(v["command"], "exponent");
}

#[test]
fn example_configs_satisfy_schema() {
    let (config, _) = validators();
    for name in ["examples/iid.json", "examples/perfect-correlation.json"] {
        assert_valid(&config, &load(name));
    }
    assert!(!config.is_valid(&serde_json::json!({"diffusion_rate": 1.0, "bogus": 1})));
    assert!(!config.is_valid(&serde_json::json!({
        "diffusion_rate": -1.0, "stationary_variance": 1.0, "noise_variance": 1.0
    })));
}

#[test]
fn every_command_output_satisfies_schema() {
    let (_, output) = validators();
    let cases: Vec<Vec<&str>> = vec![
        vec!["exponent", "--snr", "2", "--spacing", "0.5"],
        vec!["exponent", "--snr", "0.5", "--cluster-size", "2", "--period", "0.5", "--cluster-count", "3"],
        vec!["exponent", "--snr", "1", "--offsets", "0.1,0.2,0.3", "--period-count", "3"],
        vec!["optimize", "--snr", "0.5"],
        vec!["sweep", "--axis", "a", "--snr", "0.5", "--grid-points", "11"],
        vec!["sweep", "--axis", "snr", "--a", "0.5", "--lo", "0.1", "--hi", "10", "--grid-points", "5"],
        vec!["sweep", "--axis", "cluster", "--snr-db", "-3"],
        vec!["sweep", "--axis", "delta1", "--snr-db", "10", "--A", "8", "--period", "0.02", "--grid-points", "11"],
        vec!["sweep", "--axis", "x2x3", "--snr-db", "10", "--A", "5", "--period", "0.02", "--grid-points", "6"],
        vec!["sweep", "--axis", "field", "--snr", "2", "--n-values", "10,20,40"],
        vec!["sweep", "--axis", "optimal", "--lo", "-12", "--hi", "-1", "--grid-points", "5"],
        vec!["simulate", "--snr", "1", "--spacing", "0.5", "--n-values", "4,8", "--trials", "10000"],
        vec!["validate", "--snr", "1", "--spacing", "0.5", "--n-values", "4,8,12,16,20,24", "--trials", "10000"],
    ];
    for args in cases {
        let out = run(&args);
        assert!(matches!(out.status.code(), Some(0) | Some(1)), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        let v: Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(v["command"], args[0]);
        assert_valid(&output, &v);
    }
}

#[test]
fn iid_example_validates() {
    let path = crate_path("examples/iid.json");
    let out = run(&["validate", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["result"]["regime"], "exponential");
    assert_eq!(v["result"]["alpha_independent"], true);
}

#[test]
fn perfect_correlation_example_reports_polynomial_decay() {
    let path = crate_path("examples/perfect-correlation.json");
    let out = run(&["validate", "--config", path.to_str().unwrap(), "--trials", "10000"]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["result"]["regime"], "polynomial");
    assert_eq!(v["result"]["closed_form_rate"], 0.0);
    assert_eq!(out.status.code(), Some(0));
}
