use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn riesz(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_riesz"));
    cmd.args(args).env_remove("RIESZ_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn small_config(out: &Path) -> Value {
    json!({
        "set": { "kind": "interval", "a": 0.0, "b": 2.0, "n_quad": 128 },
        "field": { "kind": "catalog", "id": "e" },
        "s": 4.0,
        "n": 24,
        "optimizer": { "max_iters": 300, "restarts": 2, "rng_seed": 9 },
        "output_dir": out,
    })
}

fn write_config(dir: &Path, name: &str, config: &Value) -> String {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(config).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn solve_writes_all_outputs_and_a_schema_valid_report() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = write_config(tmp.path(), "run.json", &small_config(&out));
    let res = riesz(&["solve", &cfg], &[]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));

    for f in ["points.csv", "density.csv", "trace.csv", "empirical_density.csv", "scatter.svg", "report.json"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let points = fs::read_to_string(out.join("points.csv")).unwrap();
    assert!(points.starts_with("x0\r\n"));
    assert_eq!(points.lines().count(), 25);

    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let schema_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/report.schema.json");
    let schema: Value = serde_json::from_str(&fs::read_to_string(schema_path).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator.iter_errors(&report).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?}");
    assert_eq!(report["n"], 24);
}

#[test]
fn reproducible_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for (k, threads) in ["1", "2"].iter().enumerate() {
        let out = tmp.path().join(format!("run{k}"));
        let cfg = write_config(tmp.path(), &format!("run{k}.json"), &small_config(&out));
        let res = riesz(&["solve", &cfg], &[("RIESZ_THREADS", threads)]);
        assert!(res.status.success());
        files.push((fs::read(out.join("points.csv")).unwrap(), fs::read(out.join("trace.csv")).unwrap()));
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn config_errors_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");

    let mut unknown = small_config(&out);
    unknown["bogus"] = json!(1);
    let mut sub_critical = small_config(&out);
    sub_critical["s"] = json!(0.5);
    let mut bad_settings = small_config(&out);
    bad_settings["optimizer"]["armijo_c"] = json!(2.0);
    let mut param = small_config(&out);
    param["set"] = json!({ "kind": "param", "label": "curve", "hausdorff_dim": 1, "ambient_dim": 2 });

    for (i, cfg) in [unknown, sub_critical, bad_settings, param].iter().enumerate() {
        let path = write_config(tmp.path(), &format!("c{i}.json"), cfg);
        let res = riesz(&["solve", &path], &[]);
        assert_eq!(res.status.code(), Some(2), "case {i}: {}", String::from_utf8_lossy(&res.stderr));
    }

    let garbage = tmp.path().join("garbage.json");
    fs::write(&garbage, "{ not json").unwrap();
    assert_eq!(riesz(&["solve", garbage.to_str().unwrap()], &[]).status.code(), Some(2));
    assert_eq!(riesz(&["constants", "--s", "1", "--d", "2"], &[]).status.code(), Some(2));
    assert_eq!(riesz(&["reproduce", "z"], &[]).status.code(), Some(2));

    let good = write_config(tmp.path(), "good.json", &small_config(&out));
    assert_eq!(riesz(&["solve", &good], &[("RIESZ_THREADS", "zero")]).status.code(), Some(2));
}

#[test]
fn io_errors_exit_with_4() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing.json");
    assert_eq!(riesz(&["solve", missing.to_str().unwrap()], &[]).status.code(), Some(4));

    let blocker = tmp.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let cfg = write_config(tmp.path(), "run.json", &small_config(&blocker.join("sub")));
    assert_eq!(riesz(&["solve", &cfg], &[]).status.code(), Some(4));
}

#[test]
fn constants_and_design_print_json() {
    let res = riesz(&["constants", "--s", "4", "--d", "1"], &[]);
    assert!(res.status.success());
    let v: Value = serde_json::from_slice(&res.stdout).unwrap();
    assert!((v["m_constant"].as_f64().unwrap() - 10.8232).abs() < 1e-4, "{v}");

    let tmp = tempfile::tempdir().unwrap();
    let set = tmp.path().join("set.json");
    let rho = tmp.path().join("rho.json");
    fs::write(&set, r#"{ "kind": "interval", "a": 0.0, "b": 1.0 }"#).unwrap();
    fs::write(&rho, r#"{ "kind": "truncated_quadratic", "center": 0.5, "half_width": 0.25 }"#).unwrap();
    let res = riesz(&["design", set.to_str().unwrap(), rho.to_str().unwrap(), "--s", "3"], &[]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let v: Value = serde_json::from_slice(&res.stdout).unwrap();
    assert!(v["l1_roundtrip"].as_f64().unwrap().abs() < 1e-8, "{v}");
    assert!(v["max_rel_density_error"].as_f64().unwrap() < 1e-6, "{v}");
}
