use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn sim(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sim"));
    c.args(args).env_remove("SIM_WORKERS");
    for (k, v) in env {
        c.env(k, v);
    }
    c.output().unwrap()
}

fn run_config(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    sim(&args, &[])
}

fn manifest(out: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap()
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn otc_config(beta: &str, run: &str) -> String {
    format!(
        r#"{{"version": 1,
            "model": {{"name": "otc", "parameters": {{"lambda_u": 1, "lambda_d": 1, "beta": {beta}, "rho": 1}}}},
            "initial": {{"mode": "product", "law": {{"kind": "discrete", "weights": [0.25, 0.25, 0.25, 0.25]}}}},
            "run": {run}}}"#
    )
}

#[test]
fn shipped_configs_validate() {
    let tmp = tempfile::tempdir().unwrap();
    let mut seen = 0;
    for entry in std::fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        if path.file_name().unwrap() == "config.schema.json" || path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let o = run_config("validate", &path, tmp.path(), &[]);
        assert_eq!(o.status.code(), Some(0), "{}: {}", path.display(), String::from_utf8_lossy(&o.stderr));
        seen += 1;
    }
    assert!(seen >= 6);
}

#[test]
fn negative_beta_is_a_single_named_violation() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bad.json", &otc_config("-1", r#"{"t_end": 1, "n": 10}"#));
    let o = run_config("validate", &cfg, &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("1 violation(s)"), "{err}");
    assert!(err.contains("model.parameters.beta"), "{err}");
}

#[test]
fn missing_model_and_unknown_keys_are_all_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "bad.json",
        r#"{"version": 1, "initial": {"mode": "proportions", "proportions": [1.0]}, "run": {"t_end": 1, "n": 5, "speed": 2}, "colour": 1}"#,
    );
    let o = run_config("validate", &cfg, tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("run.speed") && err.contains("colour"), "{err}");

    let cfg = write(
        tmp.path(),
        "nomodel.json",
        r#"{"version": 1, "initial": {"mode": "proportions", "proportions": [1.0]}, "run": {"t_end": -1, "n": 5}}"#,
    );
    let err = String::from_utf8_lossy(&run_config("validate", &cfg, tmp.path(), &[]).stderr).to_string();
    assert!(err.contains("model: model required"), "{err}");
    assert!(err.contains("run.t_end"), "{err}");
}

#[test]
fn syntax_errors_report_line_and_column() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "broken.json", "{\n  \"version\": 1,\n  \"model\": ,\n}");
    let o = run_config("run", &cfg, tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn zero_rate_run_gives_single_snapshot_trajectories() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = run_config("run", &configs().join("zero_rate_run.json"), &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for r in 0..3 {
        let csv = std::fs::read_to_string(out.join(format!("trajectories/replica_{r:04}.csv"))).unwrap();
        let data: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(data, ["event_index,time,event_kind,moved_agent_ids,type_before,type_after"]);
    }
    let report: Value = serde_json::from_slice(&std::fs::read(out.join("run_report.json")).unwrap()).unwrap();
    assert_eq!(report["events"], serde_json::json!([0, 0, 0]));
}

#[test]
fn lln_with_two_population_sizes_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "two.json",
        &otc_config("1", r#"{"t_end": 1, "n_list": [100, 200], "replicas": 3}"#),
    );
    let o = run_config("lln", &cfg, &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("at least 3"));
}

#[test]
fn shipped_otc_lln_config_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = run_config("lln", &configs().join("otc_lln.json"), &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let report: Value = serde_json::from_slice(&std::fs::read(out.join("lln_report.json")).unwrap()).unwrap();
    let slope = report["fit"]["slope"].as_f64().unwrap();
    assert!((-0.65..=-0.35).contains(&slope), "{slope}");
    assert_eq!(report["provenance"]["n"], serde_json::json!([200, 800, 3200, 12800]));
    let m = manifest(&out);
    assert_eq!(m["replica_seeds"].as_array().unwrap().len(), 400);
    let csv = std::fs::read_to_string(out.join("lln_errors.csv")).unwrap();
    assert!(csv.starts_with("# quantity:"));
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 401);
}

#[test]
fn failed_verdict_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let body = std::fs::read_to_string(configs().join("opinion_clt.json"))
        .unwrap()
        .replace("\"clt_tolerance\": 0.15", "\"clt_tolerance\": 1e-6")
        .replace("\"n\": 10000", "\"n\": 200");
    let cfg = write(tmp.path(), "strict.json", &body);
    let o = run_config("clt", &cfg, &tmp.path().join("out"), &["--replicas", "150"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(manifest(&tmp.path().join("out"))["exit_code"], 2);
}

#[test]
fn outputs_are_reproducible_and_seed_sensitive() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("two_state_run.json");
    let files = |dir: &str, extra: &[&str], env: &[(&str, &str)]| {
        let out = tmp.path().join(dir);
        let mut args = vec!["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        let o = sim(&args, env);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        manifest(&out)["files"].clone()
    };
    let a = files("a", &["--replicas", "4"], &[("SIM_WORKERS", "1")]);
    let b = files("b", &["--replicas", "4"], &[("SIM_WORKERS", "3")]);
    let c = files("c", &["--replicas", "4", "--seed", "8"], &[]);
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(manifest(&tmp.path().join("c"))["seed"], 8);
    assert_eq!(manifest(&tmp.path().join("a"))["replicas"], 4);
    // the inventory describes the file actually on disk
    let entry = a.as_array().unwrap().iter().find(|f| f["path"] == "limit.csv").unwrap();
    let bytes = std::fs::read(tmp.path().join("a/limit.csv")).unwrap();
    assert_eq!(entry["bytes"], bytes.len() as u64);
}

#[test]
fn bad_worker_count_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("zero_rate_run.json");
    let o = sim(
        &["run", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()],
        &[("SIM_WORKERS", "many")],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("SIM_WORKERS"));
}

fn schema() -> jsonschema::Validator {
    let raw: Value = serde_json::from_slice(&std::fs::read(configs().join("config.schema.json")).unwrap()).unwrap();
    jsonschema::validator_for(&raw).unwrap()
}

#[test]
fn shipped_configs_conform_to_the_schema() {
    let schema = schema();
    for entry in std::fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        if path.file_name().unwrap() == "config.schema.json" || path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let doc: Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
        let errors: Vec<String> = schema.iter_errors(&doc).map(|e| e.to_string()).collect();
        assert!(errors.is_empty(), "{}: {errors:?}", path.display());
    }
}

#[test]
fn schema_and_binary_agree_on_rejections() {
    let tmp = tempfile::tempdir().unwrap();
    let schema = schema();
    let cases = [
        otc_config("-1", r#"{"t_end": 1, "n": 10}"#),
        otc_config("1", r#"{"t_end": -0.5, "n": 10}"#),
        otc_config("1", r#"{"t_end": 1, "n": 10, "speed": 2}"#),
        otc_config("1", r#"{"t_end": 1, "n": 10, "grid": {"lo": 0, "hi": 1, "points": 2}}"#),
    ];
    for (i, body) in cases.iter().enumerate() {
        let doc: Value = serde_json::from_str(body).unwrap();
        assert!(!schema.is_valid(&doc), "case {i}");
        let cfg = write(tmp.path(), &format!("c{i}.json"), body);
        assert_eq!(run_config("validate", &cfg, tmp.path(), &[]).status.code(), Some(1), "case {i}");
    }
    let ok: Value = serde_json::from_str(&otc_config("1", r#"{"t_end": 1, "n": 10}"#)).unwrap();
    assert!(schema.is_valid(&ok));
}
