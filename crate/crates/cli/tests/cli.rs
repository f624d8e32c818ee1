use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn disco(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_disco"))
        .args(args)
        .env_remove("DISCO_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn tiny_spec(methods: &[&str], seeds: &[u64]) -> Value {
    let domain = |name: &str| json!({ "name": name, "prompt_count": 100, "vocab": 2, "length": 1, "contexts": 4 });
    json!({
        "schema_version": 1,
        "name": "t",
        "train": {
            "group_size": 4,
            "batch_size": 8,
            "eval_every": 2,
            "mixture": { "total": 40, "preset": "balanced" },
            "env": { "domains": [domain("a"), domain("b")], "seed": 0 }
        },
        "comparisons": methods,
        "seeds": seeds
    })
}

fn write_spec(dir: &Path, spec: &Value) -> String {
    let path = dir.join("spec.json");
    fs::write(&path, serde_json::to_string_pretty(spec).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn experiment_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path(), &tiny_spec(&["naive", "dr_grpo", "disco"], &[1, 2]));
    let out = tmp.path().join("out");
    let run = disco(&["experiment", "--spec", &spec, "--out", out.to_str().unwrap()]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));

    let root = out.join("t");
    for m in ["naive", "dr_grpo", "disco"] {
        for s in [1, 2] {
            let cell = root.join(m).join("balanced").join(format!("seed-{s}"));
            for f in ["report.json", "reward_curve.csv", "eval_table.csv", "timing.json"] {
                assert!(cell.join(f).is_file(), "{}", cell.join(f).display());
            }
        }
    }
    let table = fs::read_to_string(root.join("comparison.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
    assert!(table.starts_with("method,balanced,avg\n"));
    let tests: Value = serde_json::from_str(&fs::read_to_string(root.join("ttests.json")).unwrap()).unwrap();
    assert_eq!(tests.as_array().unwrap().len(), 3);
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path(), &tiny_spec(&["disco"], &[3]));
    let read = |out: &Path| fs::read(out.join("t/disco/balanced/seed-3/report.json")).unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(disco(&["experiment", "--spec", &spec, "--out", a.to_str().unwrap()])
        .status
        .success());
    assert!(disco(&["experiment", "--spec", &spec, "--out", b.to_str().unwrap()])
        .status
        .success());
    assert_eq!(read(&a), read(&b));
}

#[test]
fn out_dir_env_overrides_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path(), &tiny_spec(&["naive"], &[1]));
    let env_out = tmp.path().join("from-env");
    let run = Command::new(env!("CARGO_BIN_EXE_disco"))
        .args([
            "train",
            "--spec",
            &spec,
            "--out",
            tmp.path().join("flag").to_str().unwrap(),
        ])
        .env("DISCO_OUT_DIR", &env_out)
        .output()
        .unwrap();
    assert!(run.status.success());
    assert!(env_out.join("t/naive/balanced/seed-1/report.json").is_file());
    assert!(!tmp.path().join("flag").exists());
}

#[test]
fn train_overrides_method_seed_and_variant() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path(), &tiny_spec(&["naive"], &[1]));
    let out = tmp.path().join("out");
    let run = disco(&[
        "train",
        "--spec",
        &spec,
        "--out",
        out.to_str().unwrap(),
        "--method",
        "domain_only",
        "--seed",
        "7",
        "--variant",
        "v3",
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let report: Value =
        serde_json::from_str(&fs::read_to_string(out.join("t/domain_only/balanced/seed-7/report.json")).unwrap())
            .unwrap();
    assert_eq!(report["method"], "domain_only");
    assert_eq!(report["variant"], "v3");
    assert_eq!(report["seed"], 7);
}

#[test]
fn report_exports_and_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path(), &tiny_spec(&["naive"], &[1]));
    let out = tmp.path().join("out");
    assert!(disco(&["train", "--spec", &spec, "--out", out.to_str().unwrap()])
        .status
        .success());
    let run_dir = out.join("t/naive/balanced/seed-1");
    let dest = tmp.path().join("export");
    let r = disco(&[
        "report",
        "--run-dir",
        run_dir.to_str().unwrap(),
        "--format",
        "json",
        "--out",
        dest.to_str().unwrap(),
    ]);
    assert!(r.status.success());
    assert_eq!(
        fs::read(run_dir.join("report.json")).unwrap(),
        fs::read(dest.join("report.json")).unwrap()
    );

    let r = disco(&[
        "report",
        "--run-dir",
        run_dir.to_str().unwrap(),
        "--format",
        "csv",
        "--out",
        dest.to_str().unwrap(),
    ]);
    assert!(r.status.success());
    let report: Value = serde_json::from_slice(&fs::read(run_dir.join("report.json")).unwrap()).unwrap();
    let checkpoints = report["eval_table"].as_array().unwrap().len();
    let csv = fs::read_to_string(dest.join("eval_table.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("checkpoint,domain,accuracy"));
    assert_eq!(csv.lines().count(), 1 + 2 * checkpoints);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let out = out.to_str().unwrap();

    let r = disco(&["report", "--run-dir", out, "--format", "yaml"]);
    assert_eq!(r.status.code(), Some(2));

    let r = disco(&["report", "--run-dir", out, "--format", "json"]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("no run report"));

    let mut spec = tiny_spec(&["naive"], &[1]);
    spec["train"].as_object_mut().unwrap().remove("group_size");
    let path = write_spec(tmp.path(), &spec);
    let r = disco(&["train", "--spec", &path, "--out", out]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("group_size"));

    let path = write_spec(tmp.path(), &tiny_spec(&["naive"], &[1, 1]));
    assert_eq!(
        disco(&["experiment", "--spec", &path, "--out", out]).status.code(),
        Some(2)
    );

    assert_eq!(
        disco(&["train", "--spec", "/no/such/spec.json", "--out", out])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(disco(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn gen_data_and_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path(), &tiny_spec(&["naive", "disco"], &[1]));
    let out = tmp.path().join("out");
    assert!(disco(&["gen-data", "--spec", &spec, "--out", out.to_str().unwrap()])
        .status
        .success());
    let train = fs::read_to_string(out.join("t/data/train.jsonl")).unwrap();
    assert_eq!(train.lines().count(), 40);
    let eval = fs::read_to_string(out.join("t/data/eval.jsonl")).unwrap();
    assert_eq!(eval.lines().count(), 40);

    let r = disco(&["sweep-g", "--spec", &spec, "--out", out.to_str().unwrap(), "--g", "2,4"]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let csv = fs::read_to_string(out.join("t/sweep-g/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2);
    assert!(out.join("t/sweep-g/disco/g-4/seed-1/report.json").is_file());
    assert_eq!(
        disco(&["sweep-g", "--spec", &spec, "--out", out.to_str().unwrap(), "--g", "1"])
            .status
            .code(),
        Some(2)
    );
}
