use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use enn_cli::manifest::Manifest;
use serde_json::Value;

const LOGIC: &str = r#"schema_version = 1
name = "logic"
seed = 7

[dataset]
name = "logic"

[trainer]
kind = "enn"

[trainer.enn]
target_subconcepts = 4
svm_cost = 1e6
differentia_multiplier = "inf"
subconcept_multiplier_max = "inf"
prune = false

[evaluation]
list = ["error", "weights"]
"#;

fn enn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_enn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn stderr_json(o: &Output) -> Value {
    let text = String::from_utf8_lossy(&o.stderr);
    let line = text.lines().last().expect("an error line");
    serde_json::from_str(line).expect("stderr is JSON")
}

fn run_manifest(path: &Path) -> Option<Manifest> {
    serde_json::from_str::<Manifest>(&fs::read_to_string(path).ok()?)
        .ok()
        .filter(|m| m.format == enn_cli::manifest::MANIFEST_FORMAT)
}

/// Every file other than a run manifest is listed by exactly one run manifest.
fn assert_files_covered(dir: &Path) {
    let paths: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    let ms: Vec<Manifest> = paths.iter().filter_map(|p| run_manifest(p)).collect();
    assert!(!ms.is_empty());
    for p in paths.iter().filter(|p| run_manifest(p).is_none()) {
        let name = p.file_name().unwrap().to_string_lossy();
        let n = ms
            .iter()
            .filter(|m| m.outputs.iter().any(|f| f.path == name))
            .count();
        assert_eq!(n, 1, "{name} is listed by {n} manifests");
    }
}

#[test]
fn train_logic_writes_a_model_and_reports_zero_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "logic_enn.cfg", LOGIC);
    let out = tmp.path().join("run");
    let o = enn(&["train", "--config", cfg.to_str().unwrap(), "--seed", "7", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("model.json").exists());
    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["error_rate.train"], 0.0);

    let m: Manifest = serde_json::from_str(&fs::read_to_string(out.join("train.manifest.json")).unwrap()).unwrap();
    assert_eq!(m.seed, 7);
    assert!(m.config_sha256.is_some());
    assert!(!m.versions.enn_core.is_empty());
    for f in &m.outputs {
        let bytes = fs::read(out.join(&f.path)).unwrap();
        assert_eq!(f.sha256.as_deref(), Some(enn_core::datasets::sha256_hex(&bytes).as_str()));
    }
    assert_files_covered(&out);
}

#[test]
fn eval_and_report_reuse_the_saved_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "logic.toml", LOGIC);
    let run = tmp.path().join("run");
    assert!(enn(&["train", "--config", cfg.to_str().unwrap(), "--out", run.to_str().unwrap()]).status.success());
    let model = run.join("model.json");
    let ev = tmp.path().join("eval");
    let o = enn(&["eval", "--model", model.to_str().unwrap(), "--evaluation", "firing", "--out", ev.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(ev.join("firing.csv").exists());

    let o = enn(&["report", "--out", ev.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let first = fs::read(ev.join("report.csv")).unwrap();
    assert!(first.len() > 50);
    assert!(enn(&["report", "--out", ev.to_str().unwrap()]).status.success());
    assert_eq!(fs::read(ev.join("report.csv")).unwrap(), first);
    assert_files_covered(&ev);
}

#[test]
fn unknown_dataset_lists_the_valid_names() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", &LOGIC.replace("name = \"logic\"\n\n[trainer]", "name = \"cifar\"\n\n[trainer]"));
    let o = enn(&["train", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("x").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr_json(&o);
    assert_eq!(e["error"], "unknown_name");
    let msg = e["message"].as_str().unwrap();
    assert!(msg.contains("cifar") && msg.contains("rectangles") && msg.contains("mnist"), "{msg}");

    let o = enn(&["gen-data", "--dataset", "cifar", "--out", tmp.path().join("y").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_trainer_and_evaluation_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", &LOGIC.replace("kind = \"enn\"", "kind = \"forest\""));
    let o = enn(&["train", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("x").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_json(&o)["message"].as_str().unwrap().contains("gdn"));

    let o = enn(&["eval", "--model", "m.json", "--evaluation", "vibes", "--out", "d"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_json(&o)["message"].as_str().unwrap().contains("boundary"));
}

#[test]
fn schema_violations_report_the_line() {
    let tmp = tempfile::tempdir().unwrap();
    // Line 13 carries a string where a number belongs.
    let text = LOGIC.replace("svm_cost = 1e6", "svm_cost = \"big\"");
    assert!(text.lines().nth(12).unwrap().contains("svm_cost"));
    let cfg = write_config(tmp.path(), "bad.toml", &text);
    let o = enn(&["train", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("x").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr_json(&o);
    assert_eq!(e["error"], "config");
    assert!(e["message"].as_str().unwrap().contains("bad.toml:13:"), "{e}");

    let cfg = write_config(tmp.path(), "typo.toml", &LOGIC.replace("prune = false", "prnue = false"));
    let o = enn(&["train", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("x").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr_json(&o)["message"].as_str().unwrap().to_string();
    assert!(msg.contains("typo.toml:") && msg.contains("prnue"), "{msg}");
}

#[test]
fn missing_files_fail_with_a_structured_error() {
    let o = enn(&["train", "--config", "/nonexistent/cfg.toml", "--out", "/tmp/never"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_json(&o)["error"], "io");
}

#[test]
fn same_seed_runs_are_bytewise_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "logic.toml", LOGIC);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for d in [&a, &b] {
        assert!(enn(&["train", "--config", cfg.to_str().unwrap(), "--seed", "11", "--out", d.to_str().unwrap()])
            .status
            .success());
    }
    for f in ["model.json", "train_report.json", "summary.json", "error.csv", "weights.csv", "train.manifest.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn gen_data_writes_datasets_with_manifests() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("data");
    let o = enn(&["gen-data", "--dataset", "logic", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("logic-train.bin").exists());
    let m: Manifest = serde_json::from_str(&fs::read_to_string(out.join("gen-data.manifest.json")).unwrap()).unwrap();
    assert_eq!(m.outputs.len(), 1);
    assert_eq!(m.outputs[0].path, "logic-train.manifest.json");
}
