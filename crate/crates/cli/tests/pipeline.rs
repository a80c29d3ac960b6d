// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use facade_cli::artifacts::{DatasetData, RunReport};
use facade_cli::store::{sha256_file, Envelope};
use facade_core::netcore::{save_model, Activation, Network};
use serde_json::Value;

fn golden() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../manifests/two_moons.json")
}

fn facade(args: &[&str], manifest: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_facade"))
        .args(args)
        .arg("--manifest")
        .arg(manifest)
        .arg("--out")
        .arg(out)
        .arg("--quiet")
        .env_remove("FACADE_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn error_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.trim()).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {text}"))
}

fn run_golden(dir: &Path) {
    let out = facade(&["run"], &golden(), dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

/// Golden manifest with some top-level fields replaced.
fn variant(dir: &Path, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let mut m: Value = serde_json::from_str(&std::fs::read_to_string(golden()).unwrap()).unwrap();
    edit(&mut m);
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&m).unwrap()).unwrap();
    path
}

#[test]
fn golden_run_emits_a_valid_report() {
    let dir = tempfile::tempdir().unwrap();
    run_golden(dir.path());
    let report: Envelope<RunReport> =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report.artifact, "report");
    let r = report.data;
    assert!(r.validate().is_empty(), "{:?}", r.validate());
    assert_eq!(r.lambdas.len(), 6);
    assert_eq!(r.lambdas[0].source, "stages");
    let primary = r.lambdas[0].result.as_ref().unwrap();
    assert!(primary.detection.auc >= 0.7);
    assert!((primary.distribution.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    // The sweep entry at the primary lambda reproduces the single-run stages.
    let same = r.lambdas[1..].iter().find(|e| e.lambda == primary.lambda).unwrap();
    assert_eq!(same.result.as_ref().unwrap(), primary);
    assert_eq!(r.artifacts.len(), 9);
    for stage in ["gen-data", "train", "trace", "cluster", "discover", "stats", "score", "calibrate", "detect", "sweep", "report"] {
        let log = std::fs::read_to_string(dir.path().join(format!("{stage}.log"))).unwrap();
        assert!(log.contains("elapsed_ms="));
    }
}

#[test]
fn rerunning_each_stage_is_byte_identical_and_leaves_upstream_alone() {
    let dir = tempfile::tempdir().unwrap();
    run_golden(dir.path());
    let names = [
        ("gen-data", "dataset"),
        ("train", "model"),
        ("trace", "traces"),
        ("cluster", "clusterings"),
        ("discover", "circuit"),
        ("stats", "stats"),
        ("score", "distribution"),
        ("calibrate", "detector"),
        ("detect", "detections"),
        ("sweep", "sweep"),
        ("report", "report"),
    ];
    let read = |a: &str| std::fs::read(dir.path().join(format!("{a}.json"))).unwrap();
    let before: Vec<Vec<u8>> = names.iter().map(|(_, a)| read(a)).collect();
    for (i, (stage, artifact)) in names.iter().enumerate() {
        let out = facade(&[stage], &golden(), dir.path());
        assert!(out.status.success(), "{stage}: {}", String::from_utf8_lossy(&out.stderr));
        assert_eq!(read(artifact), before[i], "{stage} changed its artifact");
    }

    // Deleting downstream artifacts does not disturb upstream stages.
    for a in ["detections", "report", "sweep", "detector"] {
        std::fs::remove_file(dir.path().join(format!("{a}.json"))).unwrap();
    }
    for (i, (stage, artifact)) in names.iter().enumerate().take(7) {
        assert!(facade(&[stage], &golden(), dir.path()).status.success());
        assert_eq!(read(artifact), before[i]);
    }
}

#[test]
fn detect_without_calibrate_names_the_missing_stage() {
    let dir = tempfile::tempdir().unwrap();
    for stage in ["gen-data", "train", "trace", "cluster", "discover", "score"] {
        assert!(facade(&[stage], &golden(), dir.path()).status.success());
    }
    let out = facade(&["detect"], &golden(), dir.path());
    assert_eq!(out.status.code(), Some(3));
    let err = error_json(&out);
    assert_eq!(err["error"], "missing_dependency");
    assert_eq!(err["stage"], "detect");
    assert_eq!(err["required_stage"], "calibrate");
    assert!(!dir.path().join("detections.json").exists());
}

#[test]
fn first_stage_missing_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let out = facade(&["train"], &golden(), dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_json(&out)["required_stage"], "gen-data");
}

#[test]
fn tampered_upstream_artifact_is_stale() {
    let dir = tempfile::tempdir().unwrap();
    run_golden(dir.path());
    let model = dir.path().join("model.json");
    let mut text = std::fs::read_to_string(&model).unwrap();
    text.push(' ');
    std::fs::write(&model, text).unwrap();
    let out = facade(&["detect"], &golden(), dir.path());
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    let err = error_json(&out);
    assert_eq!(err["error"], "stale_artifact");
    assert!(err["message"].as_str().unwrap().contains("model.json"));
}

#[test]
fn changed_manifest_makes_downstream_stale() {
    let dir = tempfile::tempdir().unwrap();
    run_golden(dir.path());
    let edited = variant(dir.path(), |m| m["q"] = Value::from(0.9));
    // Upstream of calibrate is unaffected.
    assert!(facade(&["score"], &edited, dir.path()).status.success());
    let out = facade(&["detect"], &edited, dir.path());
    assert_eq!(out.status.code(), Some(4));
    assert!(error_json(&out)["message"].as_str().unwrap().contains("facade calibrate"));
    assert!(facade(&["calibrate"], &edited, dir.path()).status.success());
    assert!(facade(&["detect"], &edited, dir.path()).status.success());
}

#[test]
fn stage_input_overrides_the_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    run_golden(dir.path());
    let elsewhere = tempfile::tempdir().unwrap();
    let moved = elsewhere.path().join("my-model.json");
    std::fs::rename(dir.path().join("model.json"), &moved).unwrap();
    let original = std::fs::read(dir.path().join("traces.json")).unwrap();

    assert_eq!(facade(&["trace"], &golden(), dir.path()).status.code(), Some(3));
    let out = Command::new(env!("CARGO_BIN_EXE_facade"))
        .args(["trace", "--quiet", "--manifest"])
        .arg(golden())
        .arg("--out")
        .arg(dir.path())
        .arg("--stage-input")
        .arg(&moved)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read(dir.path().join("traces.json")).unwrap(), original);
}

#[test]
fn pinned_file_inputs_are_verified() {
    let dir = tempfile::tempdir().unwrap();
    run_golden(dir.path());
    let ds: Envelope<DatasetData> =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("dataset.json")).unwrap()).unwrap();
    let inputs = tempfile::tempdir().unwrap();
    let data_path = inputs.path().join("moons.json");
    ds.data.dataset.save(&data_path).unwrap();
    let net = Network::random(2, &[(8, Activation::Relu), (2, Activation::Identity)], 1).unwrap();
    let model_path = inputs.path().join("net.json");
    save_model(&net, &model_path).unwrap();
    let (dh, mh) = (sha256_file(&data_path).unwrap(), sha256_file(&model_path).unwrap());

    let manifest = variant(inputs.path(), |m| {
        m["dataset"] = serde_json::json!({"file": {"path": "moons.json", "sha256": dh}});
        m["model"] = serde_json::json!({"file": {"path": "net.json", "sha256": mh}});
    });
    let out_dir = inputs.path().join("out");
    let out = facade(&["run"], &manifest, &out_dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let wrong = variant(inputs.path(), |m| {
        m["dataset"] = serde_json::json!({"file": {"path": "moons.json", "sha256": "0".repeat(64)}});
    });
    let out = facade(&["gen-data"], &wrong, &out_dir);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(error_json(&out)["error"], "stale_artifact");
}

#[test]
fn output_directory_defaults_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("from-env");
    let out = Command::new(env!("CARGO_BIN_EXE_facade"))
        .args(["gen-data", "--quiet", "--manifest"])
        .arg(golden())
        .env("FACADE_OUT_DIR", &target)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(target.join("dataset.json").is_file());
    assert!(target.join("gen-data.log").is_file());
}

#[test]
fn invalid_manifest_and_usage_errors_are_json() {
    let dir = tempfile::tempdir().unwrap();
    let bad = variant(dir.path(), |m| m["q"] = Value::from(1.5));
    let out = facade(&["gen-data"], &bad, dir.path());
    assert_eq!(out.status.code(), Some(5));
    assert_eq!(error_json(&out)["error"], "invalid_manifest");

    let unknown = variant(dir.path(), |m| m["lambda_typo"] = Value::from(1.0));
    assert_eq!(facade(&["gen-data"], &unknown, dir.path()).status.code(), Some(5));

    let out = Command::new(env!("CARGO_BIN_EXE_facade")).arg("gen-data").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "usage");
}

#[test]
fn seed_flag_overrides_manifest_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(facade(&["gen-data"], &golden(), &a).status.success());
    let out = Command::new(env!("CARGO_BIN_EXE_facade"))
        .args(["gen-data", "--quiet", "--seed", "99", "--manifest"])
        .arg(golden())
        .arg("--out")
        .arg(&b)
        .output()
        .unwrap();
    assert!(out.status.success());
    let read = |p: &Path| -> Envelope<DatasetData> { serde_json::from_str(&std::fs::read_to_string(p.join("dataset.json")).unwrap()).unwrap() };
    let (x, y) = (read(&a), read(&b));
    assert_eq!(y.data.dataset.seed(), 99);
    assert_ne!(x.data.dataset.inputs(), y.data.dataset.inputs());
    // Artifacts from the other seed are stale for this manifest.
    let out = facade(&["train"], &golden(), &b);
    assert_eq!(out.status.code(), Some(4));
}
