use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::Value;
use wifiloc_core::evaluation::{generate_synthetic, SyntheticConfig};
use wifiloc_core::fingerprint::io::{write_csv_matrix, ScanRecord};

fn wifiloc(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wifiloc"))
        .current_dir(cwd)
        .args(args)
        .output()
        .unwrap()
}

fn ok(cwd: &Path, args: &[&str]) -> String {
    let out = wifiloc(cwd, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Directory named in the trailing `[report: ...]` of a summary line.
fn report_dir(cwd: &Path, stdout: &str) -> PathBuf {
    let start = stdout.rfind("[report: ").unwrap() + 9;
    let end = stdout[start..].find(']').unwrap() + start;
    cwd.join(&stdout[start..end])
}

fn json(path: PathBuf) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

#[test]
fn noiseless_synth_then_evaluate_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    let out = ok(cwd, &["synth", "--cells", "4", "--aps", "3", "--sigma", "0", "--seed", "1", "--out", "store"]);
    assert!(out.contains("seed 1"));
    let out = ok(cwd, &["evaluate", "--store", "store", "--band", "dual", "--repeats", "3", "--seed", "7"]);
    assert!(out.contains("seed 7"));
    let report = json(report_dir(cwd, &out).join("report.json"));
    assert_eq!(report["dual"]["test"]["mean"], 1.0);
    assert_eq!(report["base_seed"], 7);
}

#[test]
fn reports_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    ok(cwd, &["synth", "--cells", "4", "--aps", "4", "--samples", "40", "--out", "store"]);
    let args = ["evaluate", "--store", "store", "--repeats", "2", "--fast", "--jobs", "1"];
    let a = report_dir(cwd, &ok(cwd, &args));
    let b = report_dir(cwd, &ok(cwd, &args));
    assert_ne!(a, b);
    let names: Vec<String> = json(a.join("manifest.json"))["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    assert!(names.contains(&"report.json".to_string()));
    assert!(names.contains(&"confusion_2.4.csv".to_string()));
    for name in names.iter().chain([&"manifest.json".to_string()]) {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let manifest = json(a.join("manifest.json"));
    assert_eq!(manifest["seed"], 42, "default seed is recorded");
}

#[test]
fn csv_and_jsonl_ingest_to_the_same_store() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    let ds = generate_synthetic(&SyntheticConfig::grid(2, 2, 4.0, 10.0, 3).with_samples(10)).unwrap();
    wifiloc_core::fingerprint::io::save_store(&ds, &cwd.join("src")).unwrap();
    write_csv_matrix(&ds, File::create(cwd.join("scans.csv")).unwrap()).unwrap();
    let registry = cwd.join("src/radios.csv");
    let registry = registry.to_str().unwrap();

    let a = ok(cwd, &["ingest", "--in", "src/fingerprints.jsonl", "--format", "jsonl", "--registry", registry, "--out", "a"]);
    let b = ok(cwd, &["ingest", "--in", "scans.csv", "--format", "csv", "--registry", registry, "--out", "b"]);
    assert!(a.contains("ingested 40 fingerprints at 4 locations"), "{a}");
    let da = json(report_dir(cwd, &a).join("manifest.json"))["dataset_digest"].clone();
    let db = json(report_dir(cwd, &b).join("manifest.json"))["dataset_digest"].clone();
    assert_eq!(da, db);
}

#[test]
fn empty_input_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    File::create(cwd.join("empty.jsonl")).unwrap();
    fs::write(cwd.join("radios.csv"), "mac,band\naa:00:00:00:00:01,2.4\n").unwrap();
    let out = wifiloc(cwd, &["ingest", "--in", "empty.jsonl", "--registry", "radios.csv", "--out", "s"]);
    assert_eq!(out.status.code(), Some(3));
    let out = wifiloc(cwd, &["ingest", "--in", "missing.jsonl", "--registry", "radios.csv", "--out", "s"]);
    assert_eq!(out.status.code(), Some(5));
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    assert_eq!(wifiloc(cwd, &["evaluate", "--store", "s", "--bogus"]).status.code(), Some(2));
    assert_eq!(wifiloc(cwd, &["frobnicate"]).status.code(), Some(2));
    assert_eq!(wifiloc(cwd, &["synth", "--cells", "1", "--out", "s"]).status.code(), Some(2));
    ok(cwd, &["synth", "--cells", "2", "--aps", "2", "--samples", "10", "--out", "s"]);
    fs::write(cwd.join("bad.toml"), "no_such_key = 1\n[[[").unwrap();
    assert_eq!(wifiloc(cwd, &["train", "--store", "s", "--config", "bad.toml"]).status.code(), Some(2));
    assert_eq!(
        wifiloc(cwd, &["subsample", "--store", "s", "--band", "both"]).status.code(),
        Some(2)
    );
}

#[test]
fn help_documents_every_subcommand() {
    let tmp = tempfile::tempdir().unwrap();
    let top = ok(tmp.path(), &["--help"]);
    for cmd in ["ingest", "train", "evaluate", "ablate", "subsample", "synth", "predict", "serve"] {
        assert!(top.contains(cmd), "{cmd}");
        let help = ok(tmp.path(), &[cmd, "--help"]);
        assert!(help.contains("--jobs") && help.contains("--reports"), "{cmd}");
    }
    let evaluate = ok(tmp.path(), &["evaluate", "--help"]);
    for flag in ["--store", "--seed", "--band", "--repeats", "--config", "--fast"] {
        assert!(evaluate.contains(flag), "{flag}");
    }
}

#[test]
fn train_then_predict_from_stdin() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    ok(cwd, &["synth", "--cells", "4", "--aps", "3", "--sigma", "0", "--samples", "30", "--out", "s"]);
    let out = ok(cwd, &["train", "--store", "s", "--fast", "--out", "model.json"]);
    assert!(out.contains("trained with seed 42"), "{out}");
    assert!(report_dir(cwd, &out).join("model.json").is_file());

    let ds = wifiloc_core::fingerprint::io::load_store(&cwd.join("s")).unwrap();
    let fp = &ds.fingerprints()[ds.len() - 1];
    let scan = serde_json::to_string(&ScanRecord::from_fingerprint(fp)).unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_wifiloc"))
        .current_dir(cwd)
        .args(["predict", "--model", "model.json"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(scan.as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let result: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(result["location"], fp.location.unwrap().0);
    assert_eq!(result["profile"], "dual");

    fs::write(cwd.join("scan.json"), r#"{"signals": {"02:00:00:00:00:24": -60}}"#).unwrap();
    let single = ok(cwd, &["predict", "--model", "model.json", "scan.json"]);
    assert!(single.contains("\"2.4-only\""), "{single}");
}

#[test]
fn ablate_and_subsample_curves() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    ok(cwd, &["synth", "--cells", "4", "--aps", "6", "--samples", "40", "--out", "s"]);
    let out = ok(cwd, &["ablate", "--store", "s", "--fast", "--repeats", "2", "--ap-counts", "6,5,4"]);
    let dir = report_dir(cwd, &out);
    let curve = fs::read_to_string(dir.join("ap_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 4, "{curve}");
    assert!(dir.join("coverage.csv").is_file());
    assert!(dir.join("confusion_aps4.csv").is_file());

    let out = ok(cwd, &["subsample", "--store", "s", "--fast", "--repeats", "2", "--fractions", "1.0,0.5"]);
    let dir = report_dir(cwd, &out);
    let curve = fs::read_to_string(dir.join("subsample_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 3, "{curve}");
    assert!(dir.join("confusion_f0.5.csv").is_file());
    assert_eq!(
        wifiloc(cwd, &["ablate", "--store", "s", "--ap-counts", "9"]).status.code(),
        Some(2)
    );
}
