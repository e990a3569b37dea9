use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fleeting::stats::{bootstrap_t_test, PairedDiffs};
use serde_json::{json, Value};

fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(rel)
}

fn fleeting(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fleeting"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn stderr_record(o: &Output) -> Value {
    let text = String::from_utf8_lossy(&o.stderr);
    let line = text.lines().rev().find(|l| l.starts_with('{')).expect("JSON record on stderr");
    serde_json::from_str(line).unwrap()
}

fn tiny_manifest(dir: &Path) -> PathBuf {
    let m = json!({
        "version": 1,
        "paths": {"corpus": fixture("corpus"), "out": "out"},
        "tokenizer": {"vocab_size": 300},
        "model": {"layers": 1, "heads": 1, "width": 8, "context": 8},
        "training": {"steps": 3, "batch_size": 2, "eval_interval": 3, "eval_windows": 2},
        "grid": {
            "conditions": [{"kind": "perfect"}, {"kind": "fleeting", "alpha": 3, "E": 2}],
            "seeds": [0, 1]
        },
        "evaluation": {
            "pairs": [fixture("pairs20.jsonl")],
            "reading_times": [{"name": "synthetic", "path": fixture("rt.csv"), "columns": "generic"}],
            "baseline": {"kind": "perfect"},
            "n_boot": 10000,
            "stats_seed": 3
        }
    });
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&m).unwrap()).unwrap();
    path
}

#[test]
fn invalid_manifest_lists_every_violation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(
        &path,
        r#"{"version": 9, "paths": {"corpus": "missing", "out": "o"}, "extra": {},
            "tokenizer": {"vocab_size": 10}, "model": {}, "training": {},
            "grid": {"conditions": [], "seeds": [0]}, "evaluation": {}}"#,
    )
    .unwrap();
    let o = fleeting(dir.path(), &["tokenize", "--manifest", "bad.json"]);
    assert_eq!(o.status.code(), Some(4));
    let rec = stderr_record(&o);
    assert_eq!(rec["status"], "error");
    assert_eq!(rec["command"], "tokenize");
    let v: Vec<String> = rec["violations"].as_array().unwrap().iter().map(|x| x.as_str().unwrap().to_owned()).collect();
    assert!(v.len() >= 2, "{v:?}");
    assert!(v.iter().any(|s| s.contains("version")), "{v:?}");
    assert!(v.iter().any(|s| s.contains("extra")), "{v:?}");
}

#[test]
fn missing_manifest_is_a_manifest_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = fleeting(dir.path(), &["grid"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn bad_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = fleeting(dir.path(), &["grid", "--jobs", "many"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn stats_input_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = tiny_manifest(dir.path());
    let perfect = [2.50, 2.61, 2.47, 2.55, 2.58];
    let fleeting_ = [2.44, 2.60, 2.41, 2.52, 2.49];
    let mut csv = String::from("seed,condition,metric,value\n");
    for (s, (a, b)) in perfect.iter().zip(&fleeting_).enumerate() {
        csv.push_str(&format!("{s},perfect,val_loss,{a}\n{s},fleeting:3:2,val_loss,{b}\n"));
    }
    std::fs::write(dir.path().join("m.csv"), csv).unwrap();
    let o = fleeting(
        dir.path(),
        &["stats", "--manifest", manifest.to_str().unwrap(), "--input", "m.csv", "--format", "json"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let reports: Value = serde_json::from_slice(&o.stdout).unwrap();
    let r = &reports[0];

    let diffs: Vec<f64> = fleeting_.iter().zip(&perfect).map(|(b, a)| b - a).collect();
    let lib = bootstrap_t_test(&PairedDiffs::new("val_loss", diffs).unwrap(), 10_000, 3).unwrap();
    assert_eq!(r["comparison"], "fleeting:3:2 - perfect");
    assert_eq!(r["n"], 5);
    assert_eq!(r["mean"].as_f64().unwrap(), lib.mean);
    assert_eq!(r["t"].as_f64().unwrap(), lib.t_observed);
    assert_eq!(r["p"].as_f64().unwrap(), lib.p_value);
    assert_eq!(r["ci"][0].as_f64().unwrap(), lib.ci_low);
    assert_eq!(r["ci"][1].as_f64().unwrap(), lib.ci_high);
    assert!(dir.path().join("out/stats/stats.csv").is_file());
}

#[test]
fn blocked_cell_gives_partial_exit() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = tiny_manifest(dir.path());
    let m = manifest.to_str().unwrap();
    for stage in ["tokenize", "ingest"] {
        let o = fleeting(dir.path(), &[stage, "--manifest", m]);
        assert!(o.status.success(), "{stage}: {}", String::from_utf8_lossy(&o.stderr));
    }
    // A plain file where the cell directory belongs makes that cell fail.
    std::fs::create_dir_all(dir.path().join("out/runs")).unwrap();
    std::fs::write(dir.path().join("out/runs/perfect-seed1"), b"").unwrap();
    let o = fleeting(dir.path(), &["grid", "--manifest", m]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let rec = stderr_record(&o);
    assert_eq!(rec["status"], "partial");
    assert_eq!(rec["attempted"], 4);
    assert_eq!(rec["failed"].as_array().unwrap().len(), 1);

    let grid: Value = serde_json::from_slice(&std::fs::read(dir.path().join("out/grid.json")).unwrap()).unwrap();
    let failed: Vec<&Value> = grid["cells"].as_array().unwrap().iter().filter(|c| c["ok"] == false).collect();
    assert_eq!(failed.len(), 1);
    assert_eq!(failed[0]["seed"], 1);

    // Unblocking and rerunning trains only the missing cell.
    std::fs::remove_file(dir.path().join("out/runs/perfect-seed1")).unwrap();
    let o = fleeting(dir.path(), &["grid", "--manifest", m]);
    assert!(o.status.success());
    assert_eq!(String::from_utf8_lossy(&o.stderr).matches("reused").count(), 3);
}

#[test]
fn report_without_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    std::fs::create_dir_all(out.join("metrics")).unwrap();
    std::fs::write(out.join("grid.json"), r#"{"cells": []}"#).unwrap();
    let o = fleeting(dir.path(), &["report", "--out", "run"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.join("summary.md")).unwrap();
    assert!(text.starts_with("# Experiment summary"));
}
