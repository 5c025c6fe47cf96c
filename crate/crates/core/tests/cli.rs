mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qrf_core::preference::OptimalQuerySet;
use serde_json::{json, Value};

fn write_config(dir: &Path, extra: Value) -> PathBuf {
    let data = common::data_dir();
    let mut cfg = json!({
        "paths": {
            "conversations": data.join("conversations.jsonl"),
            "passages": data.join("passages.jsonl"),
            "work_dir": dir.join("work"),
        },
        "client": { "mock": true },
    });
    if let (Some(base), Some(extra)) = (cfg.as_object_mut(), extra.as_object()) {
        for (k, v) in extra {
            base.insert(k.clone(), v.clone());
        }
    }
    let path = dir.join("config.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    path
}

fn qrf(config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qrf"))
        .arg("--config")
        .arg(config)
        .args(args)
        .output()
        .expect("run qrf")
}

fn stage_lines(out: &Output) -> Vec<Value> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn error_of(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("stderr line");
    serde_json::from_str::<Value>(line).unwrap()["error"].clone()
}

#[test]
fn eval_before_feedback_names_the_missing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), json!({}));
    assert!(qrf(&cfg, &["ingest"]).status.success());
    let out = qrf(&cfg, &["eval"]);
    assert_eq!(out.status.code(), Some(1));
    let err = error_of(&out);
    assert_eq!(err["kind"], "missing_artifact", "{err}");
    assert!(err["message"].as_str().unwrap().contains("run `feedback` first"), "{err}");
}

#[test]
fn stages_are_skipped_when_up_to_date() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), json!({}));
    let first = stage_lines(&qrf(&cfg, &["index"]));
    assert_eq!(first[0]["outcome"], "ran");
    let second = stage_lines(&qrf(&cfg, &["index"]));
    assert_eq!(second[0]["outcome"], "up-to-date");
    let forced = stage_lines(&qrf(&cfg, &["--force", "index"]));
    assert_eq!(forced[0]["outcome"], "ran");
    let changed = stage_lines(&qrf(&cfg, &["--retriever-profile", "qrecc-bm25", "index"]));
    assert_eq!(changed[0]["outcome"], "ran");
}

#[test]
fn tight_optimal_threshold_keeps_rank_one_or_fallback() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), json!({}));
    for stage in ["ingest", "index", "explore", "feedback", "build-rf"] {
        let out = qrf(&cfg, &["--threshold-optimal", "1", stage]);
        assert!(out.status.success(), "{stage}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let sets: Vec<OptimalQuerySet> = qrf_core::jsonl::read_jsonl(&dir.path().join("work/optimal.jsonl")).unwrap();
    assert!(!sets.is_empty());
    for set in &sets {
        if set.fallback {
            assert_eq!(set.queries.len(), 1);
            assert!(set.queries[0].rank > 1);
        } else {
            assert!(set.queries.iter().all(|q| q.rank == 1), "{set:?}");
        }
    }
}

#[test]
fn config_errors_report_the_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), json!({ "counts": { "top_k": "many" } }));
    let out = qrf(&cfg, &["config"]);
    assert_eq!(out.status.code(), Some(1));
    let err = error_of(&out);
    assert_eq!(err["kind"], "config");
    assert!(err["message"].as_str().unwrap().contains("counts.top_k"), "{err}");

    let cfg = write_config(dir.path(), json!({ "thresholds": { "optimal": 0 } }));
    let err = error_of(&qrf(&cfg, &["config"]));
    assert!(err["message"].as_str().unwrap().contains("thresholds.optimal"), "{err}");

    let cfg = write_config(dir.path(), json!({ "toy": { "bukets": 3 } }));
    let err = error_of(&qrf(&cfg, &["config"]));
    assert!(err["message"].as_str().unwrap().contains("toy"), "{err}");
}

#[test]
fn overrides_show_in_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), json!({}));
    let out = qrf(&cfg, &["--seed", "11", "--top-k", "20", "--max-pairs", "3", "config"]);
    assert!(out.status.success());
    let resolved: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(resolved["seed"], 11);
    assert_eq!(resolved["counts"]["top_k"], 20);
    assert_eq!(resolved["counts"]["max_pairs"], 3);
}

#[test]
fn usage_errors_exit_with_two() {
    let out = Command::new(env!("CARGO_BIN_EXE_qrf")).arg("no-such-stage").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_of(&out)["kind"], "usage");
}
