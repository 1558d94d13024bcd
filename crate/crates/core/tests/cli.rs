use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cablesift::corpus::{write_jsonl, Cable, CableKind, ClassificationLevel};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cablesift")).args(args).current_dir(dir).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn usage_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(run(tmp.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(tmp.path(), &["train", "--corpus", "missing.jsonl"]).status.code(), Some(1));
    assert_eq!(run(tmp.path(), &["--threads", "0", "ingest", "--input", "x"]).status.code(), Some(1));
    assert_eq!(run(tmp.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn malformed_corpus_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bad.jsonl"), "{not json\n").unwrap();
    let o = run(tmp.path(), &["evaluate", "--corpus", "bad.jsonl"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error["));
}

#[test]
fn evaluate_writes_report_and_curves() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert!(run(dir, &["--seed", "3", "synthgen", "--n-docs", "500", "--out", "c.jsonl"]).status.success());
    let o = run(dir, &["--no-timestamp", "evaluate", "--corpus", "c.jsonl", "--k", "3", "--out-dir", "out"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("out/report.json")).unwrap()).unwrap();
    let auc = report["pooled"]["roc_auc"].as_f64().unwrap();
    assert!(auc > 0.5 && auc <= 1.0);
    assert!(report.get("generated_at").is_none());
    assert!(fs::read_to_string(dir.join("out/roc.csv")).unwrap().starts_with("fpr,tpr,threshold"));
    let md = run(dir, &["report", "--report", "out/report.json"]);
    assert!(md.status.success());
    assert!(stdout(&md).contains("ROC AUC") || stdout(&md).contains("AUC"));
}

#[test]
fn analyze_concepts_table() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let mut cables = Vec::new();
    for (concept, secret, total) in [("CAT-C", 6211, 7156), ("TREATIES", 500, 2000), ("SMALL", 10, 10)] {
        for i in 0..total {
            let level = if i < secret { ClassificationLevel::Secret } else { ClassificationLevel::Unclassified };
            let mut c = Cable::metadata(format!("{concept}{i}"), Some(level), CableKind::Full);
            c.concepts = vec![concept.to_string()];
            cables.push(c);
        }
    }
    write_jsonl(fs::File::create(dir.join("c.jsonl")).unwrap(), &cables).unwrap();
    let o = run(
        dir,
        &["analyze", "--corpus", "c.jsonl", "--table", "concepts", "--min-total", "1000", "--percent-format", "whole"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    let rows: Vec<&str> = out.lines().filter(|l| !l.starts_with('#') && l.contains('\t')).skip(1).collect();
    assert!(rows[0].starts_with("CAT-C\t") && rows[0].ends_with("87.00%"), "{out}");
    assert!(!out.contains("SMALL"));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("cfg.json"), r#"{"seed": 11}"#).unwrap();
    assert!(run(dir, &["--config", "cfg.json", "synthgen", "--n-docs", "5", "--out", "a.jsonl"]).status.success());
    assert!(run(dir, &["--seed", "11", "synthgen", "--n-docs", "5", "--out", "b.jsonl"]).status.success());
    assert!(run(dir, &["--config", "cfg.json", "--seed", "12", "synthgen", "--n-docs", "5", "--out", "c.jsonl"]).status.success());
    let read = |f: &str| fs::read(dir.join(f)).unwrap();
    assert_eq!(read("a.jsonl"), read("b.jsonl"));
    assert_ne!(read("a.jsonl"), read("c.jsonl"));
    fs::write(dir.join("bad.json"), r#"{"sed": 11}"#).unwrap();
    assert_eq!(run(dir, &["--config", "bad.json", "synthgen", "--n-docs", "5", "--out", "d.jsonl"]).status.code(), Some(1));
}
