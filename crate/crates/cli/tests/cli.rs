use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use docent::dataio::{read_split, read_split_bundle, write_split_bundle, SplitTable};
use docent::docmodel::PredictionSet;
use serde_json::Value;

fn docent(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_docent")).args(args).output().expect("spawn docent")
}

fn ok(args: &[&str]) -> Output {
    let out = docent(args);
    assert!(out.status.success(), "docent {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Synthetic corpus through ingest, genq and split. Returns (metadata, questions, data dir).
fn prepare(root: &Path, docs: usize) -> (PathBuf, PathBuf, PathBuf) {
    let raw = root.join("raw");
    let meta = root.join("meta.json");
    let qs = root.join("questions.csv");
    let data = root.join("data");
    ok(&["synth", "--docs", &docs.to_string(), "--out", p(&raw), "--seed", "3"]);
    ok(&["ingest", "--regions-dir", p(&raw.join("regions")), "--xml-dir", p(&raw.join("xml")), "--out", p(&meta)]);
    ok(&["genq", "--metadata", p(&meta), "--out", p(&qs), "--seed", "3"]);
    ok(&["split", "--metadata", p(&meta), "--questions", p(&qs), "--out", p(&data), "--ratios", "0.5,0.25,0.25"]);
    (meta, qs, data)
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn full_pipeline_on_synthetic_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let (_, qs, data) = prepare(root, 6);
    let total = read_split(&qs).unwrap().len();
    let per_split: usize = ["train", "val", "test"].iter().map(|s| read_split_bundle(&data, s).unwrap().0.len()).sum();
    assert_eq!(per_split, total);

    let run = root.join("run");
    ok(&["train", "--data", p(&data), "--out", p(&run), "--epochs", "2", "--lr", "1e-3", "--seed", "1"]);
    assert!(run.join("model.ckpt").exists());
    assert_eq!(std::fs::read_to_string(run.join("history.jsonl")).unwrap().lines().count(), 2);
    let manifest = json(&run.join("train.manifest.json"));
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["seed"], 1);
    assert!(manifest["outputs"]["checkpoint"].is_string());

    let report = root.join("base.json");
    let table = root.join("base.txt");
    ok(&["eval", "--checkpoint", p(&run.join("model.ckpt")), "--data", p(&data), "--report-out", p(&report), "--table-out", p(&table)]);
    let r = json(&report);
    assert_eq!(r["split"], "test");
    assert_eq!(r["overall"]["n"].as_u64().unwrap() as usize, read_split_bundle(&data, "test").unwrap().0.len());
    assert!(std::fs::read_to_string(&table).unwrap().contains("overall"));
    let preds = std::fs::read_to_string(root.join("base.predictions.jsonl")).unwrap();
    assert_eq!(preds.lines().count(), r["overall"]["n"].as_u64().unwrap() as usize);

    let emb = root.join("emb.csv");
    let qa = root.join("qa.json");
    ok(&["export", "--checkpoint", p(&run.join("model.ckpt")), "--data", p(&data), "--out", p(&emb), "--qa-out", p(&qa)]);
    let csv = std::fs::read_to_string(&emb).unwrap();
    assert!(csv.starts_with("document_id,object_id,category,e0,"));
    assert!(csv.lines().count() > 1);
    let c = json(&qa)["mean_cosine"].as_f64().unwrap();
    assert!((-1.0..=1.0).contains(&c));
}

#[test]
fn scoring_predictions_reproduces_the_worked_example() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let (_, _, data) = prepare(root, 4);
    let (train, store) = read_split_bundle(&data, "train").unwrap();
    let mut q = train.rows[0].clone();
    let first = *q.answer_objt_ids.iter().next().unwrap();
    let doc = &store[&q.document_id];
    let page = doc.entities[&first].page_index;
    let other = doc.entities.values().find(|e| e.page_index == page && e.object_id != first).expect("a second entity on the page");
    let ids = [first, other.object_id];
    q.answer_objt_ids = ids.iter().copied().collect();
    let mut sub = store.clone();
    sub.retain(|k, _| *k == q.document_id);
    let one = root.join("one");
    for s in ["train", "val", "test"] {
        write_split_bundle(&one, s, &SplitTable::new(vec![q.clone()]), &sub).unwrap();
    }
    let preds = root.join("preds.jsonl");
    let line = serde_json::to_string(&PredictionSet { question_id: q.id, predicted_ids: BTreeSet::from([ids[0]]) }).unwrap();
    std::fs::write(&preds, format!("{line}\n")).unwrap();
    let report = root.join("r.json");
    ok(&["eval", "--predictions", p(&preds), "--data", p(&one), "--report-out", p(&report)]);
    let o = &json(&report)["overall"];
    assert_eq!((o["em"].as_f64().unwrap(), o["pm"].as_f64().unwrap(), o["mr"].as_f64().unwrap()), (0.0, 1.0, 0.5));

    std::fs::write(&preds, "").unwrap();
    let out = docent(&["eval", "--predictions", p(&preds), "--data", p(&one), "--report-out", p(&report)]);
    assert_eq!(out.status.code(), Some(2), "missing prediction is a data error");
}

#[test]
fn report_merges_runs_into_rows() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let (_, _, data) = prepare(root, 4);
    let (test, _) = read_split_bundle(&data, "test").unwrap();
    let mut reports = Vec::new();
    for (name, take) in [("oracle", usize::MAX), ("empty", 0)] {
        let preds: Vec<String> = test
            .rows
            .iter()
            .map(|r| {
                let ids = r.answer_objt_ids.iter().copied().take(take).collect();
                serde_json::to_string(&PredictionSet { question_id: r.id, predicted_ids: ids }).unwrap()
            })
            .collect();
        let pf = root.join(format!("{name}.jsonl"));
        std::fs::write(&pf, preds.join("\n")).unwrap();
        let rf = root.join(format!("{name}.json"));
        ok(&["eval", "--predictions", p(&pf), "--data", p(&data), "--report-out", p(&rf), "--model-name", name]);
        reports.push(rf);
    }
    let table = root.join("compare.txt");
    let out = ok(&["report", "--reports", p(&reports[0]), p(&reports[1]), "--table-out", p(&table)]);
    let text = std::fs::read_to_string(&table).unwrap();
    assert_eq!(String::from_utf8(out.stdout).unwrap(), text);
    let rows: Vec<&str> = text.lines().filter(|l| l.starts_with("oracle") || l.starts_with("empty")).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].contains("100.00"));
    assert!(rows[1].contains("0.00"));
}

#[test]
fn empty_split_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let (_, _, data) = prepare(root, 4);
    let (_, store) = read_split_bundle(&data, "test").unwrap();
    write_split_bundle(&data, "test", &SplitTable::new(vec![]), &store).unwrap();
    let preds = root.join("p.jsonl");
    std::fs::write(&preds, "").unwrap();
    let out = docent(&["eval", "--predictions", p(&preds), "--data", p(&data), "--report-out", p(&root.join("r.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no questions"));
}

#[test]
fn ingest_and_template_genq_are_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let raw = root.join("raw");
    ok(&["synth", "--docs", "3", "--out", p(&raw)]);
    let mut metas = Vec::new();
    let mut tables = Vec::new();
    for i in 0..2 {
        let meta = root.join(format!("m{i}.json"));
        let qs = root.join(format!("q{i}.csv"));
        ok(&["ingest", "--regions-dir", p(&raw.join("regions")), "--xml-dir", p(&raw.join("xml")), "--out", p(&meta)]);
        ok(&["genq", "--metadata", p(&meta), "--out", p(&qs), "--seed", "8"]);
        metas.push(std::fs::read(&meta).unwrap());
        tables.push(std::fs::read(&qs).unwrap());
    }
    assert_eq!(metas[0], metas[1]);
    assert_eq!(tables[0], tables[1]);
    let log = std::fs::read_to_string(root.join("ingest_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(log.lines().all(|l| l.contains("\"ok\"")));
}

#[test]
fn divergent_training_exits_with_runtime_code() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let (_, _, data) = prepare(root, 4);
    let out = docent(&["train", "--data", p(&data), "--out", p(&root.join("run")), "--epochs", "5", "--lr", "1000"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!root.join("run/model.ckpt").exists());
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(docent(&["train"]).status.code(), Some(1));
    assert_eq!(docent(&["frobnicate"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let out = docent(&["split", "--metadata", p(&missing), "--questions", p(&missing), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    let cfg = dir.path().join("bad.conf");
    std::fs::write(&cfg, "no_such_key = 1\n").unwrap();
    let out = docent(&["synth", "--out", p(&dir.path().join("s")), "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    let out = docent(&["train", "--data", p(dir.path()), "--out", p(dir.path()), "--scale", "huge"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(docent(&["--help"]).status.success());
}
