use std::path::Path;
use std::time::{Duration, Instant};

use convres::config::PipelineConfig;
use convres::pipeline::{self, QueryRecord};
use convres::resolver::{OriginalVariant, ResolverVariant};
use convres::run::read_run;

fn toy(dir: &Path) -> PipelineConfig {
    let conf = pipeline::export_toy(dir).unwrap();
    let mut c = PipelineConfig::default();
    c.apply_file(&conf).unwrap();
    c.output = Some(dir.join("out"));
    c
}

#[test]
fn classifier_pipeline_on_toy_corpus() {
    let tmp = tempfile::tempdir().unwrap();
    let c = toy(tmp.path());
    let t0 = Instant::now();
    let summary = pipeline::run_pipeline(&c).unwrap();
    assert!(t0.elapsed() < Duration::from_secs(60), "{:?}", t0.elapsed());
    assert_eq!(summary.queries, 20);
    assert!(summary.trained.is_some());
    for stage in ["initial", "rerank", "fused"] {
        assert_eq!(summary.recall[stage], 1.0);
        let run = read_run(&tmp.path().join(format!("out/run.{stage}.txt"))).unwrap();
        assert_eq!(run.len(), 20);
    }
    let preds = convres::resolver::read_predictions_path(&tmp.path().join("out/predictions.jsonl")).unwrap();
    assert_eq!(preds.len(), 20);
}

#[test]
fn first_turn_is_not_expanded() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = toy(tmp.path());
    c.model = Some(tmp.path().join("model.json"));
    pipeline::cmd_train(&c).unwrap();
    c.index = Some(tmp.path().join("index"));
    pipeline::cmd_index(&c).unwrap();

    let mut runs = Vec::new();
    for variant in [ResolverVariant::QuReTeC, ResolverVariant::Original(OriginalVariant::Cur)] {
        c.variant = variant;
        let out = tmp.path().join(format!("{variant}.run").replace(':', "_"));
        runs.push(pipeline::cmd_search(&c, None, &out).unwrap());
    }
    let mut first_turns = 0;
    for (qid, list) in &runs[0] {
        if qid.ends_with("_1") {
            assert_eq!(list, &runs[1][qid], "{qid}");
            first_turns += 1;
        }
    }
    assert_eq!(first_turns, 5);
}

#[test]
fn staged_commands_match_the_full_run() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = toy(tmp.path());
    c.variant = ResolverVariant::Original(OriginalVariant::CurFirst);
    pipeline::run_pipeline(&c).unwrap();

    let d = tmp.path();
    c.index = Some(d.join("index"));
    pipeline::cmd_index(&c).unwrap();
    let records: Vec<QueryRecord> = pipeline::cmd_resolve(&c, &d.join("q.jsonl"), None).unwrap();
    assert_eq!(records.len(), 20);
    pipeline::cmd_search(&c, Some(&d.join("q.jsonl")), &d.join("initial.txt")).unwrap();
    pipeline::cmd_rerank(&c, &d.join("initial.txt"), Some(&d.join("q.jsonl")), &d.join("rerank.txt")).unwrap();
    pipeline::cmd_fuse(&c, &[d.join("initial.txt"), d.join("rerank.txt")], &d.join("fused.txt")).unwrap();
    for (staged, full) in [("initial", "initial"), ("rerank", "rerank"), ("fused", "fused")] {
        let a = read_run(&d.join(format!("{staged}.txt"))).unwrap();
        let b = read_run(&d.join(format!("out/run.{full}.txt"))).unwrap();
        assert_eq!(a, b, "{staged}");
    }
    assert_eq!(pipeline::read_queries(&d.join("q.jsonl")).unwrap(), records);
}

#[test]
fn eval_reports_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = toy(tmp.path());
    c.variant = ResolverVariant::Oracle;
    pipeline::run_pipeline(&c).unwrap();
    let runs = [tmp.path().join("out/run.initial.txt"), tmp.path().join("out/run.fused.txt")];
    let q = tmp.path().join("out/queries.jsonl");
    let read = |p: &str| std::fs::read(tmp.path().join(p)).unwrap();
    let first = pipeline::cmd_eval(&c, &runs, Some(&q), &tmp.path().join("eval")).unwrap();
    let (j1, t1) = (read("eval.json"), read("eval.txt"));
    let second = pipeline::cmd_eval(&c, &runs, Some(&q), &tmp.path().join("eval")).unwrap();
    assert_eq!(first, second);
    assert_eq!(j1, read("eval.json"));
    assert_eq!(t1, read("eval.txt"));
    assert_eq!(first.intrinsic.unwrap().mean.f1, 1.0);
    let header = &first.header;
    assert!(header["inputs"]["qrels"]["sha256"].as_str().unwrap().len() == 64);
    assert_eq!(header["config"]["variant"], "oracle");
}

#[test]
fn distant_labels_need_the_corpus() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = toy(tmp.path());
    c.label_mode = convres::supervision::LabelMode::Distant;
    let stats = pipeline::cmd_label(&c, &tmp.path().join("labels.jsonl")).unwrap();
    assert_eq!(stats.queries, 15);
    let ex = convres::supervision::read_examples(&tmp.path().join("labels.jsonl")).unwrap();
    assert_eq!(ex.len(), 15);

    c.corpus = Some(tmp.path().join("nope.tsv"));
    assert!(pipeline::cmd_label(&c, &tmp.path().join("other.jsonl")).is_err());
    assert!(!tmp.path().join("other.jsonl").exists());
}
