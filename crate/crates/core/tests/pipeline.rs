mod common;

use std::fs;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde_json::Value;

use commentgen::gateway::{Transport, TransportError};
use commentgen::pipeline::{self, load_records, PipelineError, Services};
use commentgen::stub::{CannedLlm, Instrumented, StubModelServer, StubService, StubTransport};
use commentgen::IntentCategory;

use common::*;

#[test]
fn zero_shot_echo_scores_perfect_overlap() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = corpora(dir.path(), 4, 2);
    let mut cfg = config(&train, &test, &dir.path().join("run"));
    cfg.f = 0;
    cfg.repetitions = 2;
    let model = Arc::new(Instrumented::new(StubModelServer::default()));
    let services = stub_services(model.clone(), Arc::new(echo_llm(&test)), &cfg);
    let summary = pipeline::run(&cfg, &services).unwrap();
    assert_eq!(summary.tasks, 10);
    assert_eq!(summary.failed, 0);
    assert_eq!(summary.report.n, 10);
    assert_eq!(summary.report.bleu4, 1.0);
    assert_eq!(summary.report.rouge_l, 1.0);
    // No retrieval and no attention at zero shots; only the sbert metric embeds.
    assert_eq!(model.calls("/v1/attention"), 0);
    for r in load_records(&cfg.output_dir).unwrap() {
        assert!(r.demonstrations.is_empty());
        assert_eq!(r.shortfall, 0);
        assert_eq!(r.repetitions.len(), 2);
        let prompt = fs::read_to_string(cfg.output_dir.join("prompts").join(format!("{}.txt", r.task_id))).unwrap();
        assert!(!prompt.contains("# Example"));
    }
}

#[test]
fn few_shot_records_same_intent_train_demonstrations() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = corpora(dir.path(), 6, 1);
    let mut cfg = config(&train, &test, &dir.path().join("run"));
    cfg.k = 5;
    cfg.f = 3;
    cfg.repetitions = 1;
    let services = stub_services(Arc::new(StubModelServer::default()), Arc::new(echo_llm(&test)), &cfg);
    pipeline::run(&cfg, &services).unwrap();

    let retrieval = commentgen::corpus::load_corpus(&train, commentgen::CorpusRole::Retrieval)
        .unwrap()
        .corpus;
    let records = load_records(&cfg.output_dir).unwrap();
    assert_eq!(records.len(), 5);
    for r in &records {
        assert_eq!(r.demonstrations.len(), 3, "{}", r.task_id);
        for d in &r.demonstrations {
            let pair = retrieval.get(&d.pair_id).unwrap();
            assert_eq!(pair.intent, r.intent);
            assert!(d.pair_id.starts_with("tr"));
            assert!(!d.important_statements.is_empty());
        }
        let scores: Vec<f64> = r.demonstrations.iter().map(|d| d.example_score).collect();
        assert!(scores.windows(2).all(|w| w[0] <= w[1] + 1e-9), "{scores:?}");
        assert!(r.prompt_sha256.is_some());
    }
    let metrics: Value =
        serde_json::from_str(&fs::read_to_string(cfg.output_dir.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["n"], 5);
    assert_eq!(metrics["per_intent"].as_object().unwrap().len(), 5);
}

#[test]
fn resumed_runs_skip_completed_tasks() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = corpora(dir.path(), 4, 1);
    let mut cfg = config(&train, &test, &dir.path().join("run"));
    cfg.f = 2;
    cfg.repetitions = 2;
    let llm = Arc::new(Instrumented::new(echo_llm(&test)));
    let services = stub_services(Arc::new(StubModelServer::default()), llm.clone(), &cfg);
    let first = pipeline::run(&cfg, &services).unwrap();
    assert_eq!(llm.calls("/v1/complete"), 10);
    let report_before = fs::read(cfg.output_dir.join("metrics.json")).unwrap();

    let llm2 = Arc::new(Instrumented::new(echo_llm(&test)));
    let services = stub_services(Arc::new(StubModelServer::default()), llm2.clone(), &cfg);
    let second = pipeline::run(&cfg, &services).unwrap();
    assert_eq!(llm2.total_calls(), 0);
    assert_eq!(second.resumed, 5);
    assert_eq!(second.executed, 0);
    assert_eq!(first.report, second.report);
    assert_eq!(report_before, fs::read(cfg.output_dir.join("metrics.json")).unwrap());
}

#[test]
fn unparsable_responses_fail_tasks_without_aborting() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = corpora(dir.path(), 3, 1);
    let mut cfg = config(&train, &test, &dir.path().join("run"));
    cfg.f = 1;
    cfg.repetitions = 2;
    let llm: Arc<dyn StubService> = Arc::new(CannedLlm("I would rather not.".into()));
    let services = stub_services(Arc::new(StubModelServer::default()), llm, &cfg);
    let summary = pipeline::run(&cfg, &services).unwrap();
    assert_eq!(summary.failed, 5);
    assert_eq!(summary.report.n, 0);
    let failures: Value =
        serde_json::from_str(&fs::read_to_string(cfg.output_dir.join("failures.json")).unwrap()).unwrap();
    assert_eq!(failures["failed_tasks"].as_array().unwrap().len(), 5);
    let raw = fs::read_to_string(
        cfg.output_dir
            .join("responses")
            .join(format!("{}.txt", load_records(&cfg.output_dir).unwrap()[0].task_id)),
    )
    .unwrap();
    assert!(raw.contains("I would rather not."));
}

/// Answers `ok` completions, then behaves like a dead socket.
struct DiesAfter {
    inner: StubTransport,
    ok: usize,
    seen: AtomicUsize,
}

impl Transport for DiesAfter {
    fn post(&self, path: &str, body: &Value) -> Result<Value, TransportError> {
        if self.seen.fetch_add(1, Ordering::SeqCst) >= self.ok {
            return Err(TransportError::Io("connection refused".into()));
        }
        self.inner.post(path, body)
    }

    fn describe(&self) -> String {
        "flaky".into()
    }
}

#[test]
fn unreachable_llm_aborts_and_keeps_finished_records() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = corpora(dir.path(), 3, 2);
    let mut cfg = config(&train, &test, &dir.path().join("run"));
    cfg.f = 0;
    cfg.repetitions = 1;
    cfg.workers = 1;
    let llm = DiesAfter {
        inner: StubTransport::new(Arc::new(echo_llm(&test))),
        ok: 3,
        seen: AtomicUsize::new(0),
    };
    let services = Services::with_transports(
        Arc::new(StubTransport::new(Arc::new(StubModelServer::default()))),
        Arc::new(llm),
        &cfg,
    )
    .unwrap();
    let err = pipeline::run(&cfg, &services).unwrap_err();
    assert!(matches!(err, PipelineError::Unreachable(_)), "{err}");
    assert_eq!(err.exit_code(), 3);
    let records = load_records(&cfg.output_dir).unwrap();
    assert_eq!(records.len(), 3);
    assert!(records.iter().all(|r| !r.failed()));
    let log = fs::read_to_string(cfg.output_dir.join("run.log")).unwrap();
    assert!(log.contains("aborted"));
}

#[test]
fn intent_filter_and_sample_limit_restrict_tasks() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = corpora(dir.path(), 3, 4);
    let mut cfg = config(&train, &test, &dir.path().join("run"));
    cfg.f = 0;
    cfg.repetitions = 1;
    cfg.intent = Some(IntentCategory::Why);
    cfg.sample_limit = Some(3);
    let services = stub_services(Arc::new(StubModelServer::default()), Arc::new(echo_llm(&test)), &cfg);
    let summary = pipeline::run(&cfg, &services).unwrap();
    assert_eq!(summary.tasks, 3);
    assert!(load_records(&cfg.output_dir)
        .unwrap()
        .iter()
        .all(|r| r.intent == IntentCategory::Why));
    assert_eq!(
        summary.report.per_intent.keys().copied().collect::<Vec<_>>(),
        vec![IntentCategory::Why]
    );
}

#[test]
fn missing_corpus_is_a_configuration_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        &dir.path().join("nope.jsonl"),
        &dir.path().join("nope2.jsonl"),
        &dir.path().join("run"),
    );
    let services = stub_services(
        Arc::new(StubModelServer::default()),
        Arc::new(CannedLlm(String::new())),
        &cfg,
    );
    let err = pipeline::run(&cfg, &services).unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");
}

#[test]
fn rescore_reproduces_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = corpora(dir.path(), 3, 1);
    let mut cfg = config(&train, &test, &dir.path().join("run"));
    cfg.f = 1;
    cfg.repetitions = 1;
    let services = stub_services(Arc::new(StubModelServer::default()), Arc::new(echo_llm(&test)), &cfg);
    let summary = pipeline::run(&cfg, &services).unwrap();
    let rescored = pipeline::rescore(&cfg.output_dir).unwrap();
    assert_eq!(summary.report, rescored);
    let table = fs::read_to_string(cfg.output_dir.join("report.txt")).unwrap();
    assert!(table.contains("BLEU-4"));
}
