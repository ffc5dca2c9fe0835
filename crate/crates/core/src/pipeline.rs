//! End-to-end runs: configuration, per-task orchestration, persistence and reports.
//!
//! A run directory looks like this:
//!
//! ```text
//! <out>/config.toml          effective configuration (no secrets)
//! <out>/run.log              append-only task log
//! <out>/cache/*.jsonl        quality scores and attention bundles
//! <out>/prompts/<task>.txt   rendered prompt
//! <out>/responses/<task>.txt raw completions
//! <out>/records/<task>.json  RunRecord, written last and atomically
//! <out>/metrics.json, report.txt, failures.json
//! ```
//!
//! A task whose record exists is skipped, so an interrupted run resumes where
//! it stopped without repeating any completion.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::codetext::segment_statements;
use crate::corpus::{
    dedup_against, load_corpus, CodeCommentPair, Corpus, CorpusError, CorpusRole, IntentCategory, Split,
};
use crate::gateway::{
    content_key, run_repeated, AttemptOutcome, CompletionClient, CompletionRequest, ContentCache, GatewayError,
    HttpTransport, ModelServerClient, ServiceClient, ServiceEndpoint, Transport, ENV_LLM_API_KEY, ENV_LLM_URL,
    ENV_MODEL_SERVER_API_KEY, ENV_MODEL_SERVER_URL,
};
use crate::knowledge::{extract_important, Demonstration, ExtractionPolicy, StatementPooling};
use crate::metrics::{
    aggregate, corpus_bleu4, sbert_similarity, tokenize, MetricError, MetricReport, SampleMetrics, TaskScores,
};
use crate::promptgen::{build_prompt, PromptError};
use crate::retrieval::{RetrievalError, RetrievalIndex, RetrievalStrategy, Similarity};
use crate::selection::{assess_quality, fuse_and_select, RatedCandidate, SelectionConfig, SelectionError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("service unreachable, run aborted: {0}")]
    Unreachable(GatewayError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Record { path: String, message: String },
    #[error("no run records in {0}")]
    NoRecords(String),
}

impl PipelineError {
    /// Process exit code: 2 for bad configuration or input, 3 for an unreachable service, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Corpus(_) => 2,
            PipelineError::Unreachable(_) => 3,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelTags {
    /// Encoder for semantic retrieval.
    pub embed: String,
    /// Encoder for example quality.
    pub quality: String,
    /// Cross-encoder whose attention is read.
    pub attention: String,
    pub completion: String,
    /// Sentence encoder for the embedding-cosine metric; empty disables it.
    pub sbert: String,
}

impl Default for ModelTags {
    fn default() -> Self {
        Self {
            embed: "sentence-transformers/all-MiniLM-L6-v2".into(),
            quality: "Salesforce/codet5p-110m-embedding".into(),
            attention: "microsoft/codebert-base".into(),
            completion: "codellama/CodeLlama-7b-Instruct-hf".into(),
            sbert: "sentence-transformers/all-MiniLM-L6-v2".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub retrieval_corpus: PathBuf,
    pub test_corpus: PathBuf,
    /// One intent, or all five when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intent: Option<IntentCategory>,
    pub strategy: RetrievalStrategy,
    pub k: usize,
    pub f: usize,
    pub p: f64,
    pub q_policy: ExtractionPolicy,
    pub models: ModelTags,
    pub temperature: f64,
    pub max_tokens: u32,
    pub repetitions: usize,
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_limit: Option<usize>,
    pub seed: u64,
    pub workers: usize,
    pub model_server: ServiceEndpoint,
    pub llm: ServiceEndpoint,
}

impl Default for RunConfig {
    fn default() -> Self {
        let selection = SelectionConfig::default();
        Self {
            retrieval_corpus: PathBuf::new(),
            test_corpus: PathBuf::new(),
            intent: None,
            strategy: RetrievalStrategy::TokenBased,
            k: selection.k,
            f: selection.f,
            p: selection.p,
            q_policy: ExtractionPolicy::default(),
            models: ModelTags::default(),
            temperature: 0.5,
            max_tokens: 256,
            repetitions: 5,
            output_dir: PathBuf::from("runs/default"),
            sample_limit: None,
            seed: 42,
            workers: 4,
            model_server: ServiceEndpoint::new("http://127.0.0.1:8700"),
            llm: ServiceEndpoint::new("http://127.0.0.1:8701"),
        }
    }
}

fn merge(base: &mut toml::Table, layer: toml::Table) {
    for (key, value) in layer {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(v)) => merge(b, v),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

impl RunConfig {
    pub fn selection(&self) -> SelectionConfig {
        SelectionConfig {
            k: self.k,
            f: self.f,
            p: self.p,
        }
    }

    /// Defaults, then each layer in order; later layers win.
    pub fn layered(layers: impl IntoIterator<Item = toml::Table>) -> Result<Self, PipelineError> {
        let mut table = toml::Table::try_from(RunConfig::default()).expect("default config serializes");
        for layer in layers {
            merge(&mut table, layer);
        }
        let config: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| PipelineError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn parse_file(path: &Path) -> Result<toml::Table, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        text.parse::<toml::Table>()
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    /// Base URLs from the environment.
    pub fn env_layer() -> toml::Table {
        let mut layer = toml::Table::new();
        for (var, section) in [(ENV_MODEL_SERVER_URL, "model_server"), (ENV_LLM_URL, "llm")] {
            if let Ok(url) = std::env::var(var) {
                let mut t = toml::Table::new();
                t.insert("base_url".into(), toml::Value::String(url));
                layer.insert(section.into(), toml::Value::Table(t));
            }
        }
        layer
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.retrieval_corpus.as_os_str().is_empty() {
            return bad("retrieval_corpus is not set".into());
        }
        if self.test_corpus.as_os_str().is_empty() {
            return bad("test_corpus is not set".into());
        }
        if let Some(i) = self.intent {
            if !i.is_admissible() {
                return bad(format!("intent `{i}` cannot be generated"));
            }
        }
        self.selection()
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        if !(self.q_policy.fraction > 0.0 && self.q_policy.fraction <= 1.0) || self.q_policy.min == 0 {
            return bad(format!(
                "q_policy needs 0 < fraction <= 1 and min >= 1, got {} and {}",
                self.q_policy.fraction, self.q_policy.min
            ));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return bad(format!("temperature {} is negative", self.temperature));
        }
        if self.max_tokens == 0 || self.repetitions == 0 || self.workers == 0 {
            return bad("max_tokens, repetitions and workers must be positive".into());
        }
        if self.sample_limit == Some(0) {
            return bad("sample_limit must be positive".into());
        }
        for (name, ep) in [("model_server", &self.model_server), ("llm", &self.llm)] {
            ep.validate()
                .map_err(|e| PipelineError::Config(format!("{name}: {e}")))?;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Connected clients for one run.
pub struct Services {
    pub model: ModelServerClient,
    pub llm: CompletionClient,
}

impl Services {
    /// HTTP clients; API keys come from the environment only.
    pub fn http(config: &RunConfig) -> Result<Self, PipelineError> {
        let key = |var| std::env::var(var).ok().filter(|k: &String| !k.is_empty());
        let model = HttpTransport::new(
            &config.model_server.base_url,
            config.model_server.timeout,
            key(ENV_MODEL_SERVER_API_KEY),
        );
        let llm = HttpTransport::new(&config.llm.base_url, config.llm.timeout, key(ENV_LLM_API_KEY));
        Self::with_transports(Arc::new(model), Arc::new(llm), config)
    }

    /// Clients over arbitrary transports, with the attention cache persisted in the run directory.
    pub fn with_transports(
        model: Arc<dyn Transport>,
        llm: Arc<dyn Transport>,
        config: &RunConfig,
    ) -> Result<Self, PipelineError> {
        let cache_dir = config.output_dir.join("cache");
        fs::create_dir_all(&cache_dir).map_err(io_err(&cache_dir))?;
        let attention_path = cache_dir.join("attention.jsonl");
        let attention = ContentCache::persistent(&attention_path).map_err(io_err(&attention_path))?;
        Ok(Self {
            model: ModelServerClient::with_caches(
                ServiceClient::new(model, &config.model_server),
                ContentCache::in_memory(),
                attention,
            ),
            llm: CompletionClient::new(ServiceClient::new(llm, &config.llm)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemonstrationRecord {
    pub pair_id: String,
    pub corpus_index: usize,
    pub sim_score: f64,
    pub quality_score: f64,
    pub example_score: f64,
    /// Statement indices, best first.
    pub important_statements: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionRecord {
    pub repetition: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comment: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<SampleMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub task_id: String,
    pub target_pair_id: String,
    pub intent: IntentCategory,
    pub reference: String,
    pub demonstrations: Vec<DemonstrationRecord>,
    /// Demonstrations requested but unavailable.
    pub shortfall: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_sha256: Option<String>,
    pub repetitions: Vec<RepetitionRecord>,
    pub failure_notes: Vec<String>,
}

impl RunRecord {
    /// Metrics of the repetitions that produced a comment.
    pub fn scored(&self) -> Vec<SampleMetrics> {
        self.repetitions.iter().filter_map(|r| r.metrics).collect()
    }

    pub fn failed(&self) -> bool {
        self.scored().is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub tasks: usize,
    pub resumed: usize,
    pub executed: usize,
    pub failed: usize,
    pub report: MetricReport,
}

/// Filesystem-safe task id; the id's hash is appended when characters had to be replaced.
pub fn task_id(pair: &CodeCommentPair) -> String {
    let safe: String = pair
        .id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect();
    if safe == pair.id && !safe.starts_with('.') {
        safe
    } else {
        format!("{safe}-{}", &content_key(&[&pair.id])[..8])
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Loaded inputs of a run: train-split retrieval pool and deduplicated, sampled test pairs.
#[derive(Debug, Clone)]
pub struct RunInputs {
    pub retrieval: Corpus,
    pub test: Corpus,
    pub removed_duplicates: usize,
}

pub fn load_inputs(config: &RunConfig) -> Result<RunInputs, PipelineError> {
    let retrieval = load_corpus(&config.retrieval_corpus, CorpusRole::Retrieval)?
        .corpus
        .with_split(Split::Train);
    let test = load_corpus(&config.test_corpus, CorpusRole::Test)?
        .corpus
        .with_split(Split::Test);
    let test = match config.intent {
        Some(intent) => crate::corpus::filter_by_intent(&test, intent)?,
        None => test,
    };
    let deduped = dedup_against(&test, &retrieval);
    if deduped.removed > 0 {
        log::info!(
            "removed {} test pairs whose comment occurs in the retrieval corpus",
            deduped.removed
        );
    }
    let mut test = deduped.corpus;
    if let Some(limit) = config.sample_limit {
        if test.len() > limit {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let mut keep = rand::seq::index::sample(&mut rng, test.len(), limit).into_vec();
            keep.sort_unstable();
            test.pairs = keep.into_iter().map(|i| test.pairs[i].clone()).collect();
        }
    }
    Ok(RunInputs {
        retrieval,
        test,
        removed_duplicates: deduped.removed,
    })
}

struct Runner<'a> {
    config: &'a RunConfig,
    services: &'a Services,
    index: RetrievalIndex,
    quality: ContentCache<f64>,
    log: Mutex<fs::File>,
}

// Per-task failures are recorded; only an unreachable service escapes.
enum TaskError {
    Abort(GatewayError),
    Failed(String),
}

impl From<GatewayError> for TaskError {
    fn from(e: GatewayError) -> Self {
        if e.is_unreachable() {
            TaskError::Abort(e)
        } else {
            TaskError::Failed(e.to_string())
        }
    }
}

impl From<RetrievalError> for TaskError {
    fn from(e: RetrievalError) -> Self {
        match e {
            RetrievalError::Service(g) => g.into(),
            other => TaskError::Failed(other.to_string()),
        }
    }
}

impl From<SelectionError> for TaskError {
    fn from(e: SelectionError) -> Self {
        match e {
            SelectionError::Service { source, .. } if source.is_unreachable() => TaskError::Abort(source),
            other => TaskError::Failed(other.to_string()),
        }
    }
}

impl From<MetricError> for TaskError {
    fn from(e: MetricError) -> Self {
        match e {
            MetricError::Service(g) => g.into(),
            other => TaskError::Failed(other.to_string()),
        }
    }
}

impl From<PromptError> for TaskError {
    fn from(e: PromptError) -> Self {
        TaskError::Failed(e.to_string())
    }
}

impl Runner<'_> {
    fn log_line(&self, line: &str) {
        let mut f = self.log.lock().unwrap();
        let _ = writeln!(f, "{line}");
    }

    fn quality_of(&self, pair: &CodeCommentPair) -> Result<f64, TaskError> {
        let model = &self.config.models.quality;
        let key = content_key(&[model, &pair.id]);
        if let Some(q) = self.quality.get(&key) {
            return Ok(q);
        }
        let q = assess_quality(pair, &self.services.model, model)?.quality_score;
        self.quality.insert(key, q);
        Ok(q)
    }

    /// Best `f` candidates that could be augmented, in fused order.
    fn demonstrations(
        &self,
        target: &CodeCommentPair,
        notes: &mut Vec<String>,
    ) -> Result<(Vec<Demonstration>, Vec<DemonstrationRecord>), TaskError> {
        let cfg = self.config;
        if cfg.f == 0 {
            return Ok((Vec::new(), Vec::new()));
        }
        let similarity = match cfg.strategy {
            RetrievalStrategy::TokenBased => Similarity::Token,
            RetrievalStrategy::SemanticBased => Similarity::Semantic {
                embedder: &self.services.model,
                model: &cfg.models.embed,
            },
        };
        let candidates = self
            .index
            .retrieve_top_k(&target.code, target.intent, similarity, cfg.k)?;

        let mut rated = Vec::with_capacity(candidates.len());
        for candidate in candidates {
            let quality_score = self.quality_of(&candidate.pair)?;
            rated.push(RatedCandidate {
                candidate,
                quality_score,
            });
        }
        let everything = SelectionConfig {
            f: rated.len(),
            ..cfg.selection()
        };
        let ordered = fuse_and_select(&rated, &everything).selected;

        let mut demos = Vec::new();
        let mut records = Vec::new();
        for example in ordered {
            if demos.len() == cfg.f {
                break;
            }
            let pair = &example.pair;
            let statements = segment_statements(&pair.code);
            let bundle = self.services.model.fetch_attention(
                &pair.comment,
                pair.intent,
                &pair.code,
                &statements,
                &cfg.models.attention,
            )?;
            match extract_important(&bundle, &statements, &cfg.q_policy) {
                Ok(important) => {
                    records.push(DemonstrationRecord {
                        pair_id: pair.id.clone(),
                        corpus_index: example.corpus_index,
                        sim_score: example.sim_score,
                        quality_score: example.quality_score,
                        example_score: example.example_score,
                        important_statements: important.iter().map(|s| s.index).collect(),
                    });
                    demos.push(Demonstration {
                        pair: pair.clone(),
                        statements,
                        important,
                    });
                }
                Err(e) => notes.push(format!("skipped example `{}`: {e}", pair.id)),
            }
        }
        Ok((demos, records))
    }

    fn score(&self, comment: &str, reference: &str) -> Result<SampleMetrics, TaskError> {
        let mut m = SampleMetrics::score(comment, reference)?;
        if !self.config.models.sbert.is_empty() {
            m.sbert = Some(sbert_similarity(
                comment,
                reference,
                &self.services.model,
                &self.config.models.sbert,
            )?);
        }
        Ok(m)
    }

    fn execute(&self, target: &CodeCommentPair, task: &str) -> Result<RunRecord, GatewayError> {
        let cfg = self.config;
        let out = &cfg.output_dir;
        let mut record = RunRecord {
            task_id: task.to_string(),
            target_pair_id: target.id.clone(),
            intent: target.intent,
            reference: target.comment.clone(),
            demonstrations: Vec::new(),
            shortfall: 0,
            prompt_sha256: None,
            repetitions: Vec::new(),
            failure_notes: Vec::new(),
        };
        match self.attempt(target, task, &mut record) {
            Ok(()) => {}
            Err(TaskError::Abort(e)) => return Err(e),
            Err(TaskError::Failed(note)) => record.failure_notes.push(note),
        }
        let path = out.join("records").join(format!("{task}.json"));
        let json = serde_json::to_vec_pretty(&record).expect("record serializes");
        if let Err(e) = write_atomic(&path, &json) {
            log::error!("{e}");
        }
        let status = if record.failed() { "failed" } else { "done" };
        self.log_line(&format!("{status} {task}"));
        Ok(record)
    }

    fn attempt(&self, target: &CodeCommentPair, task: &str, record: &mut RunRecord) -> Result<(), TaskError> {
        let cfg = self.config;
        let out = &cfg.output_dir;
        let (demos, demo_records) = self.demonstrations(target, &mut record.failure_notes)?;
        record.shortfall = cfg.f - demos.len();
        record.demonstrations = demo_records;

        let prompt = build_prompt(&target.code, target.intent, &demos, demos.len())?;
        let prompt_path = out.join("prompts").join(format!("{task}.txt"));
        fs::write(&prompt_path, &prompt.rendered)
            .map_err(|e| TaskError::Failed(format!("{}: {e}", prompt_path.display())))?;
        record.prompt_sha256 = Some(sha256_hex(prompt.rendered.as_bytes()));

        let mut raw_log = String::new();
        let outcome = run_repeated(cfg.repetitions, |i| {
            let req = CompletionRequest {
                prompt: prompt.rendered.clone(),
                temperature: cfg.temperature,
                max_tokens: cfg.max_tokens,
                model: cfg.models.completion.clone(),
                seed_hint: Some(cfg.seed.wrapping_add(i as u64)),
            };
            let r = self.services.llm.complete(&req);
            match &r {
                Ok(text) => raw_log.push_str(&format!("### repetition {i}\n{text}\n")),
                Err(e) => raw_log.push_str(&format!("### repetition {i} failed\n{e}\n")),
            }
            r
        })?;
        let responses_path = out.join("responses").join(format!("{task}.txt"));
        fs::write(&responses_path, raw_log)
            .map_err(|e| TaskError::Failed(format!("{}: {e}", responses_path.display())))?;

        for attempt in outcome.attempts {
            let rep = match attempt.outcome {
                AttemptOutcome::Parsed(parsed) => RepetitionRecord {
                    repetition: attempt.repetition,
                    metrics: Some(self.score(&parsed.comment, &target.comment)?),
                    comment: Some(parsed.comment),
                    failure: None,
                },
                AttemptOutcome::Unparsable { .. } => RepetitionRecord {
                    repetition: attempt.repetition,
                    comment: None,
                    metrics: None,
                    failure: Some("response has no comment section".into()),
                },
                AttemptOutcome::Failed { error } => RepetitionRecord {
                    repetition: attempt.repetition,
                    comment: None,
                    metrics: None,
                    failure: Some(error),
                },
            };
            record.repetitions.push(rep);
        }
        if record.failed() {
            record
                .failure_notes
                .push(format!("all {} repetitions failed", cfg.repetitions));
        }
        Ok(())
    }
}

fn read_record(path: &Path) -> Result<RunRecord, PipelineError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|e| PipelineError::Record {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Runs every pending task, then writes the reports.
pub fn run(config: &RunConfig, services: &Services) -> Result<RunSummary, PipelineError> {
    config.validate()?;
    let inputs = load_inputs(config)?;
    let out = &config.output_dir;
    for sub in ["records", "prompts", "responses", "cache"] {
        let dir = out.join(sub);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    }
    let config_path = out.join("config.toml");
    write_atomic(&config_path, config.to_toml().as_bytes())?;

    let quality_path = out.join("cache").join("quality.jsonl");
    let log_path = out.join("run.log");
    let runner = Runner {
        config,
        services,
        index: RetrievalIndex::build(&inputs.retrieval),
        quality: ContentCache::persistent(&quality_path).map_err(io_err(&quality_path))?,
        log: Mutex::new(
            fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&log_path)
                .map_err(io_err(&log_path))?,
        ),
    };

    let mut pending = Vec::new();
    let mut resumed = 0;
    for pair in &inputs.test.pairs {
        let task = task_id(pair);
        let path = out.join("records").join(format!("{task}.json"));
        if path.exists() && read_record(&path).is_ok() {
            resumed += 1;
        } else {
            pending.push((pair, task));
        }
    }
    log::info!(
        "{} test tasks: {} already complete, {} to run",
        inputs.test.len(),
        resumed,
        pending.len()
    );

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let executed: Vec<RunRecord> = pool
        .install(|| {
            pending
                .par_iter()
                .map(|(pair, task)| runner.execute(pair, task))
                .collect::<Result<Vec<_>, _>>()
        })
        .map_err(|e| {
            runner.log_line(&format!("aborted: {e}"));
            PipelineError::Unreachable(e)
        })?;

    let report = report(out)?;
    Ok(RunSummary {
        tasks: inputs.test.len(),
        resumed,
        executed: executed.len(),
        failed: executed.iter().filter(|r| r.failed()).count(),
        report,
    })
}

/// All records of a run directory, sorted by task id.
pub fn load_records(out: &Path) -> Result<Vec<RunRecord>, PipelineError> {
    let dir = out.join("records");
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(io_err(&dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut records = paths.iter().map(|p| read_record(p)).collect::<Result<Vec<_>, _>>()?;
    records.sort_by(|a, b| a.task_id.cmp(&b.task_id));
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskFailure {
    pub task_id: String,
    pub target_pair_id: String,
    pub intent: IntentCategory,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialFailure {
    pub task_id: String,
    /// Repetition number and reason.
    pub repetitions: BTreeMap<usize, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureSummary {
    pub failed_tasks: Vec<TaskFailure>,
    pub partial_tasks: Vec<PartialFailure>,
}

/// Metric report over records: failed tasks are excluded from the means.
pub fn summarize(records: &[RunRecord]) -> (MetricReport, FailureSummary) {
    let tasks: Vec<TaskScores> = records
        .iter()
        .filter(|r| !r.failed())
        .map(|r| TaskScores {
            intent: r.intent,
            repetitions: r.scored(),
        })
        .collect();
    let mut report = aggregate(&tasks).unwrap_or_else(|_| MetricReport::empty());

    let mut segments: Vec<(Vec<String>, Vec<String>)> = Vec::new();
    for r in records {
        let reference = tokenize(&r.reference);
        for rep in &r.repetitions {
            if let (Some(comment), Some(_)) = (&rep.comment, rep.metrics) {
                segments.push((tokenize(comment), reference.clone()));
            }
        }
    }
    if !segments.is_empty() {
        let pairs: Vec<(&[String], &[String])> = segments.iter().map(|(c, r)| (c.as_slice(), r.as_slice())).collect();
        report.corpus_bleu4 = corpus_bleu4(&pairs).ok();
    }

    let failures = FailureSummary {
        failed_tasks: records
            .iter()
            .filter(|r| r.failed())
            .map(|r| TaskFailure {
                task_id: r.task_id.clone(),
                target_pair_id: r.target_pair_id.clone(),
                intent: r.intent,
                notes: r.failure_notes.clone(),
            })
            .collect(),
        partial_tasks: records
            .iter()
            .filter(|r| !r.failed())
            .filter_map(|r| {
                let reps: BTreeMap<usize, String> = r
                    .repetitions
                    .iter()
                    .filter_map(|rep| rep.failure.clone().map(|f| (rep.repetition, f)))
                    .collect();
                (!reps.is_empty()).then(|| PartialFailure {
                    task_id: r.task_id.clone(),
                    repetitions: reps,
                })
            })
            .collect(),
    };
    (report, failures)
}

fn pct(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

/// Aligned text table, values x100.
pub fn render_table(report: &MetricReport, failures: &FailureSummary) -> String {
    let mut rows: Vec<[String; 6]> = vec![[
        "intent".into(),
        "n".into(),
        "BLEU-4".into(),
        "METEOR".into(),
        "ROUGE-L".into(),
        "SBERT".into(),
    ]];
    let sbert = |v: Option<f64>| v.map_or("-".to_string(), pct);
    for (intent, s) in &report.per_intent {
        rows.push([
            intent.to_string(),
            s.n.to_string(),
            pct(s.metrics.bleu4),
            pct(s.metrics.meteor),
            pct(s.metrics.rouge_l),
            sbert(s.metrics.sbert),
        ]);
    }
    rows.push([
        "overall".into(),
        report.n.to_string(),
        pct(report.bleu4),
        pct(report.meteor),
        pct(report.rouge_l),
        sbert(report.sbert),
    ]);
    let widths: Vec<usize> = (0..6)
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                if c == 0 {
                    format!("{cell:<w$}", w = widths[c])
                } else {
                    format!("{cell:>w$}", w = widths[c])
                }
            })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            out.push('\n');
        }
    }
    out.push('\n');
    match report.corpus_bleu4 {
        Some(b) => out.push_str(&format!("corpus BLEU-4: {}\n", pct(b))),
        None => out.push_str("corpus BLEU-4: -\n"),
    }
    out.push_str(&format!("smoothing: {}\n", report.smoothing));
    out.push_str(&format!("meteor: {}\n", report.meteor_config));
    out.push_str(&format!(
        "failed tasks: {}, tasks with failed repetitions: {}\n",
        failures.failed_tasks.len(),
        failures.partial_tasks.len()
    ));
    out
}

/// Writes `metrics.json`, `report.txt` and `failures.json` from the records in `out`.
pub fn report(out: &Path) -> Result<MetricReport, PipelineError> {
    let records = load_records(out)?;
    if records.is_empty() {
        return Err(PipelineError::NoRecords(out.display().to_string()));
    }
    let (metrics, failures) = summarize(&records);
    let mut json = serde_json::to_string_pretty(&metrics).expect("report serializes");
    json.push('\n');
    write_atomic(&out.join("metrics.json"), json.as_bytes())?;
    write_atomic(&out.join("report.txt"), render_table(&metrics, &failures).as_bytes())?;
    let mut json = serde_json::to_string_pretty(&failures).expect("failures serialize");
    json.push('\n');
    write_atomic(&out.join("failures.json"), json.as_bytes())?;
    Ok(metrics)
}

/// Recomputes overlap metrics of every stored comment, keeping embedding scores, then rewrites the reports.
pub fn rescore(out: &Path) -> Result<MetricReport, PipelineError> {
    for mut record in load_records(out)? {
        for rep in &mut record.repetitions {
            if let Some(comment) = &rep.comment {
                let sbert = rep.metrics.and_then(|m| m.sbert);
                let mut m = SampleMetrics::score(comment, &record.reference).map_err(|e| PipelineError::Record {
                    path: record.task_id.clone(),
                    message: e.to_string(),
                })?;
                m.sbert = sbert;
                rep.metrics = Some(m);
            }
        }
        let path = out.join("records").join(format!("{}.json", record.task_id));
        write_atomic(&path, &serde_json::to_vec_pretty(&record).expect("record serializes"))?;
    }
    report(out)
}

/// Pooling names accepted on the command line.
pub fn parse_pooling(s: &str) -> Result<StatementPooling, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "sum" => Ok(StatementPooling::Sum),
        "mean" => Ok(StatementPooling::Mean),
        other => Err(format!("unknown pooling `{other}`")),
    }
}
