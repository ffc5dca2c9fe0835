use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use commentgen::corpus::{dedup_against, intent_histogram, load_corpus};
use commentgen::pipeline::{self, parse_pooling, PipelineError, RunConfig, Services};
use commentgen::retrieval::RetrievalStrategy;
use commentgen::stub::{CannedLlm, EchoLlm, Router, StubModelServer, StubServer, StubService};
use commentgen::{CorpusRole, IntentCategory, Split};

#[derive(Parser)]
#[command(
    name = "commentgen",
    version,
    about = "Intent-aware code comment generation with retrieved, augmented examples"
)]
struct Cli {
    /// Log verbosity (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a corpus file and print its statistics.
    Ingest {
        corpus: PathBuf,
        #[arg(long, default_value = "retrieval")]
        role: CorpusRole,
        /// Drop pairs whose comment occurs in this retrieval corpus.
        #[arg(long)]
        dedup_against: Option<PathBuf>,
        /// Write the validated (and deduplicated) corpus here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate and score comments for a test corpus.
    Run(Box<RunArgs>),
    /// Recompute overlap metrics from stored responses and rewrite the reports.
    Score { run_dir: PathBuf },
    /// Rewrite metrics.json, report.txt and failures.json from stored records.
    Report { run_dir: PathBuf },
    /// Serve the deterministic stub services over HTTP.
    ServeStub {
        #[arg(long, default_value = "127.0.0.1:8700")]
        addr: String,
        /// Answer completions with the ground-truth comments of this corpus.
        #[arg(long)]
        echo_corpus: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML file with the same keys as the flags; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    retrieval_corpus: Option<PathBuf>,
    #[arg(long)]
    test_corpus: Option<PathBuf>,
    #[arg(long)]
    intent: Option<IntentCategory>,
    /// token or semantic
    #[arg(long)]
    strategy: Option<RetrievalStrategy>,
    #[arg(short = 'k', long)]
    k: Option<usize>,
    #[arg(short = 'f', long)]
    f: Option<usize>,
    #[arg(short = 'p', long)]
    p: Option<f64>,
    #[arg(long)]
    q_fraction: Option<f64>,
    #[arg(long)]
    q_min: Option<usize>,
    /// sum or mean
    #[arg(long, value_parser = parse_pooling_arg)]
    pooling: Option<String>,
    #[arg(long)]
    embed_model: Option<String>,
    #[arg(long)]
    quality_model: Option<String>,
    #[arg(long)]
    attention_model: Option<String>,
    #[arg(long)]
    completion_model: Option<String>,
    /// Empty string disables the embedding metric.
    #[arg(long)]
    sbert_model: Option<String>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    max_tokens: Option<u32>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long, short = 'o')]
    out: Option<PathBuf>,
    #[arg(long)]
    sample_limit: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    model_server_url: Option<String>,
    #[arg(long)]
    llm_url: Option<String>,
    #[arg(long)]
    timeout_ms: Option<u64>,
    #[arg(long)]
    max_retries: Option<u32>,
    #[arg(long)]
    max_concurrency: Option<usize>,
}

fn parse_pooling_arg(s: &str) -> Result<String, String> {
    parse_pooling(s).map(|_| s.trim().to_ascii_lowercase())
}

fn set<T: Into<toml::Value>>(table: &mut toml::Table, path: &[&str], value: Option<T>) {
    let Some(value) = value else { return };
    let (last, parents) = path.split_last().expect("non-empty key path");
    let mut t = table;
    for p in parents {
        t = t
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .expect("section is a table");
    }
    t.insert(last.to_string(), value.into());
}

fn path_str(p: Option<PathBuf>) -> Option<String> {
    p.map(|p| p.display().to_string())
}

impl RunArgs {
    fn overrides(self) -> toml::Table {
        let mut t = toml::Table::new();
        let int = |v: Option<usize>| v.map(|v| v as i64);
        set(&mut t, &["retrieval_corpus"], path_str(self.retrieval_corpus));
        set(&mut t, &["test_corpus"], path_str(self.test_corpus));
        set(&mut t, &["intent"], self.intent.map(|i| i.as_str().to_string()));
        set(
            &mut t,
            &["strategy"],
            self.strategy.map(|s| match s {
                RetrievalStrategy::TokenBased => "token-based".to_string(),
                RetrievalStrategy::SemanticBased => "semantic-based".to_string(),
            }),
        );
        set(&mut t, &["k"], int(self.k));
        set(&mut t, &["f"], int(self.f));
        set(&mut t, &["p"], self.p);
        set(&mut t, &["q_policy", "fraction"], self.q_fraction);
        set(&mut t, &["q_policy", "min"], int(self.q_min));
        set(&mut t, &["q_policy", "pooling"], self.pooling);
        set(&mut t, &["models", "embed"], self.embed_model);
        set(&mut t, &["models", "quality"], self.quality_model);
        set(&mut t, &["models", "attention"], self.attention_model);
        set(&mut t, &["models", "completion"], self.completion_model);
        set(&mut t, &["models", "sbert"], self.sbert_model);
        set(&mut t, &["temperature"], self.temperature);
        set(&mut t, &["max_tokens"], self.max_tokens.map(i64::from));
        set(&mut t, &["repetitions"], int(self.repetitions));
        set(&mut t, &["output_dir"], path_str(self.out));
        set(&mut t, &["sample_limit"], int(self.sample_limit));
        set(&mut t, &["seed"], self.seed.map(|s| s as i64));
        set(&mut t, &["workers"], int(self.workers));
        set(&mut t, &["model_server", "base_url"], self.model_server_url);
        set(&mut t, &["llm", "base_url"], self.llm_url);
        for section in ["model_server", "llm"] {
            set(&mut t, &[section, "timeout_ms"], self.timeout_ms.map(|v| v as i64));
            set(&mut t, &[section, "max_retries"], self.max_retries.map(i64::from));
            set(&mut t, &[section, "max_concurrency"], int(self.max_concurrency));
        }
        t
    }
}

fn ingest(
    corpus: PathBuf,
    role: CorpusRole,
    dedup: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<(), PipelineError> {
    let loaded = load_corpus(&corpus, role)?;
    let mut c = loaded.corpus;
    println!(
        "{}: {} pairs, {} `others` records dropped",
        corpus.display(),
        c.len(),
        loaded.dropped_others
    );
    for split in [Split::Train, Split::Validation, Split::Test] {
        println!("  split {split:?}: {}", c.with_split(split).len());
    }
    let hist = intent_histogram(&c);
    for intent in IntentCategory::ADMISSIBLE {
        println!("  intent {intent}: {}", hist.get(&intent).copied().unwrap_or(0));
    }
    if let Some(retrieval) = dedup {
        let r = load_corpus(&retrieval, CorpusRole::Retrieval)?.corpus;
        let d = dedup_against(&c, &r);
        println!("  removed {} pairs duplicated in {}", d.removed, retrieval.display());
        c = d.corpus;
    }
    if let Some(out) = out {
        c.write_jsonl(&out)?;
        println!("wrote {} pairs to {}", c.len(), out.display());
    }
    Ok(())
}

fn run(args: RunArgs) -> Result<(), PipelineError> {
    let mut layers = Vec::new();
    if let Some(file) = &args.config {
        layers.push(RunConfig::parse_file(file)?);
    }
    layers.push(RunConfig::env_layer());
    layers.push(args.overrides());
    let config = RunConfig::layered(layers)?;
    let services = Services::http(&config)?;
    let summary = pipeline::run(&config, &services)?;
    println!(
        "{} tasks ({} resumed, {} run, {} failed); reports in {}",
        summary.tasks,
        summary.resumed,
        summary.executed,
        summary.failed,
        config.output_dir.display()
    );
    print_table(&config.output_dir);
    Ok(())
}

fn print_table(run_dir: &Path) {
    print!(
        "{}",
        std::fs::read_to_string(run_dir.join("report.txt")).unwrap_or_default()
    );
}

fn serve_stub(addr: &str, echo: Option<PathBuf>) -> Result<(), PipelineError> {
    let llm: Arc<dyn StubService> = match echo {
        Some(path) => {
            let corpus = load_corpus(&path, CorpusRole::Test)?.corpus;
            Arc::new(EchoLlm::new(
                corpus.pairs.iter().map(|p| (p.code.as_str(), p.comment.clone())),
            ))
        }
        None => Arc::new(CannedLlm(
            "# Step 1 - Important statements:\n\n# Step 2 - The comment:\nNo comment available.".into(),
        )),
    };
    let router = Router::services(Arc::new(StubModelServer::default()), llm);
    let server = StubServer::bind(addr, Arc::new(router)).map_err(|source| PipelineError::Io {
        path: addr.to_string(),
        source,
    })?;
    println!("stub services listening on {}", server.url());
    server.wait();
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp_millis()
        .init();
    let result = match cli.command {
        Command::Ingest {
            corpus,
            role,
            dedup_against,
            out,
        } => ingest(corpus, role, dedup_against, out),
        Command::Run(args) => run(*args),
        Command::Score { run_dir } => pipeline::rescore(&run_dir).map(|_| print_table(&run_dir)),
        Command::Report { run_dir } => pipeline::report(&run_dir).map(|_| print_table(&run_dir)),
        Command::ServeStub { addr, echo_corpus } => serve_stub(&addr, echo_corpus),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
