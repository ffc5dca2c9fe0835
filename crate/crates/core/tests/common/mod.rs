#![allow(dead_code)]

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use commentgen::pipeline::{RunConfig, Services};
use commentgen::stub::{EchoLlm, StubService, StubTransport};
use commentgen::{CodeCommentPair, Corpus, CorpusRole, IntentCategory, Split};

const VERBS: [&str; 10] = [
    "get", "set", "load", "save", "parse", "compute", "validate", "reset", "update", "find",
];
const NOUNS: [&str; 15] = [
    "user", "order", "buffer", "cache", "socket", "token", "file", "record", "queue", "matrix", "price", "session",
    "stream", "config", "index",
];
const ARGS: [&str; 8] = ["key", "name", "offset", "limit", "path", "count", "id", "value"];
const TYPES: [&str; 5] = ["int", "String", "long", "boolean", "Object"];

fn cap(s: &str) -> String {
    let mut c = s.chars();
    c.next()
        .map(|f| f.to_ascii_uppercase().to_string() + c.as_str())
        .unwrap_or_default()
}

/// A Java-like method with 3 to 6 statements.
pub fn method(rng: &mut impl Rng) -> (String, &'static str, &'static str, &'static str) {
    let verb = *VERBS.choose(rng).unwrap();
    let noun = *NOUNS.choose(rng).unwrap();
    let arg = *ARGS.choose(rng).unwrap();
    let ty = *TYPES.choose(rng).unwrap();
    let mut body = vec![format!("{ty} result = this.{noun}Map.get({arg});")];
    let extra = [
        format!("if (result == null) result = default{}();", cap(noun)),
        format!("log.debug(\"{verb} {noun}\" + {arg});"),
        format!("{noun}Counter.increment();"),
        format!("validate{}({arg}, result);", cap(arg)),
        format!("this.last{} = {arg};", cap(noun)),
    ];
    let n = rng.gen_range(1..=4);
    body.extend(extra.choose_multiple(rng, n).cloned());
    body.push("return result;".into());
    let code = format!(
        "public {ty} {verb}{}({ty} {arg}) {{\n{}\n}}",
        cap(noun),
        body.iter().map(|l| format!("    {l}")).collect::<Vec<_>>().join("\n")
    );
    (code, verb, noun, arg)
}

/// A comment of at least four words matching `intent`.
pub fn comment(intent: IntentCategory, verb: &str, noun: &str, arg: &str, salt: usize) -> String {
    let tag = NOUNS[salt % NOUNS.len()];
    let n = salt / NOUNS.len();
    match intent {
        IntentCategory::What => format!("{verb}s the {noun} for the given {arg} in {tag} scope {n}"),
        IntentCategory::Why => format!("needed because the {noun} {arg} may be stale after {tag} update {n}"),
        IntentCategory::HowToUse => format!("call this before reading the {noun} {arg} from {tag} {n}"),
        IntentCategory::HowItIsDone => format!("looks up the {noun} map by {arg} and falls back to {tag} default {n}"),
        IntentCategory::Property => format!("the {arg} must not be null when the {noun} is {tag} {n}"),
        IntentCategory::Others => format!("todo {noun} {arg} {n}"),
    }
}

/// `per_intent` pairs of each admissible intent in `split`, with distinct comments.
pub fn synthetic_pairs(per_intent: usize, split: Split, id_prefix: &str, seed: u64) -> Vec<CodeCommentPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut pairs = Vec::new();
    for intent in IntentCategory::ADMISSIBLE {
        let mut made = 0;
        while made < per_intent {
            let (code, verb, noun, arg) = method(&mut rng);
            let c = comment(intent, verb, noun, arg, rng.gen_range(0..10_000));
            if !seen.insert(c.clone()) {
                continue;
            }
            pairs.push(CodeCommentPair {
                id: format!("{id_prefix}{}", pairs.len()),
                code,
                comment: c,
                intent,
                split,
            });
            made += 1;
        }
    }
    pairs
}

pub fn write_corpus(path: &Path, pairs: Vec<CodeCommentPair>) -> PathBuf {
    Corpus::new("synthetic", CorpusRole::Retrieval, pairs)
        .write_jsonl(path)
        .unwrap();
    path.to_path_buf()
}

/// Retrieval and test corpora in `dir`.
pub fn corpora(dir: &Path, train_per_intent: usize, test_per_intent: usize) -> (PathBuf, PathBuf) {
    let train = write_corpus(
        &dir.join("train.jsonl"),
        synthetic_pairs(train_per_intent, Split::Train, "tr", 1),
    );
    let test = write_corpus(
        &dir.join("test.jsonl"),
        synthetic_pairs(test_per_intent, Split::Test, "te", 2),
    );
    (train, test)
}

pub fn config(retrieval: &Path, test: &Path, out: &Path) -> RunConfig {
    let mut c = RunConfig {
        retrieval_corpus: retrieval.to_path_buf(),
        test_corpus: test.to_path_buf(),
        output_dir: out.to_path_buf(),
        workers: 2,
        ..RunConfig::default()
    };
    for ep in [&mut c.model_server, &mut c.llm] {
        ep.backoff = Duration::from_millis(1);
        ep.max_retries = 1;
    }
    c
}

pub fn echo_llm(test: &Path) -> EchoLlm {
    let corpus = commentgen::corpus::load_corpus(test, CorpusRole::Test).unwrap().corpus;
    EchoLlm::new(corpus.pairs.iter().map(|p| (p.code.as_str(), p.comment.clone())))
}

pub fn stub_services(model: Arc<dyn StubService>, llm: Arc<dyn StubService>, config: &RunConfig) -> Services {
    Services::with_transports(
        Arc::new(StubTransport::new(model)),
        Arc::new(StubTransport::new(llm)),
        config,
    )
    .unwrap()
}
