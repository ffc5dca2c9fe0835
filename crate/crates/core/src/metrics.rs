//! Overlap and embedding metrics for generated comments.
//!
//! Sentence BLEU-4 uses Lin and Och's add-one smoothing on orders two to four;
//! corpus BLEU-4 is unsmoothed. METEOR runs the exact and Snowball-stem stages
//! only. ROUGE-L is the LCS F-measure with recall weighted by `beta`.

use std::collections::{BTreeMap, HashMap};
use std::sync::OnceLock;

use rust_stemmers::{Algorithm, Stemmer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::IntentCategory;
use crate::gateway::{Embedder, GatewayError};
use crate::retrieval::{cosine, SimilarityError};

pub const SMOOTHING_ID: &str = "lin-och-add-one";
pub const METEOR_CONFIG: &str = "meteor:exact+stem";
pub const ROUGE_BETA: f64 = 1.2;

const METEOR_ALPHA: f64 = 0.9;
const METEOR_BETA: f64 = 3.0;
const METEOR_GAMMA: f64 = 0.5;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("reference is empty")]
    EmptyReference,
    #[error("nothing to aggregate")]
    EmptyReport,
    #[error(transparent)]
    Service(#[from] GatewayError),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
}

/// Lowercases, blanks punctuation (hyphens inside words survive) and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for raw in text.to_lowercase().split_whitespace() {
        let chars: Vec<char> = raw.chars().collect();
        let cleaned: String = chars
            .iter()
            .enumerate()
            .map(|(i, &ch)| {
                let intra_hyphen = ch == '-'
                    && i > 0
                    && i + 1 < chars.len()
                    && chars[i - 1].is_alphanumeric()
                    && chars[i + 1].is_alphanumeric();
                if ch.is_alphanumeric() || intra_hyphen {
                    ch
                } else {
                    ' '
                }
            })
            .collect();
        out.extend(cleaned.split_whitespace().map(str::to_string));
    }
    out
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram matches and the candidate n-gram total.
pub fn clipped_ngram_matches<S: AsRef<str>>(candidate: &[S], reference: &[S], n: usize) -> (usize, usize) {
    let cand = ngram_counts(candidate, n);
    let refs = ngram_counts(reference, n);
    let matched = cand
        .iter()
        .map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0)))
        .sum();
    (matched, candidate.len().saturating_sub(n - 1))
}

fn brevity_penalty(reference_len: usize, candidate_len: usize) -> f64 {
    if candidate_len > reference_len {
        1.0
    } else if candidate_len == 0 {
        0.0
    } else {
        (1.0 - reference_len as f64 / candidate_len as f64).exp()
    }
}

/// Sentence-level smoothed BLEU-4.
pub fn bleu4<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> Result<f64, MetricError> {
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let (matched, total) = clipped_ngram_matches(candidate, reference, n);
        let (num, den) = (matched as f64, total.max(1) as f64);
        if n == 1 {
            if matched == 0 {
                return Ok(0.0);
            }
            log_sum += 0.25 * (num / den).ln();
        } else {
            log_sum += 0.25 * ((num + 1.0) / (den + 1.0)).ln();
        }
    }
    Ok(brevity_penalty(reference.len(), candidate.len()) * log_sum.exp())
}

/// Corpus-level BLEU-4: n-gram counts and lengths are pooled before the geometric mean. No smoothing.
pub fn corpus_bleu4<S: AsRef<str>>(pairs: &[(&[S], &[S])]) -> Result<f64, MetricError> {
    let mut matched = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut cand_len, mut ref_len) = (0, 0);
    for (candidate, reference) in pairs {
        if reference.is_empty() {
            return Err(MetricError::EmptyReference);
        }
        cand_len += candidate.len();
        ref_len += reference.len();
        for n in 1..=4 {
            let (m, t) = clipped_ngram_matches(candidate, reference, n);
            matched[n - 1] += m;
            totals[n - 1] += t.max(1);
        }
    }
    if matched.contains(&0) {
        return Ok(0.0);
    }
    let log_sum: f64 = (0..4).map(|i| 0.25 * (matched[i] as f64 / totals[i] as f64).ln()).sum();
    Ok(brevity_penalty(ref_len, cand_len) * log_sum.exp())
}

fn stemmer() -> &'static Stemmer {
    static STEMMER: OnceLock<Stemmer> = OnceLock::new();
    STEMMER.get_or_init(|| Stemmer::create(Algorithm::English))
}

// Greedy matching of the surviving words. Hypothesis words are visited from
// last to first and each takes the last unmatched reference word with the
// same form.
fn greedy_match(hyp: &mut Vec<(usize, String)>, reference: &mut Vec<(usize, String)>, out: &mut Vec<(usize, usize)>) {
    let mut i = hyp.len();
    while i > 0 {
        i -= 1;
        if let Some(j) = reference.iter().rposition(|r| r.1 == hyp[i].1) {
            out.push((hyp[i].0, reference[j].0));
            hyp.remove(i);
            reference.remove(j);
        }
    }
}

/// Word alignment as `(candidate index, reference index)` pairs, sorted by candidate index.
pub fn meteor_alignment<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> Vec<(usize, usize)> {
    let enumerate = |t: &[S]| -> Vec<(usize, String)> {
        t.iter()
            .enumerate()
            .map(|(i, w)| (i, w.as_ref().to_lowercase()))
            .collect()
    };
    let (mut hyp, mut reference) = (enumerate(candidate), enumerate(reference));
    let mut matches = Vec::new();
    greedy_match(&mut hyp, &mut reference, &mut matches);

    let stem = |v: &[(usize, String)]| -> Vec<(usize, String)> {
        v.iter().map(|(i, w)| (*i, stemmer().stem(w).into_owned())).collect()
    };
    let (mut hyp, mut reference) = (stem(&hyp), stem(&reference));
    greedy_match(&mut hyp, &mut reference, &mut matches);

    matches.sort_by_key(|m| m.0);
    matches
}

fn count_chunks(matches: &[(usize, usize)]) -> usize {
    if matches.is_empty() {
        return 0;
    }
    1 + matches
        .windows(2)
        .filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1))
        .count()
}

/// METEOR with exact and stem matching.
pub fn meteor<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let matches = meteor_alignment(candidate, reference);
    if matches.is_empty() {
        return 0.0;
    }
    let m = matches.len() as f64;
    let precision = m / candidate.len() as f64;
    let recall = m / reference.len() as f64;
    let fmean = precision * recall / (METEOR_ALPHA * precision + (1.0 - METEOR_ALPHA) * recall);
    let penalty = METEOR_GAMMA * (count_chunks(&matches) as f64 / m).powf(METEOR_BETA);
    (1.0 - penalty) * fmean
}

/// Length of the longest common subsequence.
pub fn lcs<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F-measure.
pub fn rouge_l<S: AsRef<str>>(candidate: &[S], reference: &[S], beta: f64) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let l = lcs(reference, candidate) as f64;
    let precision = l / candidate.len() as f64;
    let recall = l / reference.len() as f64;
    if precision == 0.0 || recall == 0.0 {
        return 0.0;
    }
    let b2 = beta * beta;
    (1.0 + b2) * precision * recall / (recall + b2 * precision)
}

/// Cosine between sentence embeddings of candidate and reference.
pub fn sbert_similarity(
    candidate: &str,
    reference: &str,
    embedder: &dyn Embedder,
    model: &str,
) -> Result<f64, MetricError> {
    let v = embedder.embed(&[candidate.to_string(), reference.to_string()], model)?;
    Ok(cosine(&v[0], &v[1])?)
}

/// Scores of one generated comment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub bleu4: f64,
    pub meteor: f64,
    pub rouge_l: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sbert: Option<f64>,
}

impl SampleMetrics {
    /// Overlap metrics of `candidate` against `reference`, both raw text.
    pub fn score(candidate: &str, reference: &str) -> Result<Self, MetricError> {
        let (c, r) = (tokenize(candidate), tokenize(reference));
        Ok(Self {
            bleu4: bleu4(&c, &r)?,
            meteor: meteor(&c, &r),
            rouge_l: rouge_l(&c, &r, ROUGE_BETA),
            sbert: None,
        })
    }

    /// Component-wise mean. `sbert` is kept only if every sample has it.
    pub fn mean(samples: &[SampleMetrics]) -> Option<SampleMetrics> {
        if samples.is_empty() {
            return None;
        }
        let n = samples.len() as f64;
        let avg = |f: fn(&SampleMetrics) -> f64| samples.iter().map(f).sum::<f64>() / n;
        let sbert = samples
            .iter()
            .map(|s| s.sbert)
            .collect::<Option<Vec<f64>>>()
            .map(|v| v.iter().sum::<f64>() / n);
        Some(SampleMetrics {
            bleu4: avg(|s| s.bleu4),
            meteor: avg(|s| s.meteor),
            rouge_l: avg(|s| s.rouge_l),
            sbert,
        })
    }
}

/// Means over `n` tasks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub n: usize,
    #[serde(flatten)]
    pub metrics: SampleMetrics,
}

/// One task's repetitions, all for the same intent.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskScores {
    pub intent: IntentCategory,
    pub repetitions: Vec<SampleMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n: usize,
    pub bleu4: f64,
    pub meteor: f64,
    pub rouge_l: f64,
    pub sbert: Option<f64>,
    pub per_intent: BTreeMap<IntentCategory, MetricSummary>,
    /// Pooled BLEU-4 over every scored response, when computed.
    pub corpus_bleu4: Option<f64>,
    pub smoothing: String,
    pub meteor_config: String,
}

impl MetricReport {
    /// Report over zero tasks.
    pub fn empty() -> Self {
        Self {
            n: 0,
            bleu4: 0.0,
            meteor: 0.0,
            rouge_l: 0.0,
            sbert: None,
            per_intent: BTreeMap::new(),
            corpus_bleu4: None,
            smoothing: SMOOTHING_ID.into(),
            meteor_config: METEOR_CONFIG.into(),
        }
    }
}

/// Averages repetitions within each task, then tasks overall and per intent.
/// Tasks without any repetition are skipped.
pub fn aggregate(tasks: &[TaskScores]) -> Result<MetricReport, MetricError> {
    let per_task: Vec<(IntentCategory, SampleMetrics)> = tasks
        .iter()
        .filter_map(|t| SampleMetrics::mean(&t.repetitions).map(|m| (t.intent, m)))
        .collect();
    if per_task.is_empty() {
        return Err(MetricError::EmptyReport);
    }
    let all: Vec<SampleMetrics> = per_task.iter().map(|(_, m)| *m).collect();
    let overall = SampleMetrics::mean(&all).expect("non-empty");

    let mut groups: BTreeMap<IntentCategory, Vec<SampleMetrics>> = BTreeMap::new();
    for (intent, m) in &per_task {
        groups.entry(*intent).or_default().push(*m);
    }
    let per_intent = groups
        .into_iter()
        .map(|(intent, v)| {
            let summary = MetricSummary {
                n: v.len(),
                metrics: SampleMetrics::mean(&v).expect("non-empty"),
            };
            (intent, summary)
        })
        .collect();

    Ok(MetricReport {
        n: per_task.len(),
        bleu4: overall.bleu4,
        meteor: overall.meteor,
        rouge_l: overall.rouge_l,
        sbert: overall.sbert,
        per_intent,
        ..MetricReport::empty()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn tokenizer_rules() {
        assert_eq!(toks("Returns the user ID."), ["returns", "the", "user", "id"]);
        assert_eq!(
            toks("throws illegal-argument -x- exception"),
            ["throws", "illegal-argument", "x", "exception"]
        );
        assert_eq!(toks("a,b (c)"), ["a", "b", "c"]);
        assert!(toks("  ... ").is_empty());
    }

    #[test]
    fn bleu_edges() {
        let a = toks("returns the user name of the account");
        assert!((bleu4(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(bleu4(&toks("x y z"), &toks("a b c")).unwrap(), 0.0);
        assert_eq!(bleu4(&Vec::<String>::new(), &a).unwrap(), 0.0);
        assert!(matches!(
            bleu4(&a, &Vec::<String>::new()),
            Err(MetricError::EmptyReference)
        ));
    }

    #[test]
    fn rouge_closed_form() {
        let v = rouge_l(&toks("a b c d"), &toks("a c d"), 1.2);
        // P = 3/4, R = 1 with the longer sequence as candidate
        let expected = 2.44 * 0.75 / (1.0 + 1.44 * 0.75);
        assert!((v - expected).abs() < 1e-12);
        let v = rouge_l(&toks("a c d"), &toks("a b c d"), 1.2);
        assert!((v - 0.8356).abs() < 1e-4);
        assert_eq!(rouge_l(&toks("x"), &toks("y"), 1.2), 0.0);
    }

    #[test]
    fn meteor_closed_forms() {
        assert!((meteor(&toks("foo"), &toks("foo")) - 0.5).abs() < 1e-12);
        assert_eq!(meteor(&toks("x y"), &toks("a b")), 0.0);
        for n in 1..8usize {
            let s: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
            let expected = 1.0 - 0.5 / (n as f64).powi(3);
            assert!((meteor(&s, &s) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn meteor_stem_stage() {
        // "sorting"/"sorts" share the stem "sort"
        let m = meteor_alignment(&toks("sorting items"), &toks("sorts items"));
        assert_eq!(m, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn aggregate_averages_repetitions_first() {
        let s = |b: f64| SampleMetrics {
            bleu4: b,
            meteor: b,
            rouge_l: b,
            sbert: None,
        };
        let tasks = vec![
            TaskScores {
                intent: IntentCategory::What,
                repetitions: vec![s(0.1), s(0.3), s(0.2), s(0.2), s(0.2)],
            },
            TaskScores {
                intent: IntentCategory::Why,
                repetitions: vec![s(0.4)],
            },
        ];
        let r = aggregate(&tasks).unwrap();
        assert_eq!(r.n, 2);
        assert!((r.bleu4 - 0.3).abs() < 1e-12);
        assert!((r.per_intent[&IntentCategory::What].metrics.bleu4 - 0.2).abs() < 1e-12);
        assert_eq!(r.per_intent.values().map(|m| m.n).sum::<usize>(), 2);
        assert!(matches!(aggregate(&[]), Err(MetricError::EmptyReport)));
    }

    struct Fixed(Vec<Vec<f64>>);

    impl Embedder for Fixed {
        fn embed(&self, _: &[String], _: &str) -> Result<Vec<Vec<f64>>, GatewayError> {
            Ok(self.0.clone())
        }
    }

    #[test]
    fn sbert_closed_forms() {
        let v = sbert_similarity("a", "b", &Fixed(vec![vec![3.0, 4.0], vec![4.0, 3.0]]), "m").unwrap();
        assert!((v - 0.96).abs() < 1e-9);
        let v = sbert_similarity("a", "b", &Fixed(vec![vec![1.0, 0.0], vec![0.0, 1.0]]), "m").unwrap();
        assert_eq!(v, 0.0);
    }

    fn lcs_oracle(a: &[String], b: &[String]) -> usize {
        let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                t[i][j] = if a[i - 1] == b[j - 1] {
                    t[i - 1][j - 1] + 1
                } else {
                    t[i - 1][j].max(t[i][j - 1])
                };
            }
        }
        t[a.len()][b.len()]
    }

    fn ngram_oracle(c: &[String], r: &[String], n: usize) -> usize {
        // multiset intersection by repeated removal
        let grams = |t: &[String]| -> Vec<Vec<String>> {
            if t.len() < n {
                vec![]
            } else {
                t.windows(n).map(|w| w.to_vec()).collect()
            }
        };
        let mut pool = grams(r);
        let mut hits = 0;
        for g in grams(c) {
            if let Some(p) = pool.iter().position(|x| *x == g) {
                pool.swap_remove(p);
                hits += 1;
            }
        }
        hits
    }

    proptest! {
        #[test]
        fn lcs_matches_dp(a in proptest::collection::vec("[a-d]", 0..64), b in proptest::collection::vec("[a-d]", 0..64)) {
            prop_assert_eq!(lcs(&a, &b), lcs_oracle(&a, &b));
        }

        #[test]
        fn ngram_counts_match_multiset(c in proptest::collection::vec("[a-c]", 0..20), r in proptest::collection::vec("[a-c]", 0..20)) {
            for n in 1..=4 {
                prop_assert_eq!(clipped_ngram_matches(&c, &r, n).0, ngram_oracle(&c, &r, n));
            }
        }

        #[test]
        fn metrics_bounded(c in proptest::collection::vec("[a-f]{1,3}", 1..15), r in proptest::collection::vec("[a-f]{1,3}", 1..15)) {
            for v in [bleu4(&c, &r).unwrap(), meteor(&c, &r), rouge_l(&c, &r, ROUGE_BETA)] {
                prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
            }
        }
    }
}
