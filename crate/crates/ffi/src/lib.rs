//! C ABI for the commentgen library.
//!
//! Conventions:
//!
//! - Every fallible function returns a [`CgStatus`]; results go through out-pointers.
//! - On failure, [`cg_last_error`] describes the most recent error on the calling thread.
//! - Strings returned to the caller are owned by the caller and released with [`cg_string_free`].
//! - Handles ([`CgCorpus`], [`CgPromptBuilder`]) are opaque and released with their `_free` function.
//! - Input strings are NUL-terminated UTF-8.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use commentgen::codetext::{segment_statements, subtokenize, Statement, StatementList};
use commentgen::corpus::load_corpus;
use commentgen::knowledge::{
    extract_important, AttentionBundle, Demonstration, ExtractionPolicy, ImportantStatement, Matrix,
};
use commentgen::metrics::{self, tokenize};
use commentgen::promptgen::{build_prompt, parse_response};
use commentgen::retrieval::{token_similarity, RetrievalIndex, Similarity};
use commentgen::{CodeCommentPair, CorpusRole, IntentCategory, Split};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CgStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    CorpusError = 4,
    OutOfRange = 5,
    ParseError = 6,
    BufferTooSmall = 7,
    Panic = 99,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let message = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(message).ok());
}

struct Failure(CgStatus, String);

impl Failure {
    fn new(status: CgStatus, message: impl Into<String>) -> Self {
        Self(status, message.into())
    }
}

type FfiResult<T> = Result<T, Failure>;

fn guard(f: impl FnOnce() -> FfiResult<()>) -> CgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CgStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CgStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, name: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(Failure::new(CgStatus::NullArgument, format!("`{name}` is NULL")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(CgStatus::InvalidUtf8, format!("`{name}` is not UTF-8")))
}

unsafe fn out<'a, T>(p: *mut T, name: &str) -> FfiResult<&'a mut T> {
    p.as_mut()
        .ok_or_else(|| Failure::new(CgStatus::NullArgument, format!("`{name}` is NULL")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> FfiResult<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::new(CgStatus::NullArgument, format!("`{name}` is NULL")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn intent(s: &str) -> FfiResult<IntentCategory> {
    let i: IntentCategory = s
        .parse()
        .map_err(|e: commentgen::corpus::ParseIntentError| Failure::new(CgStatus::InvalidArgument, e.to_string()))?;
    if !i.is_admissible() {
        return Err(Failure::new(
            CgStatus::InvalidArgument,
            format!("intent `{i}` is not admissible"),
        ));
    }
    Ok(i)
}

fn to_c(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " "))
        .expect("NUL bytes replaced")
        .into_raw()
}

/// Message of the last failure on this thread, or NULL. Valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn cg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Smoothed sentence BLEU-4 of two raw texts.
///
/// # Safety
/// `candidate` and `reference` must be NUL-terminated; `out_score` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cg_bleu4(candidate: *const c_char, reference: *const c_char, out_score: *mut f64) -> CgStatus {
    guard(|| {
        let (c, r) = (
            tokenize(text(candidate, "candidate")?),
            tokenize(text(reference, "reference")?),
        );
        let v = metrics::bleu4(&c, &r).map_err(|e| Failure::new(CgStatus::InvalidArgument, e.to_string()))?;
        *out(out_score, "out_score")? = v;
        Ok(())
    })
}

/// METEOR (exact and stem stages) of two raw texts.
///
/// # Safety
/// As for [`cg_bleu4`].
#[no_mangle]
pub unsafe extern "C" fn cg_meteor(
    candidate: *const c_char,
    reference: *const c_char,
    out_score: *mut f64,
) -> CgStatus {
    guard(|| {
        let (c, r) = (
            tokenize(text(candidate, "candidate")?),
            tokenize(text(reference, "reference")?),
        );
        *out(out_score, "out_score")? = metrics::meteor(&c, &r);
        Ok(())
    })
}

/// ROUGE-L F-measure of two raw texts. Pass `beta` <= 0 for the default of 1.2.
///
/// # Safety
/// As for [`cg_bleu4`].
#[no_mangle]
pub unsafe extern "C" fn cg_rouge_l(
    candidate: *const c_char,
    reference: *const c_char,
    beta: f64,
    out_score: *mut f64,
) -> CgStatus {
    guard(|| {
        let (c, r) = (
            tokenize(text(candidate, "candidate")?),
            tokenize(text(reference, "reference")?),
        );
        let beta = if beta > 0.0 { beta } else { metrics::ROUGE_BETA };
        *out(out_score, "out_score")? = metrics::rouge_l(&c, &r, beta);
        Ok(())
    })
}

/// Jaccard similarity of the sub-token sets of two code snippets.
///
/// # Safety
/// `code_a` and `code_b` must be NUL-terminated; `out_score` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cg_token_similarity(
    code_a: *const c_char,
    code_b: *const c_char,
    out_score: *mut f64,
) -> CgStatus {
    guard(|| {
        let a = subtokenize(text(code_a, "code_a")?);
        let b = subtokenize(text(code_b, "code_b")?);
        *out(out_score, "out_score")? = token_similarity(&a, &b);
        Ok(())
    })
}

/// A retrieval corpus (train split of a JSONL file).
pub struct CgCorpus {
    index: RetrievalIndex,
}

/// Loads the train split of a JSONL corpus.
///
/// # Safety
/// `path` must be NUL-terminated; `out_corpus` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cg_corpus_load(path: *const c_char, out_corpus: *mut *mut CgCorpus) -> CgStatus {
    guard(|| {
        let slot = out(out_corpus, "out_corpus")?;
        *slot = ptr::null_mut();
        let loaded = load_corpus(Path::new(text(path, "path")?), CorpusRole::Retrieval)
            .map_err(|e| Failure::new(CgStatus::CorpusError, e.to_string()))?;
        let corpus = loaded.corpus.with_split(Split::Train);
        *slot = Box::into_raw(Box::new(CgCorpus {
            index: RetrievalIndex::build(&corpus),
        }));
        Ok(())
    })
}

/// Number of pairs in the corpus; 0 for NULL.
///
/// # Safety
/// `corpus` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cg_corpus_len(corpus: *const CgCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.index.len())
}

/// Top-`k` token-similarity matches of `intent` for `query_code`.
///
/// Writes up to `capacity` corpus indices and scores, best first, and the
/// count to `out_written`.
///
/// # Safety
/// `corpus` must be a live handle; `out_indices` and `out_scores` must hold `capacity` elements.
#[no_mangle]
pub unsafe extern "C" fn cg_corpus_retrieve(
    corpus: *const CgCorpus,
    query_code: *const c_char,
    intent_name: *const c_char,
    k: usize,
    out_indices: *mut usize,
    out_scores: *mut f64,
    capacity: usize,
    out_written: *mut usize,
) -> CgStatus {
    guard(|| {
        let c = corpus
            .as_ref()
            .ok_or_else(|| Failure::new(CgStatus::NullArgument, "`corpus` is NULL"))?;
        let written = out(out_written, "out_written")?;
        *written = 0;
        let hits = c
            .index
            .retrieve_top_k(
                text(query_code, "query_code")?,
                intent(text(intent_name, "intent")?)?,
                Similarity::Token,
                k,
            )
            .map_err(|e| Failure::new(CgStatus::InvalidArgument, e.to_string()))?;
        if hits.len() > capacity {
            return Err(Failure::new(
                CgStatus::BufferTooSmall,
                format!("{} results do not fit in {capacity}", hits.len()),
            ));
        }
        if !hits.is_empty() && (out_indices.is_null() || out_scores.is_null()) {
            return Err(Failure::new(CgStatus::NullArgument, "output buffers are NULL"));
        }
        for (i, hit) in hits.iter().enumerate() {
            *out_indices.add(i) = hit.corpus_index;
            *out_scores.add(i) = hit.sim_score;
        }
        *written = hits.len();
        Ok(())
    })
}

/// Id of the pair at `index`, as a new string.
///
/// # Safety
/// `corpus` must be a live handle; `out_id` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cg_corpus_pair_id(
    corpus: *const CgCorpus,
    index: usize,
    out_id: *mut *mut c_char,
) -> CgStatus {
    guard(|| {
        let c = corpus
            .as_ref()
            .ok_or_else(|| Failure::new(CgStatus::NullArgument, "`corpus` is NULL"))?;
        let slot = out(out_id, "out_id")?;
        let pair = c
            .index
            .pairs()
            .get(index)
            .ok_or_else(|| Failure::new(CgStatus::OutOfRange, format!("index {index} >= {}", c.index.len())))?;
        *slot = to_c(pair.id.clone());
        Ok(())
    })
}

/// # Safety
/// `corpus` must be NULL or a handle from [`cg_corpus_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cg_corpus_free(corpus: *mut CgCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Accumulates demonstrations for one intent, then renders prompts.
pub struct CgPromptBuilder {
    intent: IntentCategory,
    demos: Vec<Demonstration>,
}

/// # Safety
/// `intent_name` must be NUL-terminated; `out_builder` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cg_prompt_builder_new(
    intent_name: *const c_char,
    out_builder: *mut *mut CgPromptBuilder,
) -> CgStatus {
    guard(|| {
        let slot = out(out_builder, "out_builder")?;
        *slot = ptr::null_mut();
        let intent = intent(text(intent_name, "intent")?)?;
        *slot = Box::into_raw(Box::new(CgPromptBuilder {
            intent,
            demos: Vec::new(),
        }));
        Ok(())
    })
}

/// Appends a demonstration. `important` holds statement indices (0-based, one statement per non-brace line).
///
/// # Safety
/// `builder` must be live; `important` must hold `important_len` elements.
#[no_mangle]
pub unsafe extern "C" fn cg_prompt_builder_add_example(
    builder: *mut CgPromptBuilder,
    code: *const c_char,
    comment: *const c_char,
    important: *const usize,
    important_len: usize,
) -> CgStatus {
    guard(|| {
        let b = out(builder, "builder")?;
        let code = text(code, "code")?;
        let statements = segment_statements(code);
        let indices = slice(important, important_len, "important")?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= statements.len()) {
            return Err(Failure::new(
                CgStatus::OutOfRange,
                format!("statement {bad} >= {}", statements.len()),
            ));
        }
        b.demos.push(Demonstration {
            pair: CodeCommentPair {
                id: format!("example-{}", b.demos.len() + 1),
                code: code.to_string(),
                comment: text(comment, "comment")?.to_string(),
                intent: b.intent,
                split: Split::Train,
            },
            statements,
            important: indices
                .iter()
                .map(|&index| ImportantStatement { index, score: 0.0 })
                .collect(),
        });
        Ok(())
    })
}

/// Renders the prompt for `target_code` with every added demonstration.
///
/// # Safety
/// `builder` must be live; `out_prompt` must be writable. Free the result with [`cg_string_free`].
#[no_mangle]
pub unsafe extern "C" fn cg_prompt_builder_render(
    builder: *const CgPromptBuilder,
    target_code: *const c_char,
    out_prompt: *mut *mut c_char,
) -> CgStatus {
    guard(|| {
        let b = builder
            .as_ref()
            .ok_or_else(|| Failure::new(CgStatus::NullArgument, "`builder` is NULL"))?;
        let slot = out(out_prompt, "out_prompt")?;
        *slot = ptr::null_mut();
        let p = build_prompt(text(target_code, "target_code")?, b.intent, &b.demos, b.demos.len())
            .map_err(|e| Failure::new(CgStatus::InvalidArgument, e.to_string()))?;
        *slot = to_c(p.rendered);
        Ok(())
    })
}

/// # Safety
/// `builder` must be NULL or a handle from [`cg_prompt_builder_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cg_prompt_builder_free(builder: *mut CgPromptBuilder) {
    if !builder.is_null() {
        drop(Box::from_raw(builder));
    }
}

/// Important statements from a raw attention matrix.
///
/// `matrix` is row-major with side `comment_len + 1 + code_len`;
/// `code_token_statement` has `code_len` entries below `statement_count`.
/// Statement indices are written best first.
///
/// # Safety
/// Buffers must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn cg_extract_important(
    matrix: *const f64,
    comment_len: usize,
    code_len: usize,
    code_token_statement: *const usize,
    statement_count: usize,
    fraction: f64,
    min_statements: usize,
    out_indices: *mut usize,
    capacity: usize,
    out_written: *mut usize,
) -> CgStatus {
    guard(|| {
        let written = out(out_written, "out_written")?;
        *written = 0;
        let side = comment_len + 1 + code_len;
        let data = slice(matrix, side * side, "matrix")?;
        let rows: Vec<Vec<f64>> = data.chunks(side).map(<[f64]>::to_vec).collect();
        let bundle = AttentionBundle {
            matrix: Matrix::from_rows(&rows).expect("equal chunks"),
            comment_len,
            code_len,
            code_token_statement: slice(code_token_statement, code_len, "code_token_statement")?.to_vec(),
        };
        // Only the statement count matters to extraction.
        let statements = StatementList {
            statements: (0..statement_count)
                .map(|index| Statement {
                    index,
                    text: String::new(),
                    line: index,
                    span: 0..0,
                    token_spans: Vec::new(),
                })
                .collect(),
        };
        let policy = ExtractionPolicy {
            fraction,
            min: min_statements,
            ..ExtractionPolicy::default()
        };
        let top = extract_important(&bundle, &statements, &policy)
            .map_err(|e| Failure::new(CgStatus::InvalidArgument, e.to_string()))?;
        if top.len() > capacity {
            return Err(Failure::new(
                CgStatus::BufferTooSmall,
                format!("{} statements do not fit in {capacity}", top.len()),
            ));
        }
        if out_indices.is_null() {
            return Err(Failure::new(CgStatus::NullArgument, "`out_indices` is NULL"));
        }
        for (i, s) in top.iter().enumerate() {
            *out_indices.add(i) = s.index;
        }
        *written = top.len();
        Ok(())
    })
}

/// Extracts the comment section of a model response.
///
/// # Safety
/// `raw` must be NUL-terminated; `out_comment` must be writable. Free the result with [`cg_string_free`].
#[no_mangle]
pub unsafe extern "C" fn cg_parse_response(raw: *const c_char, out_comment: *mut *mut c_char) -> CgStatus {
    guard(|| {
        let slot = out(out_comment, "out_comment")?;
        *slot = ptr::null_mut();
        let parsed =
            parse_response(text(raw, "raw")?).map_err(|e| Failure::new(CgStatus::ParseError, e.to_string()))?;
        *slot = to_c(parsed.comment);
        Ok(())
    })
}
