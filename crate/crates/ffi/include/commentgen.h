#ifndef COMMENTGEN_H
#define COMMENTGEN_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum CgStatus {
  CG_STATUS_OK = 0,
  CG_STATUS_NULL_ARGUMENT = 1,
  CG_STATUS_INVALID_UTF8 = 2,
  CG_STATUS_INVALID_ARGUMENT = 3,
  CG_STATUS_CORPUS_ERROR = 4,
  CG_STATUS_OUT_OF_RANGE = 5,
  CG_STATUS_PARSE_ERROR = 6,
  CG_STATUS_BUFFER_TOO_SMALL = 7,
  CG_STATUS_PANIC = 99,
} CgStatus;

/**
 * A retrieval corpus (train split of a JSONL file).
 */
typedef struct CgCorpus CgCorpus;

/**
 * Accumulates demonstrations for one intent, then renders prompts.
 */
typedef struct CgPromptBuilder CgPromptBuilder;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or NULL. Valid until the next failing call on the same thread.
 */
const char *cg_last_error(void);

/**
 * Releases a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void cg_string_free(char *s);

/**
 * Smoothed sentence BLEU-4 of two raw texts.
 *
 * # Safety
 * `candidate` and `reference` must be NUL-terminated; `out_score` must be writable.
 */
enum CgStatus cg_bleu4(const char *candidate, const char *reference, double *out_score);

/**
 * METEOR (exact and stem stages) of two raw texts.
 *
 * # Safety
 * As for [`cg_bleu4`].
 */
enum CgStatus cg_meteor(const char *candidate, const char *reference, double *out_score);

/**
 * ROUGE-L F-measure of two raw texts. Pass `beta` <= 0 for the default of 1.2.
 *
 * # Safety
 * As for [`cg_bleu4`].
 */
enum CgStatus cg_rouge_l(const char *candidate,
                         const char *reference,
                         double beta,
                         double *out_score);

/**
 * Jaccard similarity of the sub-token sets of two code snippets.
 *
 * # Safety
 * `code_a` and `code_b` must be NUL-terminated; `out_score` must be writable.
 */
enum CgStatus cg_token_similarity(const char *code_a, const char *code_b, double *out_score);

/**
 * Loads the train split of a JSONL corpus.
 *
 * # Safety
 * `path` must be NUL-terminated; `out_corpus` must be writable.
 */
enum CgStatus cg_corpus_load(const char *path, struct CgCorpus **out_corpus);

/**
 * Number of pairs in the corpus; 0 for NULL.
 *
 * # Safety
 * `corpus` must be NULL or a live handle.
 */
size_t cg_corpus_len(const struct CgCorpus *corpus);

/**
 * Top-`k` token-similarity matches of `intent` for `query_code`.
 *
 * Writes up to `capacity` corpus indices and scores, best first, and the
 * count to `out_written`.
 *
 * # Safety
 * `corpus` must be a live handle; `out_indices` and `out_scores` must hold `capacity` elements.
 */
enum CgStatus cg_corpus_retrieve(const struct CgCorpus *corpus,
                                 const char *query_code,
                                 const char *intent_name,
                                 size_t k,
                                 size_t *out_indices,
                                 double *out_scores,
                                 size_t capacity,
                                 size_t *out_written);

/**
 * Id of the pair at `index`, as a new string.
 *
 * # Safety
 * `corpus` must be a live handle; `out_id` must be writable.
 */
enum CgStatus cg_corpus_pair_id(const struct CgCorpus *corpus, size_t index, char **out_id);

/**
 * # Safety
 * `corpus` must be NULL or a handle from [`cg_corpus_load`] not yet freed.
 */
void cg_corpus_free(struct CgCorpus *corpus);

/**
 * # Safety
 * `intent_name` must be NUL-terminated; `out_builder` must be writable.
 */
enum CgStatus cg_prompt_builder_new(const char *intent_name, struct CgPromptBuilder **out_builder);

/**
 * Appends a demonstration. `important` holds statement indices (0-based, one statement per non-brace line).
 *
 * # Safety
 * `builder` must be live; `important` must hold `important_len` elements.
 */
enum CgStatus cg_prompt_builder_add_example(struct CgPromptBuilder *builder,
                                            const char *code,
                                            const char *comment,
                                            const size_t *important,
                                            size_t important_len);

/**
 * Renders the prompt for `target_code` with every added demonstration.
 *
 * # Safety
 * `builder` must be live; `out_prompt` must be writable. Free the result with [`cg_string_free`].
 */
enum CgStatus cg_prompt_builder_render(const struct CgPromptBuilder *builder,
                                       const char *target_code,
                                       char **out_prompt);

/**
 * # Safety
 * `builder` must be NULL or a handle from [`cg_prompt_builder_new`] not yet freed.
 */
void cg_prompt_builder_free(struct CgPromptBuilder *builder);

/**
 * Important statements from a raw attention matrix.
 *
 * `matrix` is row-major with side `comment_len + 1 + code_len`;
 * `code_token_statement` has `code_len` entries below `statement_count`.
 * Statement indices are written best first.
 *
 * # Safety
 * Buffers must hold the stated number of elements.
 */
enum CgStatus cg_extract_important(const double *matrix,
                                   size_t comment_len,
                                   size_t code_len,
                                   const size_t *code_token_statement,
                                   size_t statement_count,
                                   double fraction,
                                   size_t min_statements,
                                   size_t *out_indices,
                                   size_t capacity,
                                   size_t *out_written);

/**
 * Extracts the comment section of a model response.
 *
 * # Safety
 * `raw` must be NUL-terminated; `out_comment` must be writable. Free the result with [`cg_string_free`].
 */
enum CgStatus cg_parse_response(const char *raw,
                                char **out_comment);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COMMENTGEN_H */
