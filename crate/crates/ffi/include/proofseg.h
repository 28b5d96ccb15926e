#ifndef PROOFSEG_H
#define PROOFSEG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum PsStatus {
  PS_STATUS_OK = 0,
  PS_STATUS_NULL_ARGUMENT = 1,
  PS_STATUS_INVALID_UTF8 = 2,
  PS_STATUS_PARSE_ERROR = 3,
  PS_STATUS_INVALID_ARGUMENT = 4,
  PS_STATUS_IO_ERROR = 5,
  PS_STATUS_PANIC = 6,
} PsStatus;

/**
 * Tactic blocks of a parsed proof script.
 */
typedef struct PsScript PsScript;

/**
 * A boundary strategy bound to a tokenizer.
 */
typedef struct PsSegmenter PsSegmenter;

/**
 * One simulated environment session.
 */
typedef struct PsSimSession PsSimSession;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next call into this library on the same thread.
 */
const char *ps_last_error(void);

/**
 * Library version as a static string.
 */
const char *ps_version(void);

/**
 * Releases a string returned by this library. Null is ignored.
 */
void ps_string_free(char *s);

/**
 * Number of open goals in a pretty-printed proof state.
 */
enum PsStatus ps_count_open_goals(const char *pretty, size_t *out);

/**
 * Splits a proof script into tactic blocks.
 */
enum PsStatus ps_script_parse(const char *script, struct PsScript **out);

/**
 * Number of blocks in a parsed script; 0 for null.
 */
size_t ps_script_len(const struct PsScript *script);

/**
 * Block `index`, borrowed from the script; null when out of range.
 */
const char *ps_script_block(const struct PsScript *script, size_t index);

void ps_script_free(struct PsScript *script);

/**
 * Normalized token-level edit distance between two texts, in [0, 1].
 * `tokenizer` is `whitespace`, `map:<path>`, or null for whitespace.
 */
enum PsStatus ps_edit_distance(const char *a, const char *b, const char *tokenizer, double *out);

/**
 * Creates a segmenter. `strategy` is one of `step`, `whole`,
 * `goal_change`, `token_threshold`, `tactic_distance`, `state_distance`;
 * `threshold` is read only by the last three.
 */
enum PsStatus ps_segmenter_new(const char *strategy,
                               double threshold,
                               const char *tokenizer,
                               struct PsSegmenter **out);

/**
 * Segments one trajectory record (JSON) into instruction records, one
 * JSON object per line.
 */
enum PsStatus ps_segment(const struct PsSegmenter *segmenter,
                         const char *trajectory_json,
                         char **out);

void ps_segmenter_free(struct PsSegmenter *segmenter);

/**
 * Opens a simulated environment session over a tree spec file.
 */
enum PsStatus ps_sim_open(const char *tree_path, struct PsSimSession **out);

/**
 * Answers one environment protocol request line. Protocol-level errors
 * are reported inside the response, not through the status code.
 */
enum PsStatus ps_sim_request(struct PsSimSession *session, const char *request, char **out);

void ps_sim_free(struct PsSimSession *session);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PROOFSEG_H */
