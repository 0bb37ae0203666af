#ifndef DISFLUENCY_PARSER_H
#define DISFLUENCY_PARSER_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible function.
typedef enum DfpStatus {
  DFP_STATUS_OK = 0,
  DFP_STATUS_NULL_POINTER = 1,
  DFP_STATUS_INVALID_UTF8 = 2,
  DFP_STATUS_IO = 3,
  DFP_STATUS_CHECKPOINT = 4,
  DFP_STATUS_EMPTY_SENTENCE = 5,
  DFP_STATUS_MALFORMED_TREE = 6,
  DFP_STATUS_LABEL_SET_MISMATCH = 7,
  DFP_STATUS_EVALUATION = 8,
  DFP_STATUS_INTERNAL = 9,
} DfpStatus;

// Opaque handle to a loaded model.
typedef struct DfpModel DfpModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// The library version as a static NUL-terminated string.
const char *dfp_version(void);

// Message for the last failed call on this thread, or NULL. Valid until the
// next failing call on the same thread.
const char *dfp_last_error_message(void);

// Loads a checkpoint file into a new handle stored in `*out`.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum DfpStatus dfp_model_load(const char *path, struct DfpModel **out);

// Releases a handle from [`dfp_model_load`]. NULL is ignored.
//
// # Safety
// `model` must be NULL or a handle not yet freed.
void dfp_model_free(struct DfpModel *model);

// Number of span labels including the null label, or 0 for NULL.
//
// # Safety
// `model` must be NULL or a live handle.
size_t dfp_model_num_labels(const struct DfpModel *model);

// Parses a whitespace-tokenized sentence; `*out_tree` receives the
// bracketed tree (release with [`dfp_string_free`]).
//
// # Safety
// `model` must be a live handle, `sentence` NUL-terminated, `out_tree` writable.
enum DfpStatus dfp_parse(const struct DfpModel *model, const char *sentence, char **out_tree);

// Parses with the mean span scores of `count` members.
//
// # Safety
// `members` must point to `count` live handles; other pointers as for [`dfp_parse`].
enum DfpStatus dfp_ensemble_parse(const struct DfpModel *const *members,
                                  size_t count,
                                  const char *sentence,
                                  char **out_tree);

// Scores newline-separated predicted trees against gold trees; `*out_json`
// receives the full report as JSON.
//
// # Safety
// `gold` and `pred` must be NUL-terminated; `out_json` writable.
enum DfpStatus dfp_evaluate(const char *gold, const char *pred, char **out_json);

// Releases a string returned by this library. NULL is ignored.
//
// # Safety
// `s` must be NULL or a string from this library not yet freed.
void dfp_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DISFLUENCY_PARSER_H */
