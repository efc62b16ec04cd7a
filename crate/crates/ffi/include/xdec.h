#ifndef XDEC_H
#define XDEC_H

/* Generated by cbindgen from xdec-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef struct XdecModel XdecModel;
typedef struct XdecState XdecState;

// Call outcome. Mirrors the CLI convention: input/format problems map to
// `InputFormat`, search and state failures to `SearchFailure`.
typedef enum XdecStatus {
  XdecStatus_Ok = 0,
  XdecStatus_InvalidArgument = 1,
  XdecStatus_InputFormat = 2,
  XdecStatus_SearchFailure = 3,
  XdecStatus_Internal = 4,
} XdecStatus;

// Message describing the most recent failure on this thread. The pointer
// stays valid until the next failing call on the same thread.
const char *xdec_last_error(void);

// Library version string (static storage).
const char *xdec_version(void);

// Load a weights container from `path`.
//
// # Safety
// `path` must be a valid NUL-terminated string and `out` a valid pointer.
enum XdecStatus xdec_model_load(const char *path, XdecModel **out);

// Fabricate a deterministic model (for tests and binding smoke checks).
//
// # Safety
// `out` must be a valid pointer.
enum XdecStatus xdec_model_generate(uint64_t seed,
                                    uintptr_t n_layers,
                                    uintptr_t d_model,
                                    uintptr_t n_query_heads,
                                    uintptr_t ffn_expansion,
                                    uintptr_t vocab_size,
                                    uintptr_t pos_bias_hidden,
                                    XdecModel **out);

// # Safety
// `model` must come from a model constructor and not be freed twice.
void xdec_model_free(XdecModel *model);

// Total LM vocabulary (content + BOS + SEP); zero for a null handle.
//
// # Safety
// `model` must be a live model handle or null.
uintptr_t xdec_model_vocab_size(const XdecModel *model);

// Content (non-special) vocabulary size; zero for a null handle.
//
// # Safety
// `model` must be a live model handle or null.
uintptr_t xdec_model_content_size(const XdecModel *model);

// Fresh BOS-seeded history state.
//
// # Safety
// `model` must be a live model handle; `out` a valid pointer.
enum XdecStatus xdec_state_new(const XdecModel *model, XdecState **out);

// Deep copy; branches never interfere.
//
// # Safety
// `state` must be a live state handle; `out` a valid pointer.
enum XdecStatus xdec_state_clone(const XdecState *state, XdecState **out);

// # Safety
// `state` must come from a state constructor and not be freed twice.
void xdec_state_free(XdecState *state);

// Number of cached tokens; zero for a null handle.
//
// # Safety
// `state` must be a live state handle or null.
uintptr_t xdec_state_len(const XdecState *state);

// Feed `len` tokens through the model, updating the state in place.
//
// # Safety
// `model` and `state` must be live handles; `tokens` must point to `len`
// readable u32 values.
enum XdecStatus xdec_state_advance(const XdecModel *model,
                                   XdecState *state,
                                   const uint32_t *tokens,
                                   uintptr_t len);

// Append the utterance separator and mark the boundary.
//
// # Safety
// `model` and `state` must be live handles.
enum XdecStatus xdec_state_end_utterance(const XdecModel *model, XdecState *state);

// Truncate the cached history to `max_tokens`, keeping the BOS anchor.
//
// # Safety
// `state` must be a live state handle.
enum XdecStatus xdec_state_truncate(XdecState *state, uintptr_t max_tokens);

// Decode one posterior container with shallow fusion. `context` may be
// null for an independent utterance. On success `*out_tokens` holds
// `*out_len` token ids (free with [`xdec_tokens_free`]) and `*out_score`
// the combined log score of the best hypothesis.
//
// # Safety
// Pointer arguments must be valid; `posterior_path` NUL-terminated.
enum XdecStatus xdec_decode_posterior_file(const XdecModel *model,
                                           const char *posterior_path,
                                           double alpha,
                                           double beta,
                                           double cutoff,
                                           uintptr_t beam_width,
                                           const XdecState *context,
                                           uint32_t **out_tokens,
                                           uintptr_t *out_len,
                                           double *out_score);

// Release a token buffer returned by [`xdec_decode_posterior_file`].
//
// # Safety
// `tokens`/`len` must match a previous successful decode exactly.
void xdec_tokens_free(uint32_t *tokens, uintptr_t len);

// Render content tokens as text (free with [`xdec_string_free`]).
//
// # Safety
// `model` must be live; `tokens` must point to `len` readable u32 values;
// `out` must be valid.
enum XdecStatus xdec_detokenize(const XdecModel *model,
                                const uint32_t *tokens,
                                uintptr_t len,
                                char **out);

// # Safety
// `s` must come from this library and not be freed twice.
void xdec_string_free(char *s);

// Corpus word error rate between newline-separated hypothesis and
// reference texts.
//
// # Safety
// `hyp` and `reference` must be NUL-terminated strings; `out` valid.
enum XdecStatus xdec_wer(const char *hyp, const char *reference, double *out);

#endif  /* XDEC_H */
