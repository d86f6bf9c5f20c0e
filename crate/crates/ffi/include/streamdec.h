/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef STREAMDEC_H
#define STREAMDEC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum StreamdecStatus {
  STREAMDEC_STATUS_OK = 0,
  STREAMDEC_STATUS_NULL_POINTER = 1,
  // Parameters or configuration rejected.
  STREAMDEC_STATUS_INVALID_ARGUMENT = 2,
  // A denoiser or script could not be built.
  STREAMDEC_STATUS_INVALID_DENOISER = 3,
  // Decoding failed part way.
  STREAMDEC_STATUS_DECODE_FAILED = 4,
  // Caller buffer too small; the required length was written back.
  STREAMDEC_STATUS_BUFFER_TOO_SMALL = 5,
  STREAMDEC_STATUS_UTF8 = 6,
  STREAMDEC_STATUS_PANIC = 7,
} StreamdecStatus;

typedef enum StreamdecScheduler {
  STREAMDEC_SCHEDULER_STREAMING = 0,
  STREAMDEC_SCHEDULER_FIXED_THRESHOLD = 1,
  STREAMDEC_SCHEDULER_PREFIX_CACHE = 2,
  STREAMDEC_SCHEDULER_VANILLA = 3,
} StreamdecScheduler;

// Opaque denoiser handle.
typedef struct StreamdecDenoiser StreamdecDenoiser;

// Opaque decode result handle.
typedef struct StreamdecResult StreamdecResult;

// Decoding parameters; mirrors the engine's decode config.
typedef struct StreamdecConfig {
  size_t gen_len;
  size_t block_size;
  size_t window;
  double tau0;
  double alpha;
  bool early_exit;
  bool keep_trailing;
  size_t steps_per_block;
  enum StreamdecScheduler scheduler;
  uint64_t seed;
} StreamdecConfig;

// Whole-run cost totals.
typedef struct StreamdecCounters {
  uint64_t forward_calls;
  uint64_t query_tokens;
  uint64_t key_tokens;
  uint64_t attention_pairs;
  uint64_t cache_hits;
  uint64_t cache_misses;
  uint64_t non_eos_tokens;
} StreamdecCounters;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the most recent failure on this thread, or NULL. The pointer
// stays valid until the next failing call on the same thread.
const char *streamdec_last_error(void);

// Engine version as a static NUL-terminated string.
const char *streamdec_version(void);

// Writes the default decode parameters to `out`.
//
// # Safety
// `out` must be NULL or point to writable memory for one `StreamdecConfig`.
enum StreamdecStatus streamdec_config_default(struct StreamdecConfig *out);

// `tau0 * (1 - alpha * (1 - r_mask))`, with range checks.
//
// # Safety
// `out` must be NULL or point to a writable `double`.
enum StreamdecStatus streamdec_adaptive_threshold(double tau0,
                                                  double alpha,
                                                  double r_mask,
                                                  double *out);

// Deterministic local oracle with locality radius `radius`.
//
// # Safety
// `out` must be NULL or point to writable storage for one handle pointer.
enum StreamdecStatus streamdec_denoiser_local_markov(size_t radius,
                                                     size_t vocab,
                                                     uint64_t seed,
                                                     struct StreamdecDenoiser **out);

// One-layer seeded attention model.
//
// # Safety
// `out` must be NULL or point to writable storage for one handle pointer.
enum StreamdecStatus streamdec_denoiser_toy_transformer(size_t embed_dim,
                                                        size_t vocab,
                                                        uint64_t seed,
                                                        struct StreamdecDenoiser **out);

// Scripted oracle from its JSON text. `vocab == 0` infers the vocabulary
// from the script.
//
// # Safety
// `script_json` must be NULL or a valid NUL-terminated string; `out` must be
// NULL or point to writable storage for one handle pointer.
enum StreamdecStatus streamdec_denoiser_scripted(const char *script_json,
                                                 size_t vocab,
                                                 struct StreamdecDenoiser **out);

// # Safety
// `d` must be NULL or a handle from a `streamdec_denoiser_*` constructor
// that has not been freed.
void streamdec_denoiser_free(struct StreamdecDenoiser *d);

// Decodes `gen_len` tokens after the prompt.
//
// # Safety
// `denoiser` must be a live handle, `prompt` must point to `prompt_len`
// readable `uint32_t`, `config` to one readable `StreamdecConfig` and `out`
// to writable storage for one handle pointer.
enum StreamdecStatus streamdec_decode(const struct StreamdecDenoiser *denoiser,
                                      const uint32_t *prompt,
                                      size_t prompt_len,
                                      const struct StreamdecConfig *config,
                                      struct StreamdecResult **out);

// Number of generated slots in the result (NULL gives 0).
//
// # Safety
// `r` must be NULL or a live result handle.
size_t streamdec_result_len(const struct StreamdecResult *r);

// Copies the generated token ids into `buf`. `written` receives the number
// of ids copied, or the required capacity when `cap` is too small.
//
// # Safety
// `r` must be a live result handle, `buf` must point to `cap` writable
// `uint32_t` and `written` to a writable `size_t`.
enum StreamdecStatus streamdec_result_tokens(const struct StreamdecResult *r,
                                             uint32_t *buf,
                                             size_t cap,
                                             size_t *written);

// Block after which decoding stopped early, or -1.
//
// # Safety
// `r` must be NULL or a live result handle.
int64_t streamdec_result_exited_early_at(const struct StreamdecResult *r);

// Number of decode steps taken.
//
// # Safety
// `r` must be NULL or a live result handle.
size_t streamdec_result_steps(const struct StreamdecResult *r);

// # Safety
// `r` must be a live result handle and `out` writable.
enum StreamdecStatus streamdec_result_counters(const struct StreamdecResult *r,
                                               struct StreamdecCounters *out);

// Step trace as JSON lines. The string is owned by the result and lives
// until the result is freed; NULL on failure.
//
// # Safety
// `r` must be NULL or a live result handle not used concurrently.
const char *streamdec_result_trace_jsonl(struct StreamdecResult *r);

// # Safety
// `r` must be NULL or a live result handle from [`streamdec_decode`].
void streamdec_result_free(struct StreamdecResult *r);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STREAMDEC_H */
