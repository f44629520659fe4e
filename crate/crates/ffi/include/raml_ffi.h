#ifndef RAML_FFI_H
#define RAML_FFI_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RamlLengthMode {
  RAML_LENGTH_MODE_FIXED = 0,
  RAML_LENGTH_MODE_UP_TO = 1,
} RamlLengthMode;

typedef enum RamlReward {
  RAML_REWARD_NEG_HAMMING = 0,
  RAML_REWARD_NEG_EDIT = 1,
} RamlReward;

/**
 * Status codes shared by every entry point.
 */
typedef enum RamlStatus {
  RAML_STATUS_OK = 0,
  RAML_STATUS_NULL_POINTER = 1,
  RAML_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Output buffer too small; the required length is still reported.
   */
  RAML_STATUS_BUFFER_TOO_SMALL = 3,
  RAML_STATUS_OUT_OF_RANGE = 4,
  RAML_STATUS_NUMERIC = 5,
  RAML_STATUS_PANIC = 6,
} RamlStatus;

/**
 * Weighting of the edit-count histogram.
 */
typedef enum RamlWeightMode {
  RAML_WEIGHT_MODE_AS_WRITTEN = 0,
  RAML_WEIGHT_MODE_FIGURE1 = 1,
} RamlWeightMode;

/**
 * Stratified edit sampler around a fixed target.
 */
typedef struct RamlEditSampler RamlEditSampler;

/**
 * Exact payoff distribution over an enumerated output space.
 */
typedef struct RamlPayoffTable RamlPayoffTable;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` as a
 * NUL-terminated string, truncating to `capacity`. Returns the full message
 * length without the terminator.
 *
 * # Safety
 * `buf` must be null or valid for `capacity` bytes.
 */
size_t raml_last_error_message(char *buf, size_t capacity);

/**
 * Levenshtein distance between two token sequences.
 *
 * # Safety
 * `a` and `b` must be valid for their lengths; `out` must be writable.
 */
enum RamlStatus raml_edit_distance(const uint32_t *a,
                                   size_t a_len,
                                   const uint32_t *b,
                                   size_t b_len,
                                   size_t *out);

/**
 * Hamming distance; the sequences must have equal length.
 *
 * # Safety
 * `a` and `b` must be valid for `len` elements; `out` must be writable.
 */
enum RamlStatus raml_hamming_distance(const uint32_t *a,
                                      const uint32_t *b,
                                      size_t len,
                                      size_t *out);

/**
 * Natural log of the edit-ball count `c(e, m)` over `v` symbols.
 *
 * # Safety
 * `out` must be writable.
 */
enum RamlStatus raml_log_edit_count(size_t e, size_t m, size_t v, double *out);

/**
 * Normalized edit-count weights for `e = 0..=2m`, written to `out`
 * (`2m + 1` values).
 *
 * # Safety
 * `out` must be valid for `capacity` doubles; `out_len` must be writable.
 */
enum RamlStatus raml_edit_weights(size_t m,
                                  size_t v,
                                  double tau,
                                  enum RamlWeightMode mode,
                                  double *out,
                                  size_t capacity,
                                  size_t *out_len);

/**
 * `kl(p‖q)` for two interior points of the simplex of dimension `dim`.
 *
 * # Safety
 * `p` and `q` must be valid for `dim` doubles; `out` must be writable.
 */
enum RamlStatus raml_kl(const double *p, const double *q, size_t dim, double *out);

/**
 * Builds an edit sampler for `target` over `vocab_size` symbols.
 *
 * # Safety
 * `target` must be valid for `len` tokens; `out` must be writable. The
 * handle must be released with [`raml_edit_sampler_free`].
 */
enum RamlStatus raml_edit_sampler_new(const uint32_t *target,
                                      size_t len,
                                      size_t vocab_size,
                                      double tau,
                                      enum RamlWeightMode mode,
                                      struct RamlEditSampler **out);

/**
 * Draws one output from the stream `(master_seed, trial_index)`. The drawn
 * edit count goes to `out_edits` and the tokens to `out`.
 *
 * # Safety
 * `sampler` must come from [`raml_edit_sampler_new`]; `out` must be valid
 * for `capacity` tokens; `out_len` and `out_edits` must be writable.
 */
enum RamlStatus raml_edit_sampler_draw(const struct RamlEditSampler *sampler,
                                       uint64_t master_seed,
                                       uint64_t trial_index,
                                       uint32_t *out,
                                       size_t capacity,
                                       size_t *out_len,
                                       size_t *out_edits);

/**
 * Releases a sampler. Null is accepted.
 *
 * # Safety
 * `sampler` must be null or come from [`raml_edit_sampler_new`] and not be
 * used afterwards.
 */
void raml_edit_sampler_free(struct RamlEditSampler *sampler);

/**
 * Enumerates the payoff distribution around `target` over all outputs of
 * length `len` (or up to `len`).
 *
 * # Safety
 * `target` must be valid for `target_len` tokens; `out` must be writable.
 * The handle must be released with [`raml_payoff_table_free`].
 */
enum RamlStatus raml_payoff_table_new(const uint32_t *target,
                                      size_t target_len,
                                      size_t vocab_size,
                                      double tau,
                                      enum RamlReward reward,
                                      size_t len,
                                      enum RamlLengthMode len_mode,
                                      struct RamlPayoffTable **out);

/**
 * Number of outputs in the table.
 *
 * # Safety
 * `table` must come from [`raml_payoff_table_new`]; `out` must be writable.
 */
enum RamlStatus raml_payoff_table_size(const struct RamlPayoffTable *table, size_t *out);

/**
 * Output `index` in enumeration order and its probability.
 *
 * # Safety
 * `table` must come from [`raml_payoff_table_new`]; `out` must be valid for
 * `capacity` tokens; `out_len` and `out_prob` must be writable.
 */
enum RamlStatus raml_payoff_table_entry(const struct RamlPayoffTable *table,
                                        size_t index,
                                        uint32_t *out,
                                        size_t capacity,
                                        size_t *out_len,
                                        double *out_prob);

/**
 * Probability of an arbitrary sequence (zero outside the table).
 *
 * # Safety
 * `table` must come from [`raml_payoff_table_new`]; `seq` must be valid for
 * `len` tokens; `out` must be writable.
 */
enum RamlStatus raml_payoff_table_prob(const struct RamlPayoffTable *table,
                                       const uint32_t *seq,
                                       size_t len,
                                       double *out);

/**
 * Releases a payoff table. Null is accepted.
 *
 * # Safety
 * `table` must be null or come from [`raml_payoff_table_new`] and not be
 * used afterwards.
 */
void raml_payoff_table_free(struct RamlPayoffTable *table);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RAML_FFI_H */
