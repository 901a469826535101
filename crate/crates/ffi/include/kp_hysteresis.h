#ifndef KP_HYSTERESIS_H
#define KP_HYSTERESIS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum KphStatus {
  KPH_STATUS_OK = 0,
  KPH_STATUS_NULL_POINTER = 1,
  KPH_STATUS_INVALID_ARGUMENT = 2,
  KPH_STATUS_INVALID_CURVE = 3,
  KPH_STATUS_UNINITIALIZED = 4,
  KPH_STATUS_UNBOUNDED_RANGE = 5,
  KPH_STATUS_DIVERGENCE = 6,
  KPH_STATUS_NON_CONVERGENCE = 7,
  KPH_STATUS_CONFIG = 8,
  KPH_STATUS_BUFFER_TOO_SMALL = 9,
  KPH_STATUS_PANIC = 10,
} KphStatus;

/**
 * Trace column selector for [`kph_trace_column`].
 */
typedef enum KphColumn {
  KPH_COLUMN_T = 0,
  KPH_COLUMN_R = 1,
  KPH_COLUMN_U = 2,
  KPH_COLUMN_W = 3,
  KPH_COLUMN_E = 4,
} KphColumn;

/**
 * Hysteresis model with its element memories.
 */
typedef struct KphModel KphModel;

/**
 * Recorded simulation.
 */
typedef struct KphTrace KphTrace;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next call into the library on this thread.
 */
const char *kph_last_error(void);

/**
 * The three-element model with output range [0, 4].
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for a handle.
 */
enum KphStatus kph_model_default(struct KphModel **out);

/**
 * Parallel sum of `count` saturated plays: element `i` has weight
 * `weights[i]` and boundary curves `clamp(u ± rhos[i], sat_lo[i], sat_hi[i])`.
 * Infinite limits disable saturation on that side.
 *
 * # Safety
 * The four arrays must hold `count` values each; `out` must be writable.
 */
enum KphStatus kph_model_new_saturated(size_t count,
                                       const double *weights,
                                       const double *rhos,
                                       const double *sat_lo,
                                       const double *sat_hi,
                                       double offset,
                                       struct KphModel **out);

/**
 * Initializes the memories at `u0`. With `memories == NULL` every element
 * starts from zero clipped into its band; otherwise `count` must equal the
 * element count. The initial output is written to `out_w`.
 *
 * # Safety
 * `model` must come from this library; `memories` must hold `count` values.
 */
enum KphStatus kph_model_init(struct KphModel *model,
                              double u0,
                              const double *memories,
                              size_t count,
                              double *out_w);

/**
 * Feeds one input sample and writes `H(u)` to `out_w`.
 *
 * # Safety
 * `model` must come from this library and `out_w` be writable.
 */
enum KphStatus kph_model_update(struct KphModel *model, double u, double *out_w);

/**
 * Bounds on the output over all trajectories.
 *
 * # Safety
 * All pointers must be valid.
 */
enum KphStatus kph_model_output_range(const struct KphModel *model, double *lo, double *hi);

/**
 * Equilibria at `level`: largest `u1` on the left envelope and smallest
 * `u2` on the right one. Absent values are flagged with `*has_u* = 0`.
 *
 * # Safety
 * All pointers must be valid.
 */
enum KphStatus kph_model_equilibria(const struct KphModel *model,
                                    double level,
                                    double *u1,
                                    int32_t *has_u1,
                                    double *u2,
                                    int32_t *has_u2);

/**
 * # Safety
 * `model` must come from this library and not be used afterwards. Null is ignored.
 */
void kph_model_free(struct KphModel *model);

/**
 * Runs the experiment described by the TOML text `config` at gain `gain`.
 *
 * # Safety
 * `config` must be a nul-terminated string and `out` writable.
 */
enum KphStatus kph_simulate_toml(const char *config, double gain, struct KphTrace **out);

/**
 * Number of recorded rows, or 0 for a null handle.
 *
 * # Safety
 * `trace` must come from this library or be null.
 */
size_t kph_trace_len(const struct KphTrace *trace);

/**
 * Copies one column into `buf`, which must hold at least `kph_trace_len` values.
 *
 * # Safety
 * `buf` must be writable for `buf_len` values.
 */
enum KphStatus kph_trace_column(const struct KphTrace *trace,
                                enum KphColumn column,
                                double *buf,
                                size_t buf_len);

/**
 * # Safety
 * `trace` must come from this library and not be used afterwards. Null is ignored.
 */
void kph_trace_free(struct KphTrace *trace);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KP_HYSTERESIS_H */
