#ifndef VDIB_H
#define VDIB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum VdibStatus {
  VDIB_STATUS_OK = 0,
  VDIB_STATUS_NULL_POINTER = 1,
  VDIB_STATUS_INVALID_UTF8 = 2,
  VDIB_STATUS_CONFIG = 3,
  VDIB_STATUS_SHAPE = 4,
  VDIB_STATUS_PARSE = 5,
  VDIB_STATUS_INVALID = 6,
  VDIB_STATUS_STATE = 7,
  VDIB_STATUS_IO = 8,
  VDIB_STATUS_SERDE = 9,
  VDIB_STATUS_CHECK_FAILED = 10,
  VDIB_STATUS_PANIC = 11,
} VdibStatus;

/**
 * A model with its experiment config and training state.
 */
typedef struct VdibHandle VdibHandle;

typedef struct VdibEpisodeStats {
  double ell_dec;
  double ell_enc;
  double spike_rate_readout;
  double spike_rate_hidden;
  double mse;
} VdibEpisodeStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *vdib_last_error(void);

/**
 * Builds a freshly initialised model from a JSON experiment config.
 *
 * # Safety
 * `config_json` must be a nul-terminated string; `out` must be writable.
 */
enum VdibStatus vdib_model_new(const char *config_json, struct VdibHandle **out);

/**
 * Loads a checkpoint written by the library or by [`vdib_model_save`].
 *
 * # Safety
 * `path` must be a nul-terminated string; `out` must be writable.
 */
enum VdibStatus vdib_model_load(const char *path, struct VdibHandle **out);

/**
 * # Safety
 * `handle` must come from this library and not be used afterwards; null is ignored.
 */
void vdib_model_free(struct VdibHandle *handle);

/**
 * # Safety
 * `handle` must be live; `path` nul-terminated.
 */
enum VdibStatus vdib_model_save(struct VdibHandle *handle, const char *path);

/**
 * Input, readout and decoder-output widths, and the decoder window.
 *
 * # Safety
 * `handle` must be live; each output pointer may be null.
 */
enum VdibStatus vdib_model_dims(struct VdibHandle *handle,
                                size_t *n_input,
                                size_t *n_readout,
                                size_t *n_out,
                                size_t *window);

/**
 * Runs one training sequence. `x` holds `steps × n_input` spikes,
 * `targets` holds `steps × n_out` values, and `defined` (nullable) marks
 * the timesteps whose target is used; null means every step.
 *
 * # Safety
 * Arrays must be readable for the stated lengths; `handle` must be live.
 */
enum VdibStatus vdib_model_train_sample(struct VdibHandle *handle,
                                        const uint8_t *x,
                                        size_t steps,
                                        const double *targets,
                                        const uint8_t *defined,
                                        struct VdibEpisodeStats *stats);

/**
 * Samples a readout train for `x` (`steps × n_input`) into `y`
 * (`steps × n_readout`), from rest.
 *
 * # Safety
 * Arrays must be valid for the stated lengths; `handle` must be live.
 */
enum VdibStatus vdib_model_encode(struct VdibHandle *handle,
                                  const uint8_t *x,
                                  size_t steps,
                                  uint8_t *y);

/**
 * Log-probability of readout train `y` given input `x`, from rest.
 *
 * # Safety
 * Arrays must be readable for the stated lengths; `handle` must be live.
 */
enum VdibStatus vdib_model_sequence_log_prob(struct VdibHandle *handle,
                                             const uint8_t *x,
                                             const uint8_t *y,
                                             size_t steps,
                                             double *out);

/**
 * Gradient and enumeration checks. `scope`: 0 all, 1 decoder, 2 readout,
 * 3 oracle. Returns [`VdibStatus::CheckFailed`] if any check fails.
 */
enum VdibStatus vdib_gradcheck(uint32_t scope, uint64_t seed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VDIB_H */
