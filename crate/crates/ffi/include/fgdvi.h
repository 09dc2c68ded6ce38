#ifndef FGDVI_H
#define FGDVI_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FgdviStatus {
  FGDVI_STATUS_OK = 0,
  FGDVI_STATUS_NULL_POINTER = 1,
  FGDVI_STATUS_INVALID_ARGUMENT = 2,
  FGDVI_STATUS_SHAPE = 3,
  FGDVI_STATUS_IO = 4,
  FGDVI_STATUS_NUMERIC = 5,
  FGDVI_STATUS_PANIC = 6,
} FgdviStatus;

typedef enum FgdviDenoiser {
  /**
   * Harmonic fill of the condition latents.
   */
  FGDVI_DENOISER_HEURISTIC = 0,
  /**
   * Exact clean latents supplied by the caller.
   */
  FGDVI_DENOISER_ORACLE = 1,
} FgdviDenoiser;

/**
 * Forward and backward flows between consecutive frames.
 */
typedef struct FgdviFlowSet FgdviFlowSet;

/**
 * Noise schedule.
 */
typedef struct FgdviSchedule FgdviSchedule;

/**
 * `N x C x H x W` tensor of doubles.
 */
typedef struct FgdviSequence FgdviSequence;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the next failing call.
 */
const char *fgdvi_last_error(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *fgdvi_version(void);

/**
 * Linear beta schedule with `steps` steps.
 *
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
enum FgdviStatus fgdvi_schedule_new_linear(size_t steps,
                                           double beta_min,
                                           double beta_max,
                                           struct FgdviSchedule **out);

/**
 * # Safety
 * `schedule` must be null or a handle not yet freed.
 */
void fgdvi_schedule_free(struct FgdviSchedule *schedule);

/**
 * Cumulative alpha at step `t` (`alpha_0 = 1`).
 *
 * # Safety
 * `schedule` must be a live handle and `out` writable.
 */
enum FgdviStatus fgdvi_schedule_alpha(const struct FgdviSchedule *schedule, size_t t, double *out);

/**
 * Creates a sequence, copying `n*c*h*w` doubles from `data`, or zero-filled when `data` is null.
 *
 * # Safety
 * `data` must be null or point to `n*c*h*w` doubles; `out` must be writable.
 */
enum FgdviStatus fgdvi_sequence_new(size_t n,
                                    size_t c,
                                    size_t h,
                                    size_t w,
                                    const double *data,
                                    struct FgdviSequence **out);

/**
 * # Safety
 * `seq` must be null or a handle not yet freed.
 */
void fgdvi_sequence_free(struct FgdviSequence *seq);

/**
 * Writes `[n, c, h, w]` into `shape`.
 *
 * # Safety
 * `seq` must be a live handle and `shape` must point to four writable `size_t`.
 */
enum FgdviStatus fgdvi_sequence_shape(const struct FgdviSequence *seq, size_t *shape);

/**
 * Copies the sequence into `buffer`, which must hold exactly `len` doubles.
 *
 * # Safety
 * `seq` must be a live handle and `buffer` must hold `len` writable doubles.
 */
enum FgdviStatus fgdvi_sequence_copy(const struct FgdviSequence *seq, double *buffer, size_t len);

/**
 * `sqrt(alpha_t) z0 + sqrt(1 - alpha_t) eps`.
 *
 * # Safety
 * All handles must be live; `out` must be writable.
 */
enum FgdviStatus fgdvi_q_sample(const struct FgdviSchedule *schedule,
                                const struct FgdviSequence *z0,
                                const struct FgdviSequence *eps,
                                size_t t,
                                struct FgdviSequence **out);

/**
 * Clean-latent estimate from a noisy latent and its predicted noise.
 *
 * # Safety
 * All handles must be live; `out` must be writable.
 */
enum FgdviStatus fgdvi_predict_z0(const struct FgdviSchedule *schedule,
                                  const struct FgdviSequence *z_t,
                                  const struct FgdviSequence *eps,
                                  size_t t,
                                  struct FgdviSequence **out);

/**
 * Flow set of `frames - 1` pairs at `h x w`.
 *
 * `forward` and `backward` each hold `(frames - 1) * 2 * h * w` doubles laid
 * out as `[pair][u, v][y][x]`; both null gives zero flow.
 *
 * # Safety
 * Buffers must be null or hold the stated number of doubles; `out` must be writable.
 */
enum FgdviStatus fgdvi_flowset_new(size_t frames,
                                   size_t h,
                                   size_t w,
                                   const double *forward,
                                   const double *backward,
                                   struct FgdviFlowSet **out);

/**
 * # Safety
 * `flows` must be null or a handle not yet freed.
 */
void fgdvi_flowset_free(struct FgdviFlowSet *flows);

/**
 * Runs DDIM sampling from `z_t`; `flows` non-null and `interp_steps > 0` enables
 * flow-guided interpolation for the first `interp_steps` steps.
 *
 * `clean` is required by the oracle denoiser and ignored otherwise.
 * `frame_denoisings` (nullable) receives the number of per-frame denoiser evaluations.
 *
 * # Safety
 * Handles must be live or null where allowed; `out` must be writable.
 */
enum FgdviStatus fgdvi_sample(const struct FgdviSchedule *schedule,
                              const struct FgdviSequence *z_t,
                              const struct FgdviSequence *z_phi,
                              const struct FgdviSequence *mask,
                              const struct FgdviFlowSet *flows,
                              enum FgdviDenoiser denoiser,
                              const struct FgdviSequence *clean,
                              size_t interp_steps,
                              uint64_t seed,
                              struct FgdviSequence **out,
                              size_t *frame_denoisings);

/**
 * Backward-warps a `c x h x w` image by the flow `(u, v)` (each `h x w`) into `dst`.
 *
 * # Safety
 * `src` and `dst` hold `c*h*w` doubles, `u` and `v` hold `h*w` doubles.
 */
enum FgdviStatus fgdvi_warp(const double *src,
                            size_t c,
                            size_t h,
                            size_t w,
                            const double *u,
                            const double *v,
                            double *dst);

/**
 * PSNR in dB over `region` (nullable: whole frame), capped at 99.
 *
 * # Safety
 * Handles must be live or null where allowed; `out` must be writable.
 */
enum FgdviStatus fgdvi_psnr(const struct FgdviSequence *a,
                            const struct FgdviSequence *b,
                            const struct FgdviSequence *region,
                            double *out);

/**
 * Mean SSIM over `region` (nullable: whole frame).
 *
 * # Safety
 * Handles must be live or null where allowed; `out` must be writable.
 */
enum FgdviStatus fgdvi_ssim(const struct FgdviSequence *a,
                            const struct FgdviSequence *b,
                            const struct FgdviSequence *region,
                            double *out);

/**
 * Reads the dimensions of a `.flo` file.
 *
 * # Safety
 * `path` is a nul-terminated string; `width` and `height` are writable.
 */
enum FgdviStatus fgdvi_flo_dims(const char *path, size_t *width, size_t *height);

/**
 * Reads a `.flo` file into `u` and `v`, each holding `len = width * height` doubles.
 *
 * # Safety
 * `path` is a nul-terminated string; `u` and `v` hold `len` writable doubles.
 */
enum FgdviStatus fgdvi_flo_read(const char *path, double *u, double *v, size_t len);

/**
 * Writes a `width x height` flow to a `.flo` file.
 *
 * # Safety
 * `path` is a nul-terminated string; `u` and `v` hold `width * height` doubles.
 */
enum FgdviStatus fgdvi_flo_write(const char *path,
                                 const double *u,
                                 const double *v,
                                 size_t width,
                                 size_t height);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FGDVI_H */
