#ifndef FGTT_H
#define FGTT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FgttStatus {
  FGTT_STATUS_OK = 0,
  FGTT_STATUS_NULL_POINTER = 1,
  FGTT_STATUS_INVALID_ARGUMENT = 2,
  FGTT_STATUS_IO = 3,
  FGTT_STATUS_CHECKPOINT = 4,
  FGTT_STATUS_SHAPE = 5,
  FGTT_STATUS_INTERNAL = 6,
} FgttStatus;

/**
 * Opaque handle to a loaded model.
 */
typedef struct FgttModelHandle FgttModelHandle;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Loads a checkpoint file. On success `*out` owns a handle that must be
 * released with [`fgtt_model_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum FgttStatus fgtt_model_load(const char *path, struct FgttModelHandle **out);

/**
 * Parses a checkpoint from its JSON text.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum FgttStatus fgtt_model_from_json(const char *json, struct FgttModelHandle **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `model` must come from a load function and not be freed twice.
 */
void fgtt_model_free(struct FgttModelHandle *model);

/**
 * Number of encoded input columns.
 *
 * # Safety
 * Pointers must be valid.
 */
enum FgttStatus fgtt_model_input_width(const struct FgttModelHandle *model, size_t *out);

/**
 * Number of feature-group tokens (CLS not counted).
 *
 * # Safety
 * Pointers must be valid.
 */
enum FgttStatus fgtt_model_n_groups(const struct FgttModelHandle *model, size_t *out);

/**
 * Name of group `index`, or null when out of range. Owned by the
 * handle.
 *
 * # Safety
 * `model` must be valid.
 */
const char *fgtt_model_group_name(const struct FgttModelHandle *model, size_t index);

/**
 * Class probabilities, `rows × fgtt_num_classes()` written to `out`.
 *
 * # Safety
 * `x` must hold `rows * cols` doubles and `out` room for
 * `rows * fgtt_num_classes()`.
 */
enum FgttStatus fgtt_model_predict_proba(const struct FgttModelHandle *model,
                                         const double *x,
                                         size_t rows,
                                         size_t cols,
                                         double *out);

/**
 * Per-row CLS attention over the groups of the last layer, averaged over
 * heads; `rows × n_groups` values, each row summing to 1.
 *
 * # Safety
 * As for [`fgtt_model_predict_proba`], with `out` sized
 * `rows * n_groups`.
 */
enum FgttStatus fgtt_model_cls_attention(const struct FgttModelHandle *model,
                                         const double *x,
                                         size_t rows,
                                         size_t cols,
                                         double *out);

/**
 * Support-weighted F1 of `predicted` against `actual` (class ids).
 *
 * # Safety
 * Both arrays must hold `n` entries.
 */
enum FgttStatus fgtt_weighted_f1(const size_t *predicted,
                                 const size_t *actual,
                                 size_t n,
                                 double *out);

size_t fgtt_num_classes(void);

/**
 * Message for the most recent failure on this thread; empty after a
 * success. Valid until the next call on the same thread.
 */
const char *fgtt_last_error(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FGTT_H */
