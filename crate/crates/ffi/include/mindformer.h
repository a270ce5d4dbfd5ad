#ifndef MINDFORMER_H
#define MINDFORMER_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum MfStatus {
  MF_STATUS_OK = 0,
  MF_STATUS_NULL_POINTER = 1,
  MF_STATUS_INVALID_UTF8 = 2,
  MF_STATUS_IO = 3,
  MF_STATUS_FORMAT = 4,
  MF_STATUS_VALIDATION = 5,
  MF_STATUS_UNKNOWN_SUBJECT = 6,
  MF_STATUS_SHAPE = 7,
  MF_STATUS_PANIC = 8,
  MF_STATUS_OTHER = 9,
} MfStatus;

/**
 * A loaded checkpoint. Opaque to C.
 */
typedef struct MfModel MfModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or "" after a success.
 * Valid until the next call into this library from the same thread.
 */
const char *mf_last_error(void);

/**
 * Library version as a static string.
 */
const char *mf_version(void);

/**
 * Loads a checkpoint (`<stem>.json` with its `<stem>.mft`).
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` a valid pointer.
 */
enum MfStatus mf_model_load(const char *path, struct MfModel **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `model` must come from [`mf_model_load`] and not be used afterwards.
 */
void mf_model_free(struct MfModel *model);

/**
 * Output shape: `n_tokens` rows of `token_dim` floats.
 *
 * # Safety
 * All pointers must be valid.
 */
enum MfStatus mf_model_dims(const struct MfModel *model, size_t *n_tokens, size_t *token_dim);

/**
 * Number of subjects the model was trained on.
 *
 * # Safety
 * All pointers must be valid.
 */
enum MfStatus mf_model_subject_count(const struct MfModel *model, size_t *count);

/**
 * Voxel count expected for `subject`.
 *
 * # Safety
 * `subject` must be nul-terminated; all pointers must be valid.
 */
enum MfStatus mf_model_subject_voxels(const struct MfModel *model,
                                      const char *subject,
                                      size_t *voxels);

/**
 * Total trainable parameter count.
 *
 * # Safety
 * All pointers must be valid.
 */
enum MfStatus mf_model_param_count(const struct MfModel *model, uint64_t *count);

/**
 * Encodes one trial. Writes `n_tokens * token_dim` floats, row-major, to `out`.
 *
 * # Safety
 * `voxels` must point to `n_voxels` floats and `out` to `out_len` floats.
 */
enum MfStatus mf_model_forward(const struct MfModel *model,
                               const char *subject,
                               const float *voxels,
                               size_t n_voxels,
                               float *out,
                               size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MINDFORMER_H */
