#ifndef STMA_H
#define STMA_H

/* Generated by cbindgen from crates/ffi/src; do not edit. */

#include <stddef.h>
#include <stdint.h>
#include <stdbool.h>

typedef enum StmaStatus {
  STMA_STATUS_OK = 0,
  STMA_STATUS_NULL_POINTER = 1,
  STMA_STATUS_INVALID_ARGUMENT = 2,
  STMA_STATUS_DIMENSION = 3,
  STMA_STATUS_CONTRACT = 4,
  STMA_STATUS_PARSE = 5,
  STMA_STATUS_IO = 6,
  STMA_STATUS_PANIC = 7,
} StmaStatus;

/**
 * Model weights plus the memory state of one video.
 */
typedef struct StmaSegmenter StmaSegmenter;

/**
 * Dense f64 tensor owned by the library.
 */
typedef struct StmaTensor StmaTensor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *stma_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *stma_version(void);

/**
 * Copies `shape[0..rank]` and `data[0..∏shape]` into a new tensor.
 *
 * # Safety
 * `shape` must point to `rank` values and `data` to the product of them.
 * `out` must be writable.
 */
enum StmaStatus stma_tensor_new(const size_t *shape,
                                size_t rank,
                                const double *data,
                                struct StmaTensor **out);

/**
 * # Safety
 * `tensor` must be NULL or a handle from this library not yet freed.
 */
void stma_tensor_free(struct StmaTensor *tensor);

/**
 * # Safety
 * `tensor` must be a live handle; `out` must be writable.
 */
enum StmaStatus stma_tensor_rank(const struct StmaTensor *tensor, size_t *out);

/**
 * # Safety
 * `tensor` must be a live handle; `out` must be writable.
 */
enum StmaStatus stma_tensor_numel(const struct StmaTensor *tensor, size_t *out);

/**
 * Writes the dimensions into `dims`, which holds `capacity` entries.
 *
 * # Safety
 * `tensor` must be a live handle and `dims` writable for `capacity` values.
 */
enum StmaStatus stma_tensor_shape(const struct StmaTensor *tensor, size_t *dims, size_t capacity);

/**
 * Copies the row-major payload into `data`, which holds `capacity` values.
 *
 * # Safety
 * `tensor` must be a live handle and `data` writable for `capacity` values.
 */
enum StmaStatus stma_tensor_copy_data(const struct StmaTensor *tensor,
                                      double *data,
                                      size_t capacity);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum StmaStatus stma_tensor_read(const char *path, struct StmaTensor **out);

/**
 * # Safety
 * `tensor` must be a live handle and `path` a NUL-terminated string.
 */
enum StmaStatus stma_tensor_write(const struct StmaTensor *tensor, const char *path);

/**
 * Creates a segmenter from `key=value` configuration text (NULL for the
 * defaults). Weights come from the `weights` directory when set, and are
 * drawn from `seed` otherwise.
 *
 * # Safety
 * `config_text` must be NULL or NUL-terminated; `out` must be writable.
 */
enum StmaStatus stma_segmenter_new(const char *config_text, struct StmaSegmenter **out);

/**
 * # Safety
 * `segmenter` must be NULL or a handle from this library not yet freed.
 */
void stma_segmenter_free(struct StmaSegmenter *segmenter);

/**
 * Frame geometry the segmenter expects.
 *
 * # Safety
 * `segmenter` must be a live handle; `height` and `width` writable.
 */
enum StmaStatus stma_segmenter_geometry(const struct StmaSegmenter *segmenter,
                                        size_t *height,
                                        size_t *width);

/**
 * Starts a video: `rgb` is `height·width·3` interleaved bytes and `ids`
 * holds one target ID per pixel (0 is background, at most `targets`).
 * Any previous video state is discarded.
 *
 * # Safety
 * `rgb` and `ids` must hold the stated number of bytes.
 */
enum StmaStatus stma_segmenter_init(struct StmaSegmenter *segmenter,
                                    const uint8_t *rgb,
                                    const uint8_t *ids,
                                    size_t height,
                                    size_t width,
                                    size_t targets);

/**
 * Segments the next frame and writes one ID per pixel into `ids_out`.
 *
 * # Safety
 * `rgb` must hold `height·width·3` bytes and `ids_out` be writable for
 * `height·width` bytes.
 */
enum StmaStatus stma_segmenter_step(struct StmaSegmenter *segmenter,
                                    const uint8_t *rgb,
                                    size_t height,
                                    size_t width,
                                    uint8_t *ids_out);

/**
 * Sizes of both memory banks after the last call.
 *
 * # Safety
 * `segmenter` must be a live handle; outputs must be writable.
 */
enum StmaStatus stma_segmenter_memory_sizes(const struct StmaSegmenter *segmenter,
                                            size_t *spatial,
                                            size_t *temporal);

/**
 * Region similarity (IoU) of `target` between two ID masks.
 *
 * # Safety
 * `pred` and `gt` must hold `height·width` bytes; `out` must be writable.
 */
enum StmaStatus stma_region_similarity(const uint8_t *pred,
                                       const uint8_t *gt,
                                       size_t height,
                                       size_t width,
                                       size_t target,
                                       double *out);

/**
 * Boundary F-measure of `target`; `tolerance` 0 selects the default.
 *
 * # Safety
 * `pred` and `gt` must hold `height·width` bytes; `out` must be writable.
 */
enum StmaStatus stma_contour_accuracy(const uint8_t *pred,
                                      const uint8_t *gt,
                                      size_t height,
                                      size_t width,
                                      size_t target,
                                      size_t tolerance,
                                      double *out);

/**
 * Runs the self-check suite and reports how many checks passed.
 *
 * # Safety
 * `passed` and `total` must be writable.
 */
enum StmaStatus stma_verify(bool inject_fault, size_t *passed, size_t *total);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STMA_H */
