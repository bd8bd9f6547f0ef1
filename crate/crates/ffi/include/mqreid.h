#ifndef MQREID_H
#define MQREID_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum MqStatus {
    MQ_STATUS_OK = 0,
    /**
     * A required pointer was null or a string was not UTF-8.
     */
    MQ_STATUS_INVALID_ARGUMENT = 1,
    /**
     * Bad configuration value.
     */
    MQ_STATUS_USAGE = 2,
    /**
     * Malformed or inconsistent input data.
     */
    MQ_STATUS_DATA = 3,
    /**
     * Model missing, unreadable or incompatible with the input.
     */
    MQ_STATUS_MODEL = 4,
    /**
     * An output buffer is smaller than required.
     */
    MQ_STATUS_BUFFER_TOO_SMALL = 5,
    /**
     * The library panicked; this is a bug.
     */
    MQ_STATUS_INTERNAL = 6,
} MqStatus;

/**
 * Missing-viewpoint recovery model handle.
 */
typedef struct MqCvfr MqCvfr;

/**
 * Gallery of feature records handle.
 */
typedef struct MqGallery MqGallery;

/**
 * Embedding model handle.
 */
typedef struct MqVcc MqVcc;

/**
 * One query record of a multi-query set.
 */
typedef struct MqQuery {
    /**
     * 0 front, 1 side, 2 rear. Each viewpoint may appear once per set.
     */
    int viewpoint;
    /**
     * Camera the query was taken by; used by the junk filter. May be null.
     */
    const char *camera_id;
    const double *appearance;
    const double *viewpoint_feature;
} MqQuery;

/**
 * Per-position judgement of a ranked list for the metric functions.
 */
typedef struct MqJudged {
    int positive;
    const char *camera_id;
    int viewpoint;
    /**
     * `viewpoint_dim` doubles; read for the cross-scene precision.
     */
    const double *viewpoint_feature;
} MqJudged;

/**
 * Metric values of one ranked list. Fields that need a positive are NaN
 * when the list has none.
 */
typedef struct MqListMetrics {
    double rank1;
    double rank5;
    double rank10;
    double average_precision;
    double inverse_negative_penalty;
    double cross_scene_precision;
} MqListMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *mq_last_error(void);

/**
 * Load an embedding model from its JSON document.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum MqStatus mq_vcc_load(const char *path, struct MqVcc **out);

/**
 * # Safety
 * `vcc` must come from [`mq_vcc_load`] and not be used afterwards. Null is
 * ignored.
 */
void mq_vcc_free(struct MqVcc *vcc);

/**
 * Input, appearance and viewpoint feature sizes of the model.
 *
 * # Safety
 * `vcc` must be a live handle; the out pointers must be writable.
 */
enum MqStatus mq_vcc_dims(const struct MqVcc *vcc,
                          uintptr_t *input_dim,
                          uintptr_t *appearance_dim,
                          uintptr_t *viewpoint_dim);

/**
 * Embed one input vector into unit-norm appearance and viewpoint features
 * and report the predicted viewpoint (0 front, 1 side, 2 rear).
 *
 * # Safety
 * Buffers must hold at least the given number of doubles; `viewpoint` may
 * be null.
 */
enum MqStatus mq_vcc_embed(const struct MqVcc *vcc,
                           const double *input,
                           uintptr_t input_len,
                           double *appearance_out,
                           uintptr_t appearance_len,
                           double *viewpoint_out,
                           uintptr_t viewpoint_len,
                           int *viewpoint);

/**
 * Load a recovery model from its JSON document.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum MqStatus mq_cvfr_load(const char *path, struct MqCvfr **out);

/**
 * # Safety
 * `cvfr` must come from [`mq_cvfr_load`] and not be used afterwards. Null
 * is ignored.
 */
void mq_cvfr_free(struct MqCvfr *cvfr);

/**
 * Recover the appearance feature of `missing` from one available view.
 *
 * # Safety
 * `feature` holds `len` doubles, `out` holds `out_len` doubles.
 */
enum MqStatus mq_cvfr_recover(const struct MqCvfr *cvfr,
                              int from,
                              const double *feature,
                              uintptr_t len,
                              int missing,
                              double *out,
                              uintptr_t out_len);

/**
 * Load a gallery from a feature file (JSONL or binary cache).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum MqStatus mq_gallery_load(const char *path, struct MqGallery **out);

/**
 * # Safety
 * `gallery` must come from [`mq_gallery_load`] and not be used afterwards.
 * Null is ignored.
 */
void mq_gallery_free(struct MqGallery *gallery);

/**
 * Number of records in the gallery (0 for a null handle).
 *
 * # Safety
 * `gallery` must be null or a live handle.
 */
uintptr_t mq_gallery_len(const struct MqGallery *gallery);

/**
 * Copy the record id of gallery entry `index` into `buf` as a
 * NUL-terminated string. `needed` receives the size including the NUL.
 *
 * # Safety
 * `buf` holds `buf_len` bytes; `needed` may be null.
 */
enum MqStatus mq_gallery_record_id(const struct MqGallery *gallery,
                                   uintptr_t index,
                                   char *buf,
                                   uintptr_t buf_len,
                                   uintptr_t *needed);

/**
 * Rank the gallery for a multi-query set with viewpoint-aware fusion.
 *
 * Viewpoints missing from the set are recovered with `cvfr`, which may be
 * null when all three are present. With `vehicle_id` non-null and
 * `junk_filter` non-zero, gallery records of the same vehicle seen by a
 * query camera are excluded. Up to `capacity` results are written in
 * descending score order; `out_len` receives the number written.
 *
 * # Safety
 * `queries` holds `num_queries` entries whose feature pointers hold
 * gallery-sized vectors; outputs hold `capacity` elements.
 */
enum MqStatus mq_rank_multi(const struct MqGallery *gallery,
                            const struct MqCvfr *cvfr,
                            const struct MqQuery *queries,
                            uintptr_t num_queries,
                            const char *vehicle_id,
                            int junk_filter,
                            uintptr_t *out_indices,
                            double *out_scores,
                            uintptr_t capacity,
                            uintptr_t *out_len);

/**
 * Rank-k hits, AP, INP and cross-scene precision for one ranked list.
 * Same-camera positives whose viewpoint features lie closer than
 * `epsilon` count once in the cross-scene precision.
 *
 * # Safety
 * `items` holds `len` entries, each with a NUL-terminated camera id and a
 * `viewpoint_dim`-double feature.
 */
enum MqStatus mq_list_metrics(const struct MqJudged *items,
                              uintptr_t len,
                              uintptr_t viewpoint_dim,
                              double epsilon,
                              struct MqListMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MQREID_H */
