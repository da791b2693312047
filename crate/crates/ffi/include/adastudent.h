#ifndef ADASTUDENT_H
#define ADASTUDENT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

// Result code of every fallible call.
typedef enum AbstStatus {
  ABST_STATUS_OK = 0,
  // Null pointer, bad UTF-8 or zero length where data is required.
  ABST_STATUS_INVALID_ARGUMENT = 1,
  ABST_STATUS_CONFIG = 2,
  ABST_STATUS_DIVERGENCE = 3,
  ABST_STATUS_IO = 4,
  ABST_STATUS_CORRUPT_SNAPSHOT = 5,
  ABST_STATUS_DOMAIN = 6,
  ABST_STATUS_SHAPE = 7,
  ABST_STATUS_NON_FINITE = 8,
  ABST_STATUS_CONTRACT = 9,
  ABST_STATUS_PANIC = 10,
} AbstStatus;

// Running mean of student parameter snapshots.
typedef struct AbstAggregate AbstAggregate;

// Sampling distribution over target images.
typedef struct AbstDistribution AbstDistribution;

// Message of the last failed call on this thread. Valid until the next
// failing call on the same thread; empty if nothing has failed.
const char *abst_last_error(void);

// Library version as a static NUL-terminated string.
const char *abst_version(void);

// `lr0 * (1 - iter / total) ^ 0.9`.
//
// # Safety
// `out` must be a valid pointer to one `double`.
enum AbstStatus abst_poly_lr(size_t iter, size_t total, double lr0, double *out);

// Softmax of `scores / temperature` into `out` (both of length `len`).
//
// # Safety
// `scores` and `out` must point to `len` doubles.
enum AbstStatus abst_normalize_scores(const double *scores,
                                      size_t len,
                                      double temperature,
                                      double *out);

// Mean per-pixel `KL(primary || aux)` of two `height x width x classes`
// probability maps (pixel-major, classes innermost).
//
// # Safety
// `primary` and `aux` must point to `height * width * classes` doubles and
// `out` to one double.
enum AbstStatus abst_kl_variance_image(const double *primary,
                                       const double *aux,
                                       size_t height,
                                       size_t width,
                                       size_t classes,
                                       double *out);

// Uniform distribution over `n` target images.
//
// # Safety
// `out` must be a valid pointer; on success it receives a handle to free
// with [`abst_distribution_free`].
enum AbstStatus abst_distribution_new(size_t n, struct AbstDistribution **out);

// Replace the distribution by `(D + normalized) / 2`, renormalized.
//
// # Safety
// `dist` must be a live handle and `normalized` must point to `len` doubles.
enum AbstStatus abst_distribution_update(struct AbstDistribution *dist,
                                         const double *normalized,
                                         size_t len);

// Number of images the distribution covers; 0 for a null handle.
//
// # Safety
// `dist` must be null or a live handle.
size_t abst_distribution_len(const struct AbstDistribution *dist);

// Copy the weights into `out`, which must hold exactly `len` doubles.
//
// # Safety
// `dist` must be a live handle and `out` must point to `len` doubles.
enum AbstStatus abst_distribution_weights(const struct AbstDistribution *dist,
                                          double *out,
                                          size_t len);

// Shannon entropy of the weights (natural log).
//
// # Safety
// `dist` must be a live handle and `out` a valid pointer.
enum AbstStatus abst_distribution_entropy(const struct AbstDistribution *dist, double *out);

// `count` indices drawn with replacement, deterministic in `seed`.
//
// # Safety
// `dist` must be a live handle and `out` must point to `count` elements.
enum AbstStatus abst_distribution_draw(const struct AbstDistribution *dist,
                                       uint64_t seed,
                                       size_t count,
                                       size_t *out);

// # Safety
// `dist` must be null or a handle not yet freed.
void abst_distribution_free(struct AbstDistribution *dist);

// Start a running mean from the first snapshot.
//
// # Safety
// `params` must point to `len` doubles and `out` must be a valid pointer;
// on success it receives a handle to free with [`abst_aggregate_free`].
enum AbstStatus abst_aggregate_new(const double *params, size_t len, struct AbstAggregate **out);

// Fold the next snapshot into the running mean.
//
// # Safety
// `agg` must be a live handle and `params` must point to `len` doubles.
enum AbstStatus abst_aggregate_update(struct AbstAggregate *agg, const double *params, size_t len);

// Number of snapshots folded in; 0 for a null handle.
//
// # Safety
// `agg` must be null or a live handle.
size_t abst_aggregate_count(const struct AbstAggregate *agg);

// Parameter count of the aggregate; 0 for a null handle.
//
// # Safety
// `agg` must be null or a live handle.
size_t abst_aggregate_len(const struct AbstAggregate *agg);

// Copy the mean parameters into `out`, which must hold exactly `len` doubles.
//
// # Safety
// `agg` must be a live handle and `out` must point to `len` doubles.
enum AbstStatus abst_aggregate_params(const struct AbstAggregate *agg, double *out, size_t len);

// Write the aggregate as a snapshot file.
//
// # Safety
// `agg` must be a live handle and `path` a NUL-terminated string.
enum AbstStatus abst_aggregate_save(const struct AbstAggregate *agg, const char *path);

// Read an aggregate snapshot file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum AbstStatus abst_aggregate_load(const char *path, struct AbstAggregate **out);

// # Safety
// `agg` must be null or a handle not yet freed.
void abst_aggregate_free(struct AbstAggregate *agg);

// Run one experiment.
//
// `config_json` may be null for defaults. A non-null `variant` names a
// sampler/aggregation preset. A non-null `out_dir` receives report.csv,
// student.abst and aggregate.abst. On success the final student and
// aggregate target mIoU are written to the non-null output pointers.
//
// # Safety
// String arguments must be null or NUL-terminated; output pointers must be
// null or valid.
enum AbstStatus abst_run_experiment(const char *config_json,
                                    const char *variant,
                                    uint64_t seed,
                                    const char *out_dir,
                                    double *final_student_miou,
                                    double *final_aggregate_miou);

#endif  /* ADASTUDENT_H */
