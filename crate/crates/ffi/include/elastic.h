#ifndef ELASTIC_H
#define ELASTIC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ElasticMethod {
  ELASTIC_METHOD_SINGLE = 0,
  ELASTIC_METHOD_FEATURE_PYRAMID_CONCAT = 1,
  ELASTIC_METHOD_FEATURE_PYRAMID_ADD = 2,
  ELASTIC_METHOD_FILTER_PYRAMID_STANDARD = 3,
  ELASTIC_METHOD_FILTER_PYRAMID_DILATED = 4,
  ELASTIC_METHOD_ELASTIC = 5,
} ElasticMethod;

typedef enum ElasticStatus {
  ELASTIC_STATUS_OK = 0,
  ELASTIC_STATUS_NULL_POINTER = 1,
  ELASTIC_STATUS_INVALID_UTF8 = 2,
  ELASTIC_STATUS_CONFIG = 3,
  ELASTIC_STATUS_SHAPE = 4,
  ELASTIC_STATUS_DEGENERATE_INPUT = 5,
  ELASTIC_STATUS_INPUT = 6,
  ELASTIC_STATUS_USAGE = 7,
  ELASTIC_STATUS_FORMAT = 8,
  ELASTIC_STATUS_IO = 9,
  ELASTIC_STATUS_NON_FINITE_LOSS = 10,
  ELASTIC_STATUS_BUFFER_TOO_SMALL = 11,
  ELASTIC_STATUS_PANIC = 12,
} ElasticStatus;

/**
 * Opaque architecture description.
 */
typedef struct ElasticArch ElasticArch;

/**
 * Opaque network with its parameters.
 */
typedef struct ElasticNetwork ElasticNetwork;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or an empty string. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *elastic_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *elastic_version(void);

/**
 * # Safety
 * `name` must be a NUL-terminated string and `out` a valid pointer.
 */
enum ElasticStatus elastic_arch_preset(const char *name, struct ElasticArch **out_arch);

/**
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum ElasticStatus elastic_arch_from_toml(const char *toml, struct ElasticArch **out_arch);

/**
 * # Safety
 * `arch` must come from an `elastic_arch_*` constructor or be NULL.
 */
void elastic_arch_free(struct ElasticArch *arch);

/**
 * FLOPs and parameters of `arch` at `resolution` (0 for the native size).
 *
 * # Safety
 * Pointers must be valid.
 */
enum ElasticStatus elastic_arch_cost(const struct ElasticArch *arch,
                                     size_t resolution,
                                     uint64_t *flops,
                                     uint64_t *params);

/**
 * # Safety
 * Pointers must be valid.
 */
enum ElasticStatus elastic_arch_elastic_blocks(const struct ElasticArch *arch, size_t *count);

/**
 * One convolution's cost under `method`. `b` holds `q` branching
 * denominators as `b_num[i] / b_den[i]`; `r` holds `q` scale ratios. Results
 * are exact rationals rounded to double.
 *
 * # Safety
 * Array pointers must reference `q` readable elements; outputs must be valid.
 */
enum ElasticStatus elastic_conv_method_cost(enum ElasticMethod method,
                                            int64_t n,
                                            int64_t c,
                                            int64_t k,
                                            size_t q,
                                            const int64_t *b_num,
                                            const int64_t *b_den,
                                            const int64_t *r,
                                            double *flops,
                                            double *params);

/**
 * Builds and initializes a network from `seed`.
 *
 * # Safety
 * Pointers must be valid.
 */
enum ElasticStatus elastic_network_build(const struct ElasticArch *arch,
                                         uint64_t seed,
                                         struct ElasticNetwork **out_net);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out_net` valid.
 */
enum ElasticStatus elastic_network_load(const char *path, struct ElasticNetwork **out_net);

/**
 * Writes the network's parameters as a checkpoint.
 *
 * # Safety
 * `net` must be valid and `path` NUL-terminated.
 */
enum ElasticStatus elastic_network_save(const struct ElasticNetwork *net, const char *path);

/**
 * # Safety
 * `net` must come from an `elastic_network_*` constructor or be NULL.
 */
void elastic_network_free(struct ElasticNetwork *net);

/**
 * # Safety
 * Pointers must be valid.
 */
enum ElasticStatus elastic_network_num_classes(const struct ElasticNetwork *net, size_t *classes);

/**
 * # Safety
 * Pointers must be valid.
 */
enum ElasticStatus elastic_network_param_count(const struct ElasticNetwork *net, uint64_t *count);

/**
 * Eval-mode forward over an NCHW batch; writes `n × classes` logits.
 *
 * # Safety
 * `input` must hold `n·c·h·w` floats and `logits` `logits_len` floats.
 */
enum ElasticStatus elastic_network_forward(struct ElasticNetwork *net,
                                           const float *input,
                                           size_t n,
                                           size_t c,
                                           size_t h,
                                           size_t w,
                                           float *logits,
                                           size_t logits_len);

/**
 * Scale policy scores for an NCHW batch; writes `n × K` row-major scores,
 * K being the network's Elastic block count.
 *
 * # Safety
 * `input` must hold `n·c·h·w` floats and `scores` `scores_len` floats.
 */
enum ElasticStatus elastic_policy_scores(struct ElasticNetwork *net,
                                         const float *input,
                                         size_t n,
                                         size_t c,
                                         size_t h,
                                         size_t w,
                                         float *scores,
                                         size_t scores_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ELASTIC_H */
