/* SPDX-License-Identifier: Apache-2.0 */
/*
 * testam C API: synthetic data generation, training, evaluation and routing
 * reports for the mixture-of-experts traffic forecaster.
 *
 * Every function returns a testam_status. On failure the message of the most
 * recent error on the calling thread is available from testam_last_error().
 */
#ifndef TESTAM_TESTAM_H
#define TESTAM_TESTAM_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#if defined(TESTAM_BUILDING_LIBRARY)
#define TESTAM_API __declspec(dllexport)
#else
#define TESTAM_API __declspec(dllimport)
#endif
#else
#define TESTAM_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum testam_status {
  TESTAM_OK = 0,
  TESTAM_ERR_INVALID_ARGUMENT = 1,
  TESTAM_ERR_CONFIG = 2,
  TESTAM_ERR_IO = 3,
  TESTAM_ERR_FORMAT = 4,
  TESTAM_ERR_NUMERIC = 5,
  TESTAM_ERR_INTERNAL = 6
} testam_status;

typedef enum testam_config_kind {
  TESTAM_CONFIG_TRAIN = 0,
  TESTAM_CONFIG_SYNTHETIC = 1
} testam_config_kind;

typedef struct testam_config testam_config;
typedef struct testam_model testam_model;

typedef struct testam_epoch_info {
  int epoch;
  long step;
  double lr;
  double loss;
  double regression;
  double worst;
  double best;
  double train_mae;
  double val_mae;
  double selection_share[3];
  double seconds;
} testam_epoch_info;

typedef void (*testam_epoch_callback)(const testam_epoch_info *info, void *user);

typedef struct testam_metrics {
  double mae;
  double rmse;
  double mape_pct;
  uint64_t count; /* 0 when every target was masked */
} testam_metrics;

TESTAM_API const char *testam_version(void);
/* Message of the last failure on this thread; empty if none. */
TESTAM_API const char *testam_last_error(void);
TESTAM_API const char *testam_status_name(testam_status status);

/* Upper bound on worker threads used for batched inference (>= 1). */
TESTAM_API testam_status testam_set_max_threads(int threads);

/* Starts from the defaults, then overlays the JSON file at `path` if given. */
TESTAM_API testam_status testam_config_new(testam_config_kind kind, const char *path,
                                           testam_config **out);
/* Applies a dotted `key=value` override. Unknown keys and type errors fail here;
 * cross-field constraints are checked when the config is used. */
TESTAM_API testam_status testam_config_set(testam_config *cfg, const char *assignment);
TESTAM_API testam_status testam_config_set_seed(testam_config *cfg, uint64_t seed);
/* Writes the effective configuration as JSON. `needed` receives the size
 * including the terminator; `buf` may be NULL to query it. */
TESTAM_API testam_status testam_config_to_json(const testam_config *cfg, char *buf,
                                               size_t capacity, size_t *needed);
TESTAM_API void testam_config_free(testam_config *cfg);

TESTAM_API testam_status testam_generate(const testam_config *synthetic,
                                         const char *out_dir);

/* `resume` names a checkpoint with optimizer state, or NULL. */
TESTAM_API testam_status testam_train(const testam_config *train, const char *data,
                                      const char *out_dir, const char *resume,
                                      testam_epoch_callback callback, void *user);

/* `average` (optional) receives the all-horizon test metrics. */
TESTAM_API testam_status testam_eval(const char *checkpoint, const char *data,
                                     const char *out_dir, testam_metrics *average);

TESTAM_API testam_status testam_routes(const char *checkpoint, const char *data,
                                       const char *out_dir);

TESTAM_API testam_status testam_model_load(const char *checkpoint, testam_model **out);
TESTAM_API testam_status testam_model_parameter_count(const testam_model *model,
                                                      uint64_t *out);
TESTAM_API testam_status testam_model_num_nodes(const testam_model *model, int *out);
TESTAM_API void testam_model_free(testam_model *model);

/* Parameter count of a freshly built model for `cfg` on `num_nodes` roads. */
TESTAM_API testam_status testam_parameter_count(const testam_config *train, int num_nodes,
                                                uint64_t *out);

#ifdef __cplusplus
}
#endif

#endif /* TESTAM_TESTAM_H */
