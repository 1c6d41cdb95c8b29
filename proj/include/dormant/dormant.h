#ifndef DORMANT_DORMANT_H
#define DORMANT_DORMANT_H

/*
 * C interface to the dormant backdoor lab.
 *
 * Objects are opaque handles released with their *_free function. Every
 * call returns a dt_status; on failure dt_last_error() describes the problem
 * (thread-local, valid until the next failing call on the same thread).
 * Strings returned through char** out-parameters are owned by the caller and
 * released with dt_string_free.
 */

#include <stddef.h>
#include <stdint.h>

#if defined(DT_BUILDING_LIBRARY)
#define DT_API __attribute__((visibility("default")))
#else
#define DT_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum dt_status {
  DT_OK = 0,
  DT_ERR_DIMENSION = 1,
  DT_ERR_INDEX = 2,
  DT_ERR_USAGE = 3,
  DT_ERR_SPEC = 4,
  DT_ERR_FORMAT = 5,
  DT_ERR_CONSISTENCY = 6,
  DT_ERR_BOUNDS = 7,
  DT_ERR_PARAMETER = 8,
  DT_ERR_NUMERIC = 9,
  DT_ERR_TRAINING = 10,
  DT_ERR_DETECTION = 11,
  DT_ERR_IO = 12,
  DT_ERR_CONFIG = 13,
  DT_ERR_NULL_ARGUMENT = 14,
  DT_ERR_INTERNAL = 15
} dt_status;

typedef struct dt_model dt_model;
typedef struct dt_key dt_key;
typedef struct dt_dataset dt_dataset;

typedef struct dt_trigger {
  int row;
  int col;
  int height;
  int width;
  float value;
  int target_class;
} dt_trigger;

typedef struct dt_detect_options {
  float reg_weight;
  int steps;
  float learning_rate;
  double threshold;
  uint64_t seed;
  double mad_scale;
  int workers;
  size_t samples;
} dt_detect_options;

DT_API const char* dt_last_error(void);
DT_API const char* dt_status_name(dt_status status);
DT_API void dt_string_free(char* s);

DT_API dt_trigger dt_trigger_default(void);
DT_API dt_detect_options dt_detect_options_default(void);

/* Models (DTNN checkpoints). */
DT_API dt_status dt_model_load(const char* path, dt_model** out);
DT_API dt_status dt_model_save(const dt_model* model, const char* path);
DT_API dt_status dt_model_spec_json(const dt_model* model, char** out_json);
DT_API void dt_model_free(dt_model* model);

/* Secret weight keys (DTKY files). */
DT_API dt_status dt_key_load(const char* path, dt_key** out);
DT_API dt_status dt_key_save(const dt_key* key, const char* path);
DT_API void dt_key_free(dt_key* key);

/* IDX image/label pairs. */
DT_API dt_status dt_dataset_load_idx(const char* images_path, const char* labels_path, dt_dataset** out);
DT_API size_t dt_dataset_size(const dt_dataset* data);
DT_API void dt_dataset_free(dt_dataset* data);

/* New model holding θ + δ. */
DT_API dt_status dt_awaken(const dt_model* model, const dt_key* key, dt_model** out);

/* {"acc_c", "acc_t", "n_clean", "n_triggered"} */
DT_API dt_status dt_evaluate(const dt_model* model, const dt_dataset* test, const dt_trigger* trigger,
                             char** out_json);

/* Detection report JSON. The first options->samples test images are used. */
DT_API dt_status dt_detect(const dt_model* model, const dt_dataset* test, const dt_detect_options* options,
                           char** out_json);

/* CSV "fraction,acc_c,acc_t,survival", one row per fraction. */
DT_API dt_status dt_prune_eval(const dt_model* model, const dt_key* key, const dt_dataset* test,
                               const dt_trigger* trigger, const double* fractions, size_t count, int per_layer,
                               char** out_csv);

/* Trains per the experiment config and writes the run artifacts into out_dir.
   mode: "std", "badnet" or "dormant". Returns the training report JSON. */
DT_API dt_status dt_train(const char* config_path, const char* mode, const char* out_dir, char** out_report_json);

/* Population study; out_root may be NULL to use the configured output dir.
   Returns the summary JSON (with "dir" naming the campaign directory). */
DT_API dt_status dt_campaign(const char* config_path, int runs, const char* out_root, char** out_summary_json);

#ifdef __cplusplus
}
#endif

#endif
