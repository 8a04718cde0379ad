#ifndef CVNN_CVNN_H
#define CVNN_CVNN_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define CVNN_API __declspec(dllexport)
#else
#define CVNN_API __attribute__((visibility("default")))
#endif

typedef enum cvnn_status {
  CVNN_OK = 0,
  CVNN_ERR_ARGUMENT = 1,
  CVNN_ERR_SHAPE = 2,
  CVNN_ERR_GRAPH = 3,
  CVNN_ERR_CONTRACT = 4,
  CVNN_ERR_INGEST = 5,
  CVNN_ERR_IO = 6,
  CVNN_ERR_NUMERIC = 7,
  CVNN_ERR_INTERNAL = 8
} cvnn_status;

typedef struct cvnn_model cvnn_model;
typedef struct cvnn_store cvnn_store;

/* Message of the last failed call on this thread ("" when none). */
CVNN_API const char* cvnn_last_error(void);
CVNN_API const char* cvnn_status_name(cvnn_status status);

/* Strings returned through char** are owned by the caller. */
CVNN_API void cvnn_free_string(char* s);

/* Run configuration as JSON. Keys absent from `overlay_json` keep the
   values of `base_json`; either may be NULL or "" for the defaults. */
CVNN_API cvnn_status cvnn_run_config_resolve(const char* base_json, const char* overlay_json, char** out_json);

typedef struct cvnn_step_info {
  size_t step;
  double loss;
  double lr;
  double wall_time;
  int has_fpr95;
  double fpr95;
} cvnn_step_info;

/* Return non-zero to keep going; zero is ignored (training is not
   interruptible mid-run). */
typedef int (*cvnn_step_fn)(const cvnn_step_info* info, void* user);

typedef struct cvnn_train_result {
  size_t steps;
  double final_loss;
  int has_fpr95;
  double final_fpr95;
} cvnn_train_result;

/* Trains per the run config; writes metrics.csv, config.json and
   model.cvnn (plus periodic checkpoints) into its out_dir. */
CVNN_API cvnn_status cvnn_train(const char* run_config_json, cvnn_step_fn on_step, void* user,
                                cvnn_train_result* out);

CVNN_API cvnn_status cvnn_model_create(const char* model_config_json, cvnn_model** out);
CVNN_API cvnn_status cvnn_model_load(const char* checkpoint_path, cvnn_model** out);
CVNN_API cvnn_status cvnn_model_save(cvnn_model* model, const char* checkpoint_path);
CVNN_API cvnn_status cvnn_model_config(const cvnn_model* model, char** out_json);
CVNN_API void cvnn_model_free(cvnn_model* model);

/* Dataset descriptor JSON: {"format": "phototour|hpatches|synthetic|container",
   "path", "split_file", "splits", "match_file", "synth": {...}, "synth_seed"}. */
CVNN_API cvnn_status cvnn_store_load(const char* dataset_json, size_t patch_size, cvnn_store** out);
CVNN_API cvnn_status cvnn_store_save(const cvnn_store* store, const char* path);
CVNN_API size_t cvnn_store_size(const cvnn_store* store);
CVNN_API size_t cvnn_store_patch_size(const cvnn_store* store);
CVNN_API void cvnn_store_free(cvnn_store* store);

/* FPR95 of `model` on pairs from `match_file` when given, otherwise
   `num_pairs` pairs (half matching) sampled with `seed`. Writes the ROC
   curve to `roc_csv` when non-NULL. `auc` may be NULL. */
CVNN_API cvnn_status cvnn_evaluate(cvnn_model* model, const cvnn_store* store, const char* match_file,
                                   size_t num_pairs, uint64_t seed, const char* roc_csv, double* fpr95,
                                   double* auc);

/* Descriptors of every patch in `store` (CTN only) written to `out_path`
   as a tensor container, plus a text index at `<out_path>.txt`. */
CVNN_API cvnn_status cvnn_describe(cvnn_model* model, const cvnn_store* store, const char* out_path);

typedef void (*cvnn_suite_fn)(const char* name, int passed, double max_error, size_t cases, const char* detail,
                              void* user);

/* Runs every built-in oracle suite; `all_passed` receives 1 when all pass. */
CVNN_API cvnn_status cvnn_verify(uint64_t seed, cvnn_suite_fn on_suite, void* user, int* all_passed);

#ifdef __cplusplus
}
#endif

#endif
