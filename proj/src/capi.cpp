#include "cvnn/cvnn.h"

#include <cstring>
#include <fstream>
#include <memory>
#include <new>
#include <string>

#include "cvnn/errors.hpp"
#include "cvnn/training.hpp"
#include "cvnn/verify.hpp"

struct cvnn_model {
  std::unique_ptr<cvnn::Model> model;
};

struct cvnn_store {
  cvnn::PatchStore store;
};

namespace {

thread_local std::string g_last_error;

cvnn_status status_of(cvnn::ErrorKind kind) {
  switch (kind) {
    case cvnn::ErrorKind::invalid_argument:
      return CVNN_ERR_ARGUMENT;
    case cvnn::ErrorKind::shape:
      return CVNN_ERR_SHAPE;
    case cvnn::ErrorKind::graph:
      return CVNN_ERR_GRAPH;
    case cvnn::ErrorKind::contract:
      return CVNN_ERR_CONTRACT;
    case cvnn::ErrorKind::ingest:
      return CVNN_ERR_INGEST;
    case cvnn::ErrorKind::io:
      return CVNN_ERR_IO;
    case cvnn::ErrorKind::numeric:
      return CVNN_ERR_NUMERIC;
  }
  return CVNN_ERR_INTERNAL;
}

template <class F>
cvnn_status guarded(F&& f) {
  g_last_error.clear();
  try {
    f();
    return CVNN_OK;
  } catch (const cvnn::Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
  } catch (const std::exception& e) {
    g_last_error = e.what();
  } catch (...) {
    g_last_error = "unknown error";
  }
  return CVNN_ERR_INTERNAL;
}

void require(const void* p, const char* what) {
  if (!p) throw cvnn::ArgumentError(std::string(what) + " must not be NULL");
}

char* dup_string(const std::string& s) {
  char* out = new char[s.size() + 1];
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

std::string text_or_empty(const char* s) { return s ? s : ""; }

}  // namespace

extern "C" {

const char* cvnn_last_error(void) { return g_last_error.c_str(); }

const char* cvnn_status_name(cvnn_status status) {
  switch (status) {
    case CVNN_OK:
      return "ok";
    case CVNN_ERR_ARGUMENT:
      return "invalid argument";
    case CVNN_ERR_SHAPE:
      return "shape error";
    case CVNN_ERR_GRAPH:
      return "graph error";
    case CVNN_ERR_CONTRACT:
      return "contract violation";
    case CVNN_ERR_INGEST:
      return "ingest error";
    case CVNN_ERR_IO:
      return "i/o error";
    case CVNN_ERR_NUMERIC:
      return "numeric error";
    case CVNN_ERR_INTERNAL:
      return "internal error";
  }
  return "unknown status";
}

void cvnn_free_string(char* s) { delete[] s; }

cvnn_status cvnn_run_config_resolve(const char* base_json, const char* overlay_json, char** out_json) {
  return guarded([&] {
    require(out_json, "out_json");
    const cvnn::RunConfig base = cvnn::run_config_from_json(text_or_empty(base_json));
    *out_json = dup_string(cvnn::to_json(cvnn::run_config_from_json(text_or_empty(overlay_json), base)));
  });
}

cvnn_status cvnn_train(const char* run_config_json, cvnn_step_fn on_step, void* user, cvnn_train_result* out) {
  return guarded([&] {
    const cvnn::RunConfig config = cvnn::run_config_from_json(text_or_empty(run_config_json));
    cvnn::StepCallback cb;
    if (on_step) {
      cb = [on_step, user](const cvnn::MetricsRow& row) {
        const cvnn_step_info info{row.step, row.loss, row.lr, row.wall_time, row.fpr95.has_value(),
                                  row.fpr95.value_or(0.0)};
        on_step(&info, user);
      };
    }
    const cvnn::TrainResult r = cvnn::run_training(config, cb);
    if (out) {
      out->steps = r.metrics.size();
      out->final_loss = r.metrics.empty() ? 0.0 : r.metrics.back().loss;
      out->has_fpr95 = r.final_fpr95.has_value();
      out->final_fpr95 = r.final_fpr95.value_or(0.0);
    }
  });
}

cvnn_status cvnn_model_create(const char* model_config_json, cvnn_model** out) {
  return guarded([&] {
    require(out, "out");
    auto m = std::make_unique<cvnn_model>();
    m->model = std::make_unique<cvnn::Model>(cvnn::model_config_from_json(text_or_empty(model_config_json)));
    *out = m.release();
  });
}

cvnn_status cvnn_model_load(const char* checkpoint_path, cvnn_model** out) {
  return guarded([&] {
    require(checkpoint_path, "checkpoint_path");
    require(out, "out");
    auto m = std::make_unique<cvnn_model>();
    m->model = cvnn::load_checkpoint(checkpoint_path).model;
    *out = m.release();
  });
}

cvnn_status cvnn_model_save(cvnn_model* model, const char* checkpoint_path) {
  return guarded([&] {
    require(model, "model");
    require(checkpoint_path, "checkpoint_path");
    cvnn::save_checkpoint(checkpoint_path, *model->model, nullptr);
  });
}

cvnn_status cvnn_model_config(const cvnn_model* model, char** out_json) {
  return guarded([&] {
    require(model, "model");
    require(out_json, "out_json");
    *out_json = dup_string(cvnn::to_json(model->model->config()));
  });
}

void cvnn_model_free(cvnn_model* model) { delete model; }

cvnn_status cvnn_store_load(const char* dataset_json, size_t patch_size, cvnn_store** out) {
  return guarded([&] {
    require(out, "out");
    auto s = std::make_unique<cvnn_store>();
    s->store = cvnn::load_dataset(cvnn::dataset_spec_from_json(text_or_empty(dataset_json)), patch_size);
    *out = s.release();
  });
}

cvnn_status cvnn_store_save(const cvnn_store* store, const char* path) {
  return guarded([&] {
    require(store, "store");
    require(path, "path");
    cvnn::save_store(path, store->store);
  });
}

size_t cvnn_store_size(const cvnn_store* store) { return store ? store->store.size() : 0; }

size_t cvnn_store_patch_size(const cvnn_store* store) { return store ? store->store.patch_size() : 0; }

void cvnn_store_free(cvnn_store* store) { delete store; }

cvnn_status cvnn_evaluate(cvnn_model* model, const cvnn_store* store, const char* match_file, size_t num_pairs,
                          uint64_t seed, const char* roc_csv, double* fpr95, double* auc) {
  return guarded([&] {
    require(model, "model");
    require(store, "store");
    require(fpr95, "fpr95");
    cvnn::DatasetSpec spec;
    if (match_file && *match_file) spec.match_file = match_file;
    cvnn::Rng rng(seed);
    const auto pairs = cvnn::evaluation_pairs(spec, store->store, num_pairs, rng);
    const cvnn::Evaluation ev = cvnn::evaluate(*model->model, store->store, pairs);
    if (roc_csv && *roc_csv) cvnn::write_roc_csv(roc_csv, ev.roc);
    *fpr95 = ev.fpr95;
    if (auc) *auc = ev.auc;
  });
}

cvnn_status cvnn_describe(cvnn_model* model, const cvnn_store* store, const char* out_path) {
  return guarded([&] {
    require(model, "model");
    require(store, "store");
    require(out_path, "out_path");
    if (model->model->config().architecture != cvnn::Architecture::ctn) {
      throw cvnn::ContractError("descriptors need a CTN checkpoint; a CCN model only scores pairs");
    }
    cvnn::write_descriptors(out_path, model->model->describe(store->store.patches), store->store.point_ids);
  });
}

cvnn_status cvnn_verify(uint64_t seed, cvnn_suite_fn on_suite, void* user, int* all_passed) {
  return guarded([&] {
    bool ok = true;
    for (const cvnn::SuiteReport& r : cvnn::run_verification(seed)) {
      ok = ok && r.passed;
      if (on_suite) on_suite(r.name.c_str(), r.passed, r.max_error, r.cases, r.detail.c_str(), user);
    }
    if (all_passed) *all_passed = ok;
  });
}

}  // extern "C"
