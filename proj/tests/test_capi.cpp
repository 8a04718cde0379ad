#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <random>
#include <string>

#include "cvnn/cvnn.h"
#include "doctest.h"

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() / ("cvnn_capi_" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

std::string take(char* s) {
  std::string out = s ? s : "";
  cvnn_free_string(s);
  return out;
}

const char* kSynth = R"({"format": "synthetic", "synth": {"num_ids": 8, "patches_per_id": 3}, "synth_seed": 4})";

}  // namespace

TEST_CASE("errors come back as status codes") {
  cvnn_model* model = nullptr;
  CHECK(cvnn_model_create(R"({"architecture": "mlp"})", &model) == CVNN_ERR_ARGUMENT);
  CHECK(model == nullptr);
  CHECK(std::string(cvnn_last_error()).size() > 0);
  CHECK(cvnn_model_create("{}", nullptr) == CVNN_ERR_ARGUMENT);
  CHECK(cvnn_model_load("/nonexistent/model.cvnn", &model) == CVNN_ERR_IO);
  CHECK(std::string(cvnn_status_name(CVNN_ERR_CONTRACT)) == "contract violation");

  REQUIRE(cvnn_model_create("{}", &model) == CVNN_OK);
  CHECK(std::string(cvnn_last_error()).empty());
  cvnn_model_free(model);
  cvnn_model_free(nullptr);
  cvnn_store_free(nullptr);
}

TEST_CASE("config resolution layers overlay on base") {
  char* out = nullptr;
  REQUIRE(cvnn_run_config_resolve(R"({"steps": 7, "batch_size": 4})", R"({"steps": 9})", &out) == CVNN_OK);
  const std::string json = take(out);
  CHECK(json.find("\"steps\": 9") != std::string::npos);
  CHECK(json.find("\"batch_size\": 4") != std::string::npos);
  CHECK(cvnn_run_config_resolve(R"({"batch": 4})", nullptr, &out) == CVNN_ERR_ARGUMENT);
}

TEST_CASE("train, reload, evaluate, describe") {
  TempDir dir;
  const std::string run = R"({"model": {"architecture": "ctn", "patch_size": 8},
    "data": {"format": "synthetic", "synth": {"num_ids": 8, "patches_per_id": 3}},
    "batch_size": 4, "steps": 3, "eval_pairs": 40, "seed": 2, "out_dir": ")" +
                          (dir.path / "run").string() + "\"}";
  std::size_t seen = 0;
  cvnn_train_result result{};
  REQUIRE(cvnn_train(
              run.c_str(),
              [](const cvnn_step_info* info, void* user) {
                ++*static_cast<std::size_t*>(user);
                return info->step > 0 ? 1 : 0;
              },
              &seen, &result) == CVNN_OK);
  CHECK(seen == 3);
  CHECK(result.steps == 3);
  CHECK(result.has_fpr95 == 1);

  cvnn_model* model = nullptr;
  REQUIRE(cvnn_model_load((dir.path / "run" / "model.cvnn").string().c_str(), &model) == CVNN_OK);
  CHECK(take([&] {
          char* s = nullptr;
          cvnn_model_config(model, &s);
          return s;
        }()).find("\"ctn\"") != std::string::npos);

  cvnn_store* store = nullptr;
  REQUIRE(cvnn_store_load(kSynth, 8, &store) == CVNN_OK);
  CHECK(cvnn_store_size(store) == 24);
  CHECK(cvnn_store_patch_size(store) == 8);

  double fpr = -1.0, auc = -1.0;
  const std::string roc = (dir.path / "roc.csv").string();
  REQUIRE(cvnn_evaluate(model, store, nullptr, 30, 1, roc.c_str(), &fpr, &auc) == CVNN_OK);
  CHECK(fpr >= 0.0);
  CHECK(fpr <= 1.0);
  CHECK(std::filesystem::exists(roc));

  const std::string desc = (dir.path / "desc.cvnn").string();
  REQUIRE(cvnn_describe(model, store, desc.c_str()) == CVNN_OK);
  CHECK(std::filesystem::exists(desc + ".txt"));

  const std::string saved = (dir.path / "store.cvnn").string();
  REQUIRE(cvnn_store_save(store, saved.c_str()) == CVNN_OK);
  cvnn_store* again = nullptr;
  const std::string spec = R"({"format": "container", "path": ")" + saved + "\"}";
  REQUIRE(cvnn_store_load(spec.c_str(), 8, &again) == CVNN_OK);
  CHECK(cvnn_store_size(again) == 24);
  CHECK(cvnn_store_load(spec.c_str(), 16, &store) == CVNN_ERR_CONTRACT);
  cvnn_store_free(again);

  cvnn_model* ccn = nullptr;
  REQUIRE(cvnn_model_create(R"({"architecture": "ccn", "patch_size": 8, "decision_width": 16})", &ccn) == CVNN_OK);
  CHECK(cvnn_describe(ccn, store, desc.c_str()) == CVNN_ERR_CONTRACT);
  REQUIRE(cvnn_evaluate(ccn, store, nullptr, 30, 1, nullptr, &fpr, nullptr) == CVNN_OK);
  cvnn_model_free(ccn);
  cvnn_model_free(model);
  cvnn_store_free(store);
}

TEST_CASE("verification suites report through the callback") {
  std::size_t suites = 0;
  int all = 0;
  REQUIRE(cvnn_verify(
              3,
              [](const char*, int passed, double, size_t cases, const char*, void* user) {
                CHECK(passed);
                CHECK(cases > 0);
                ++*static_cast<std::size_t*>(user);
              },
              &suites, &all) == CVNN_OK);
  CHECK(all == 1);
  CHECK(suites >= 6);
}
