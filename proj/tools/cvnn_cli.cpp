// Command-line front end. Talks to the library only through the C API.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cvnn/cvnn.h"
#include "json.hpp"

using Json = nlohmann::json;

namespace {

struct Failure {
  cvnn_status status;
  std::string message;
};

void check(cvnn_status s) {
  if (s != CVNN_OK) throw Failure{s, cvnn_last_error()};
}

std::string take(char* s) {
  std::string out = s;
  cvnn_free_string(s);
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Failure{CVNN_ERR_IO, "cannot read " + path};
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void print_fpr95(double v) { std::printf("fpr95=%.6f\n", v); }

// Dataset flags shared by every subcommand that reads patches.
struct DataFlags {
  std::optional<std::string> path, format, split_file, match;
  std::vector<std::string> splits;
  std::optional<std::size_t> synth_ids, synth_per_id, synth_shift;
  std::optional<double> synth_sigma;
  std::optional<std::uint64_t> synth_seed;

  void add(CLI::App* app, const std::string& prefix = "") {
    app->add_option("--" + prefix + "data", path, "dataset directory or store file");
    app->add_option("--" + prefix + "format", format, "phototour|hpatches|synthetic|container");
    app->add_option("--" + prefix + "split-file", split_file, "HPatches split file (JSON)");
    app->add_option("--" + prefix + "splits", splits, "HPatches split names");
    app->add_option("--" + prefix + "match", match, "match file with evaluation pairs");
    app->add_option("--" + prefix + "synth-ids", synth_ids, "synthetic point ids");
    app->add_option("--" + prefix + "synth-per-id", synth_per_id, "synthetic patches per id");
    app->add_option("--" + prefix + "synth-sigma", synth_sigma, "synthetic noise sigma");
    app->add_option("--" + prefix + "synth-shift", synth_shift, "synthetic maximum shift in pixels");
    app->add_option("--" + prefix + "synth-seed", synth_seed, "synthetic generator seed");
  }

  bool any() const {
    return path || format || split_file || match || !splits.empty() || synth_ids || synth_per_id || synth_shift ||
           synth_sigma || synth_seed;
  }

  Json json() const {
    Json j = Json::object();
    if (format) j["format"] = *format;
    if (path) j["path"] = *path;
    if (split_file) j["split_file"] = *split_file;
    if (!splits.empty()) j["splits"] = splits;
    if (match) j["match_file"] = *match;
    if (synth_seed) j["synth_seed"] = *synth_seed;
    Json s = Json::object();
    if (synth_ids) s["num_ids"] = *synth_ids;
    if (synth_per_id) s["patches_per_id"] = *synth_per_id;
    if (synth_sigma) s["noise_sigma"] = *synth_sigma;
    if (synth_shift) s["max_shift"] = *synth_shift;
    if (!s.empty()) j["synth"] = s;
    return j;
  }
};

struct StoreHandle {
  cvnn_store* p = nullptr;
  ~StoreHandle() { cvnn_store_free(p); }
};

struct ModelHandle {
  cvnn_model* p = nullptr;
  ~ModelHandle() { cvnn_model_free(p); }
};

std::size_t patch_size_of(cvnn_model* model) {
  char* text = nullptr;
  check(cvnn_model_config(model, &text));
  return Json::parse(take(text)).at("patch_size").get<std::size_t>();
}

void load_store(const DataFlags& flags, std::size_t patch_size, StoreHandle& store) {
  check(cvnn_store_load(flags.json().dump().c_str(), patch_size, &store.p));
}

int on_step(const cvnn_step_info* info, void* user) {
  const auto every = *static_cast<std::size_t*>(user);
  if (info->has_fpr95) {
    std::fprintf(stderr, "step %zu  loss %.6f  eval fpr95 %.4f  (%.1fs)\n", info->step, info->loss, info->fpr95,
                 info->wall_time);
  } else if (every && info->step % every == 0) {
    std::fprintf(stderr, "step %zu  loss %.6f  (%.1fs)\n", info->step, info->loss, info->wall_time);
  }
  return 1;
}

void on_suite(const char* name, int passed, double max_error, size_t cases, const char* detail, void*) {
  std::printf("%-16s %s  max_error=%.3g  cases=%zu  %s\n", name, passed ? "PASS" : "FAIL", max_error, cases, detail);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Complex-valued patch similarity and descriptor networks"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "train a CCN or CTN model");
  std::optional<std::string> config_file, arch, bn, input, distance, loss, out, decision;
  std::optional<std::size_t> batch, steps, patch, eval_every, ckpt_every, eval_pairs, width, dim;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
  bool fixed_batch = false;
  std::size_t log_every = 50;
  DataFlags train_data, eval_data;
  train->add_option("--config", config_file, "JSON run config; flags override it");
  train->add_option("--arch", arch, "ccn|ctn");
  train->add_option("--bn", bn, "per_component|covariance");
  train->add_option("--input", input, "dft|zero_imag");
  train->add_option("--distance", distance, "modulus_sum|literal_clamped");
  train->add_option("--loss", loss, "corrected|literal");
  train->add_option("--decision", decision, "siamese|pseudo_siamese");
  train->add_option("--batch", batch, "batch size (default 128)");
  train->add_option("--lr", lr, "Adam learning rate (default 1e-3)");
  train->add_option("--steps", steps, "training steps");
  train->add_option("--seed", seed, "run seed");
  train->add_option("--out", out, "output directory");
  train->add_option("--patch-size", patch, "patch side in pixels (multiple of 8)");
  train->add_option("--decision-width", width, "CCN decision trunk width");
  train->add_option("--descriptor-dim", dim, "CTN descriptor length");
  train->add_option("--eval-every", eval_every, "evaluate every N steps (0: end only)");
  train->add_option("--checkpoint-every", ckpt_every, "checkpoint every N steps (0: end only)");
  train->add_option("--eval-pairs", eval_pairs, "sampled evaluation pairs");
  train->add_flag("--fixed-batch", fixed_batch, "reuse one sampled batch every step");
  train->add_option("--log-every", log_every, "progress line every N steps (0: off)");
  train_data.add(train);
  eval_data.add(train, "eval-");

  // eval
  auto* eval = app.add_subcommand("eval", "FPR95 and ROC of a checkpoint");
  std::string eval_ckpt, roc_path;
  std::optional<std::string> eval_arch;
  std::size_t num_pairs = 2000;
  std::uint64_t eval_seed = 0;
  DataFlags eval_flags;
  eval->add_option("--checkpoint", eval_ckpt, "model checkpoint")->required();
  eval->add_option("--arch", eval_arch, "expected architecture (ccn|ctn)");
  eval->add_option("--pairs", num_pairs, "sampled pairs when no match file is given");
  eval->add_option("--seed", eval_seed, "pair sampling seed");
  eval->add_option("--roc", roc_path, "ROC CSV path")->default_val("roc.csv");
  eval_flags.add(eval);

  // describe
  auto* describe = app.add_subcommand("describe", "export CTN descriptors");
  std::string desc_ckpt, desc_out;
  DataFlags desc_flags;
  describe->add_option("--checkpoint", desc_ckpt, "CTN checkpoint")->required();
  describe->add_option("--out", desc_out, "descriptor file")->required();
  desc_flags.add(describe);

  // verify
  auto* verify = app.add_subcommand("verify", "run the built-in oracle suites");
  std::uint64_t verify_seed = 1;
  verify->add_option("--seed", verify_seed, "suite seed");

  // ingest
  auto* ingest = app.add_subcommand("ingest", "convert a dataset into a patch store file");
  std::string ingest_out;
  std::size_t ingest_patch = 32;
  DataFlags ingest_flags;
  ingest->add_option("--out", ingest_out, "store file")->required();
  ingest->add_option("--patch-size", ingest_patch, "patch side in pixels");
  ingest_flags.add(ingest);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (train->parsed()) {
      Json overlay = Json::object();
      Json model = Json::object();
      if (arch) model["architecture"] = *arch;
      if (bn) model["bn_mode"] = *bn;
      if (input) model["input_conversion"] = *input;
      if (distance) model["distance_mode"] = *distance;
      if (loss) model["loss_form"] = *loss;
      if (decision) model["decision_mode"] = *decision;
      if (patch) model["patch_size"] = *patch;
      if (width) model["decision_width"] = *width;
      if (dim) model["descriptor_dim"] = *dim;
      if (lr) model["adam"] = {{"lr", *lr}};
      if (!model.empty()) overlay["model"] = model;
      if (train_data.any()) overlay["data"] = train_data.json();
      if (eval_data.any()) overlay["eval_data"] = eval_data.json();
      if (batch) overlay["batch_size"] = *batch;
      if (steps) overlay["steps"] = *steps;
      if (eval_every) overlay["eval_every"] = *eval_every;
      if (ckpt_every) overlay["checkpoint_every"] = *ckpt_every;
      if (eval_pairs) overlay["eval_pairs"] = *eval_pairs;
      if (fixed_batch) overlay["fixed_batch"] = true;
      if (out) overlay["out_dir"] = *out;
      if (seed) overlay["seed"] = *seed;

      char* resolved = nullptr;
      const std::string base = config_file ? read_file(*config_file) : "";
      check(cvnn_run_config_resolve(base.c_str(), overlay.dump().c_str(), &resolved));
      const std::string config = take(resolved);
      cvnn_train_result result{};
      check(cvnn_train(config.c_str(), on_step, &log_every, &result));
      std::fprintf(stderr, "trained %zu steps, final loss %.6f, checkpoint in %s\n", result.steps, result.final_loss,
                   Json::parse(config).at("out_dir").get<std::string>().c_str());
      if (result.has_fpr95) print_fpr95(result.final_fpr95);
    } else if (eval->parsed()) {
      ModelHandle model;
      check(cvnn_model_load(eval_ckpt.c_str(), &model.p));
      if (eval_arch) {
        char* text = nullptr;
        check(cvnn_model_config(model.p, &text));
        const std::string actual = Json::parse(take(text)).at("architecture").get<std::string>();
        if (actual != *eval_arch) {
          throw Failure{CVNN_ERR_CONTRACT, "checkpoint holds a " + actual + " model, not " + *eval_arch};
        }
      }
      StoreHandle store;
      load_store(eval_flags, patch_size_of(model.p), store);
      double fpr = 0.0, auc = 0.0;
      const std::string match = eval_flags.match.value_or("");
      check(cvnn_evaluate(model.p, store.p, match.c_str(), num_pairs, eval_seed, roc_path.c_str(), &fpr, &auc));
      std::fprintf(stderr, "auc %.6f, roc written to %s\n", auc, roc_path.c_str());
      print_fpr95(fpr);
    } else if (describe->parsed()) {
      ModelHandle model;
      check(cvnn_model_load(desc_ckpt.c_str(), &model.p));
      StoreHandle store;
      load_store(desc_flags, patch_size_of(model.p), store);
      check(cvnn_describe(model.p, store.p, desc_out.c_str()));
      std::printf("wrote %zu descriptors to %s\n", cvnn_store_size(store.p), desc_out.c_str());
    } else if (verify->parsed()) {
      int passed = 0;
      check(cvnn_verify(verify_seed, on_suite, nullptr, &passed));
      std::printf("%s\n", passed ? "all suites passed" : "SOME SUITES FAILED");
      return passed ? 0 : 1;
    } else if (ingest->parsed()) {
      StoreHandle store;
      load_store(ingest_flags, ingest_patch, store);
      check(cvnn_store_save(store.p, ingest_out.c_str()));
      std::printf("stored %zu patches of %zupx in %s\n", cvnn_store_size(store.p), cvnn_store_patch_size(store.p),
                  ingest_out.c_str());
    }
  } catch (const Failure& f) {
    std::fprintf(stderr, "error (%s): %s\n", cvnn_status_name(f.status), f.message.c_str());
    return f.status == CVNN_ERR_ARGUMENT ? 2 : 1;
  } catch (const Json::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
