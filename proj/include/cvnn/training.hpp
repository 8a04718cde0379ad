#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cvnn/data.hpp"
#include "cvnn/models.hpp"

namespace cvnn {

enum class DataFormat { phototour, hpatches, synthetic, container };

/// Where patches come from. `path` is a directory (phototour, hpatches) or a
/// store file (container); synthetic data is generated from `synth` and
/// `synth_seed`. Patch size always follows the model config.
struct DatasetSpec {
  DataFormat format = DataFormat::synthetic;
  std::filesystem::path path;
  std::filesystem::path split_file;    // hpatches
  std::vector<std::string> splits;     // hpatches
  std::filesystem::path match_file;    // optional evaluation pairs (phototour)
  SynthOptions synth;
  std::uint64_t synth_seed = 0;

  bool operator==(const DatasetSpec&) const = default;
};

std::string to_json(const DatasetSpec& spec);
DatasetSpec dataset_spec_from_json(const std::string& text);

struct RunConfig {
  ModelConfig model;
  DatasetSpec data;
  std::optional<DatasetSpec> eval_data;  // held-out set; synthetic runs default to a new seed
  std::size_t batch_size = 128;
  std::size_t steps = 2000;
  std::size_t eval_every = 0;        // 0: evaluate only at the end
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only
  std::size_t eval_pairs = 2000;     // sampled evaluation pairs when no match file is given
  bool fixed_batch = false;          // draw one batch and reuse it every step
  std::filesystem::path out_dir = "run";
  std::uint64_t seed = 0;

  void validate() const;
};

std::string to_json(const RunConfig& config);
/// Missing keys keep defaults; `base` supplies them.
RunConfig run_config_from_json(const std::string& text, const RunConfig& base = {});

PatchStore load_dataset(const DatasetSpec& spec, std::size_t patch_size);

/// Evaluation set used by a run: `eval_data` when given, otherwise the
/// synthetic generator with seed synth_seed + 1 (for synthetic training
/// data). Returns nullopt when neither applies.
std::optional<DatasetSpec> held_out_spec(const RunConfig& config);

/// Pairs for evaluation: the match file when the spec names one, otherwise
/// `count` pairs sampled half matching from `rng`.
std::vector<PatchPair> evaluation_pairs(const DatasetSpec& spec, const PatchStore& store, std::size_t count,
                                        Rng& rng);

struct Evaluation {
  double fpr95 = 0.0;
  double auc = 0.0;
  std::vector<RocPoint> roc;
  std::vector<double> scores;
  std::vector<int> labels;
};

/// CCN scores the stacked pairs (larger is a match); CTN compares the
/// descriptor distance of the two patches (smaller is a match).
Evaluation evaluate(Model& model, const PatchStore& store, const std::vector<PatchPair>& pairs);

struct MetricsRow {
  std::size_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double wall_time = 0.0;
  std::optional<double> fpr95;
};

struct TrainResult {
  std::vector<MetricsRow> metrics;
  std::filesystem::path checkpoint;
  std::optional<double> final_fpr95;
};

/// Observer called after every step.
using StepCallback = std::function<void(const MetricsRow&)>;

/// Samples batches from `train`, minimizes SoftPN (CTN) or MSE (CCN) with
/// Adam, writes metrics.csv and checkpoints into `out_dir`. `eval` (when
/// given) is scored every `eval_every` steps and after the last step.
TrainResult train(Model& model, const RunConfig& config, const PatchStore& train_store, const PatchStore* eval_store,
                  const std::vector<PatchPair>* eval_pairs, const StepCallback& on_step = {});

/// Complete run: loads data, builds the model from config.model (seeded by
/// config.seed), trains and evaluates.
TrainResult run_training(const RunConfig& config, const StepCallback& on_step = {});

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows);

/// Descriptor export for CTN models: container with "descriptors" (N, D)
/// complex and "point_ids", plus `<out>.txt` listing "index point_id".
void write_descriptors(const std::filesystem::path& out, const ComplexTensor& descriptors,
                       const std::vector<std::int64_t>& point_ids);

}  // namespace cvnn
