#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cvnn/layers.hpp"
#include "cvnn/objectives.hpp"
#include "cvnn/optim.hpp"

namespace cvnn {

enum class Architecture { ccn, ctn };
/// How the real stem output becomes complex: per-plane 2D DFT, or a zero
/// imaginary part.
enum class InputConversion { dft, zero_imag };
/// siamese: one trunk applied to the real and the imaginary features.
/// pseudo_siamese: separate trunks for the two parts.
enum class DecisionMode { siamese, pseudo_siamese };

struct ModelConfig {
  Architecture architecture = Architecture::ctn;
  InputConversion input_conversion = InputConversion::dft;
  BnMode bn_mode = BnMode::per_component;
  DistanceMode distance_mode = DistanceMode::modulus_sum;
  LossForm loss_form = LossForm::corrected;
  DecisionMode decision_mode = DecisionMode::siamese;
  InitScheme init_scheme = InitScheme::rayleigh;
  std::size_t patch_size = 32;      // square, divisible by 8
  std::size_t descriptor_dim = 128;
  std::size_t decision_width = 4096;
  double bn_momentum = 0.9;
  double bn_eps = 1e-5;
  AdamOptions adam;
  std::uint64_t seed = 0;

  bool operator==(const ModelConfig&) const = default;

  /// Input channels: 2 for CCN (stacked pair), 1 for CTN.
  std::size_t input_channels() const { return architecture == Architecture::ccn ? 2 : 1; }
  void validate() const;
};

std::string to_json(const ModelConfig& config);
/// Missing keys keep their defaults; unknown keys and bad values throw.
ModelConfig model_config_from_json(const std::string& text);

/// Real stem, input conversion and three residual stages with pooling.
/// (N, C, S, S) real -> (N, 128, S/8, S/8) complex.
class FeatureModule {
 public:
  FeatureModule(const ModelConfig& config, Rng& rng);
  CVar forward(Tape& tape, Var x, Mode mode);
  void collect(std::vector<Parameter*>& out);
  std::vector<ComplexBN*> batch_norms();

  RealConv stem;
  std::vector<ComplexResidualBlock> blocks;
  ComplexBN out_bn;  // normalizes the residual stream handed to the decision/metric module

 private:
  InputConversion conversion_;
};

/// Real trunk of three relu FC layers and a sigmoid head over the
/// concatenated branch outputs. (N, D) complex -> (N) in (0,1).
class DecisionModule {
 public:
  DecisionModule(const ModelConfig& config, std::size_t in_features, Rng& rng);
  Var forward(Tape& tape, CVar features);
  void collect(std::vector<Parameter*>& out);

  std::vector<RealFC> trunk;     // real branch (and imaginary when siamese)
  std::vector<RealFC> trunk_im;  // pseudo_siamese only
  RealFC head;

 private:
  Var run(Tape& tape, std::vector<RealFC>& layers, Var x);
  DecisionMode mode_;
};

/// Complex FC to the descriptor followed by per-part l2 normalization.
class MetricModule {
 public:
  MetricModule(const ModelConfig& config, std::size_t in_features, Rng& rng);
  CVar forward(Tape& tape, CVar features);
  void collect(std::vector<Parameter*>& out);

  ComplexFC fc;
};

struct TripletDescriptors {
  CVar p1;
  CVar p2;
  CVar n;
};

class Model {
 public:
  explicit Model(const ModelConfig& config);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return config_; }

  /// Every parameter including batch-norm buffers, in a fixed order.
  std::vector<Parameter*> parameters();
  std::vector<Parameter*> trainable_parameters();

  /// CCN: pairs (N, 2, S, S) -> scores (N).
  Var score_pairs(Tape& tape, const Tensor& pairs, Mode mode);
  /// CTN: patches (N, 1, S, S) -> descriptors (N, D).
  CVar describe(Tape& tape, const Tensor& patches, Mode mode);
  /// CTN training: the three branches run as one batch of 3N through the
  /// shared weights, so batch statistics span all branches.
  TripletDescriptors forward_triplets(Tape& tape, const Tensor& p1, const Tensor& p2, const Tensor& n, Mode mode);

  /// Inference helpers, processed in chunks of `chunk` samples.
  std::vector<double> score(const Tensor& pairs, std::size_t chunk = 256);
  ComplexTensor describe(const Tensor& patches, std::size_t chunk = 256);

  /// Sets every running statistic to the batch statistics of `inputs`
  /// (one training-mode forward with momentum 0).
  void calibrate_bn(const Tensor& inputs);

  FeatureModule feature;
  std::optional<DecisionModule> decision;
  std::optional<MetricModule> metric;

 private:
  Model(const ModelConfig& config, Rng&& rng);
  void check_input(const Tensor& x, std::size_t channels) const;

  ModelConfig config_;
};

/// Checkpoint container: "config" (JSON text), "param.<name>" for every
/// parameter, then optimizer state when given.
Container checkpoint_container(Model& model, const Adam* optimizer);
void save_checkpoint(const std::filesystem::path& path, Model& model, const Adam* optimizer);

struct LoadedCheckpoint {
  std::unique_ptr<Model> model;
  Container contents;
};

/// Rebuilds the model from the embedded config and checks that every
/// parameter is present with the expected shape.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);
std::unique_ptr<Model> model_from_container(const Container& contents);

}  // namespace cvnn
