#include "cvnn/models.hpp"

#include <algorithm>

#include "cvnn/errors.hpp"
#include "json_util.hpp"

namespace cvnn {

namespace {

using detail::EnumTable;
using detail::Json;

constexpr EnumTable<Architecture, 2> kArchitectures{{{Architecture::ccn, "ccn"}, {Architecture::ctn, "ctn"}}};
constexpr EnumTable<InputConversion, 2> kConversions{
    {{InputConversion::dft, "dft"}, {InputConversion::zero_imag, "zero_imag"}}};
constexpr EnumTable<BnMode, 2> kBnModes{{{BnMode::per_component, "per_component"}, {BnMode::covariance, "covariance"}}};
constexpr EnumTable<DistanceMode, 2> kDistances{
    {{DistanceMode::modulus_sum, "modulus_sum"}, {DistanceMode::literal_clamped, "literal_clamped"}}};
constexpr EnumTable<LossForm, 2> kLosses{{{LossForm::corrected, "corrected"}, {LossForm::literal, "literal"}}};
constexpr EnumTable<DecisionMode, 2> kDecisions{
    {{DecisionMode::siamese, "siamese"}, {DecisionMode::pseudo_siamese, "pseudo_siamese"}}};
constexpr EnumTable<InitScheme, 2> kInits{{{InitScheme::rayleigh, "rayleigh"}, {InitScheme::glorot, "glorot"}}};

constexpr std::size_t kStemChannels = 32;
constexpr std::size_t kStageChannels[3][2] = {{32, 32}, {32, 64}, {64, 128}};
constexpr std::size_t kFeatureChannels = 128;

std::size_t feature_size(const ModelConfig& c) {
  const std::size_t side = c.patch_size / 8;
  return kFeatureChannels * side * side;
}

CVar flatten(CVar x) {
  const Shape& s = x.shape();
  return reshape(x, Shape{s[0], s.numel() / s[0]});
}

}  // namespace

void ModelConfig::validate() const {
  if (patch_size < 8 || patch_size % 8 != 0) {
    throw ArgumentError("patch_size must be a positive multiple of 8, got " + std::to_string(patch_size));
  }
  if (descriptor_dim == 0) throw ArgumentError("descriptor_dim must be positive");
  if (decision_width == 0) throw ArgumentError("decision_width must be positive");
  if (!(bn_momentum >= 0.0 && bn_momentum < 1.0)) throw ArgumentError("bn_momentum must lie in [0, 1)");
  if (!(bn_eps > 0.0)) throw ArgumentError("bn_eps must be positive");
  if (!(adam.lr > 0.0)) throw ArgumentError("learning rate must be positive");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw ArgumentError("Adam betas must lie in [0, 1)");
  }
  if (!(adam.eps > 0.0)) throw ArgumentError("Adam eps must be positive");
  if (!(adam.weight_decay >= 0.0) || !(adam.clip_norm >= 0.0)) {
    throw ArgumentError("weight_decay and clip_norm must be non-negative");
  }
}

std::string to_json(const ModelConfig& c) {
  Json j;
  j["architecture"] = detail::enum_name(kArchitectures, c.architecture);
  j["input_conversion"] = detail::enum_name(kConversions, c.input_conversion);
  j["bn_mode"] = detail::enum_name(kBnModes, c.bn_mode);
  j["distance_mode"] = detail::enum_name(kDistances, c.distance_mode);
  j["loss_form"] = detail::enum_name(kLosses, c.loss_form);
  j["decision_mode"] = detail::enum_name(kDecisions, c.decision_mode);
  j["init_scheme"] = detail::enum_name(kInits, c.init_scheme);
  j["patch_size"] = c.patch_size;
  j["descriptor_dim"] = c.descriptor_dim;
  j["decision_width"] = c.decision_width;
  j["bn_momentum"] = c.bn_momentum;
  j["bn_eps"] = c.bn_eps;
  j["adam"] = {{"lr", c.adam.lr},
               {"beta1", c.adam.beta1},
               {"beta2", c.adam.beta2},
               {"eps", c.adam.eps},
               {"weight_decay", c.adam.weight_decay},
               {"clip_norm", c.adam.clip_norm}};
  j["seed"] = c.seed;
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  const Json j = detail::parse_json(text, "model config");
  detail::check_keys(j,
                     {"architecture", "input_conversion", "bn_mode", "distance_mode", "loss_form", "decision_mode",
                      "init_scheme", "patch_size", "descriptor_dim", "decision_width", "bn_momentum", "bn_eps", "adam",
                      "seed"},
                     "model config");
  ModelConfig c;
  detail::read_enum(j, "architecture", kArchitectures, c.architecture);
  detail::read_enum(j, "input_conversion", kConversions, c.input_conversion);
  detail::read_enum(j, "bn_mode", kBnModes, c.bn_mode);
  detail::read_enum(j, "distance_mode", kDistances, c.distance_mode);
  detail::read_enum(j, "loss_form", kLosses, c.loss_form);
  detail::read_enum(j, "decision_mode", kDecisions, c.decision_mode);
  detail::read_enum(j, "init_scheme", kInits, c.init_scheme);
  detail::read_field(j, "patch_size", c.patch_size);
  detail::read_field(j, "descriptor_dim", c.descriptor_dim);
  detail::read_field(j, "decision_width", c.decision_width);
  detail::read_field(j, "bn_momentum", c.bn_momentum);
  detail::read_field(j, "bn_eps", c.bn_eps);
  detail::read_field(j, "seed", c.seed);
  if (j.contains("adam")) {
    const Json& a = j.at("adam");
    detail::check_keys(a, {"lr", "beta1", "beta2", "eps", "weight_decay", "clip_norm"}, "adam");
    detail::read_field(a, "lr", c.adam.lr);
    detail::read_field(a, "beta1", c.adam.beta1);
    detail::read_field(a, "beta2", c.adam.beta2);
    detail::read_field(a, "eps", c.adam.eps);
    detail::read_field(a, "weight_decay", c.adam.weight_decay);
    detail::read_field(a, "clip_norm", c.adam.clip_norm);
  }
  c.validate();
  return c;
}

FeatureModule::FeatureModule(const ModelConfig& config, Rng& rng)
    : stem("feature.stem.conv", config.input_channels(), kStemChannels, 3, rng),
      out_bn("feature.out_bn", kStageChannels[2][1], config.bn_mode),
      conversion_(config.input_conversion) {
  blocks.reserve(3);
  for (std::size_t b = 0; b < 3; ++b) {
    blocks.emplace_back("feature.block" + std::to_string(b + 1), kStageChannels[b][0], kStageChannels[b][1],
                        config.bn_mode, rng, config.init_scheme);
  }
  for (ComplexBN* bn : batch_norms()) {
    bn->momentum = config.bn_momentum;
    bn->eps = config.bn_eps;
  }
}

CVar FeatureModule::forward(Tape& tape, Var x, Mode mode) {
  const Var h = relu(stem.forward(tape, x));
  CVar z = conversion_ == InputConversion::dft ? dft2d(h) : CVar{h, tape.constant(Tensor(h.shape()))};
  for (auto& block : blocks) z = complex_pool2d(block.forward(tape, z, mode), 2, 2);
  return out_bn.forward(tape, z, mode);
}

void FeatureModule::collect(std::vector<Parameter*>& out) {
  stem.collect(out);
  for (auto& block : blocks) block.collect(out);
  out_bn.collect(out);
}

std::vector<ComplexBN*> FeatureModule::batch_norms() {
  std::vector<ComplexBN*> out;
  for (auto& block : blocks) {
    out.push_back(&block.bn1);
    out.push_back(&block.bn2);
  }
  out.push_back(&out_bn);
  return out;
}

namespace {

std::vector<RealFC> make_trunk(const std::string& prefix, std::size_t in, std::size_t width, Rng& rng) {
  std::vector<RealFC> trunk;
  trunk.reserve(3);
  for (std::size_t k = 0; k < 3; ++k) trunk.emplace_back(prefix + ".fc" + std::to_string(k + 1), k ? width : in, width, rng);
  return trunk;
}

}  // namespace

DecisionModule::DecisionModule(const ModelConfig& config, std::size_t in_features, Rng& rng)
    : trunk(make_trunk(config.decision_mode == DecisionMode::siamese ? "decision.trunk" : "decision.trunk_re",
                       in_features, config.decision_width, rng)),
      trunk_im(config.decision_mode == DecisionMode::siamese
                   ? std::vector<RealFC>{}
                   : make_trunk("decision.trunk_im", in_features, config.decision_width, rng)),
      head("decision.head", 2 * config.decision_width, 1, rng, RealFC::Init::glorot),
      mode_(config.decision_mode) {}

Var DecisionModule::run(Tape& tape, std::vector<RealFC>& layers, Var x) {
  for (auto& fc : layers) x = relu(fc.forward(tape, x));
  return x;
}

Var DecisionModule::forward(Tape& tape, CVar features) {
  const std::size_t n = features.shape()[0];
  Var h_re, h_im;
  if (mode_ == DecisionMode::siamese) {
    // One pass over [re; im] keeps the shared weights in a single GEMM.
    const std::array<Var, 2> rows{features.re, features.im};
    const Var h = run(tape, trunk, concat(rows, 0));
    h_re = slice(h, 0, 0, n);
    h_im = slice(h, 0, n, 2 * n);
  } else {
    h_re = run(tape, trunk, features.re);
    h_im = run(tape, trunk_im, features.im);
  }
  const std::array<Var, 2> parts{h_re, h_im};
  const Var logits = head.forward(tape, concat(parts, 1));
  return sigmoid(reshape(logits, Shape{n}));
}

void DecisionModule::collect(std::vector<Parameter*>& out) {
  for (auto& fc : trunk) fc.collect(out);
  for (auto& fc : trunk_im) fc.collect(out);
  head.collect(out);
}

MetricModule::MetricModule(const ModelConfig& config, std::size_t in_features, Rng& rng)
    : fc("metric.fc", in_features, config.descriptor_dim, rng, config.init_scheme) {}

CVar MetricModule::forward(Tape& tape, CVar features) { return cl2_normalize(fc.forward(tape, features)); }

void MetricModule::collect(std::vector<Parameter*>& out) { fc.collect(out); }

namespace {

const ModelConfig& validated(const ModelConfig& c) {
  c.validate();
  return c;
}

}  // namespace

Model::Model(const ModelConfig& config) : Model(validated(config), Rng(config.seed)) {}

// The feature module draws from the generator first, then the head.
Model::Model(const ModelConfig& config, Rng&& rng) : feature(config, rng), config_(config) {
  if (config.architecture == Architecture::ccn) {
    decision.emplace(config, feature_size(config), rng);
  } else {
    metric.emplace(config, feature_size(config), rng);
  }
}

std::vector<Parameter*> Model::parameters() {
  std::vector<Parameter*> out;
  feature.collect(out);
  if (decision) decision->collect(out);
  if (metric) metric->collect(out);
  return out;
}

std::vector<Parameter*> Model::trainable_parameters() {
  std::vector<Parameter*> out = parameters();
  std::erase_if(out, [](const Parameter* p) { return !p->trainable; });
  return out;
}

void Model::check_input(const Tensor& x, std::size_t channels) const {
  const Shape& s = x.shape();
  if (s.rank() != 4 || s[1] != channels || s[2] != config_.patch_size || s[3] != config_.patch_size) {
    throw ShapeError("expected input (N, " + std::to_string(channels) + ", " + std::to_string(config_.patch_size) +
                     ", " + std::to_string(config_.patch_size) + "), got " + s.str());
  }
}

Var Model::score_pairs(Tape& tape, const Tensor& pairs, Mode mode) {
  if (!decision) throw ContractError("score_pairs needs a CCN model");
  check_input(pairs, 2);
  return decision->forward(tape, flatten(feature.forward(tape, tape.constant(pairs), mode)));
}

CVar Model::describe(Tape& tape, const Tensor& patches, Mode mode) {
  if (!metric) throw ContractError("describe needs a CTN model");
  check_input(patches, 1);
  return metric->forward(tape, flatten(feature.forward(tape, tape.constant(patches), mode)));
}

TripletDescriptors Model::forward_triplets(Tape& tape, const Tensor& p1, const Tensor& p2, const Tensor& n,
                                           Mode mode) {
  if (p1.shape() != p2.shape() || p1.shape() != n.shape()) {
    throw ShapeError("triplet branches differ in shape: " + p1.shape().str() + ", " + p2.shape().str() + ", " +
                     n.shape().str());
  }
  const std::array<Tensor, 3> branches{p1, p2, n};
  const CVar d = describe(tape, concat(branches, 0), mode);
  const std::size_t b = p1.shape()[0];
  return {slice(d, 0, 0, b), slice(d, 0, b, 2 * b), slice(d, 0, 2 * b, 3 * b)};
}

std::vector<double> Model::score(const Tensor& pairs, std::size_t chunk) {
  check_input(pairs, 2);
  std::vector<double> out;
  const std::size_t n = pairs.shape()[0];
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    Tape tape;
    const Var s = score_pairs(tape, slice(pairs, 0, begin, std::min(n, begin + chunk)), Mode::infer);
    const auto& v = s.value().data();
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

ComplexTensor Model::describe(const Tensor& patches, std::size_t chunk) {
  check_input(patches, 1);
  std::vector<ComplexTensor> parts;
  const std::size_t n = patches.shape()[0];
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    Tape tape;
    parts.push_back(describe(tape, slice(patches, 0, begin, std::min(n, begin + chunk)), Mode::infer).value());
  }
  return concat(parts, 0);
}

void Model::calibrate_bn(const Tensor& inputs) {
  std::vector<ComplexBN*> bns = feature.batch_norms();
  for (ComplexBN* bn : bns) bn->momentum = 0.0;
  try {
    Tape tape;
    if (decision) {
      score_pairs(tape, inputs, Mode::train);
    } else {
      describe(tape, inputs, Mode::train);
    }
  } catch (...) {
    for (ComplexBN* bn : bns) bn->momentum = config_.bn_momentum;
    throw;
  }
  for (ComplexBN* bn : bns) bn->momentum = config_.bn_momentum;
}

Container checkpoint_container(Model& model, const Adam* optimizer) {
  Container c;
  c.put("config", to_json(model.config()));
  for (const Parameter* p : model.parameters()) c.put("param." + p->name, p->value);
  if (optimizer) optimizer->save_state(c);
  return c;
}

void save_checkpoint(const std::filesystem::path& path, Model& model, const Adam* optimizer) {
  checkpoint_container(model, optimizer).save(path);
}

std::unique_ptr<Model> model_from_container(const Container& contents) {
  if (!contents.contains("config")) throw ContractError("checkpoint has no config entry");
  auto model = std::make_unique<Model>(model_config_from_json(contents.text("config")));
  for (Parameter* p : model->parameters()) {
    const std::string key = "param." + p->name;
    if (!contents.contains(key)) throw ContractError("checkpoint is missing parameter " + p->name);
    const Tensor& stored = contents.tensor(key);
    if (stored.shape() != p->value.shape()) {
      throw ContractError("parameter " + p->name + " has shape " + stored.shape().str() + " in the checkpoint but " +
                          p->value.shape().str() + " in the model");
    }
    p->value = stored;
  }
  return model;
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  Container contents = Container::load(path);
  auto model = model_from_container(contents);
  return {std::move(model), std::move(contents)};
}

}  // namespace cvnn
