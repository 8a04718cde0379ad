#include <algorithm>
#include <fstream>
#include <sstream>

#include "cvnn/errors.hpp"
#include "cvnn/models.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace cvnn;
using testing::max_abs_diff;

namespace {

ModelConfig small(Architecture arch, BnMode bn = BnMode::per_component) {
  ModelConfig c;
  c.architecture = arch;
  c.bn_mode = bn;
  c.patch_size = 8;
  c.decision_width = 32;
  c.seed = 3;
  return c;
}

Tensor patches(std::size_t n, std::size_t channels, std::size_t size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor t(Shape{n, channels, size, size});
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

std::string bytes_of(const Container& c) {
  std::ostringstream out;
  c.write(out);
  return out.str();
}

}  // namespace

TEST_CASE("model config json") {
  ModelConfig c = small(Architecture::ccn, BnMode::covariance);
  c.distance_mode = DistanceMode::literal_clamped;
  c.adam.lr = 5e-4;
  CHECK(model_config_from_json(to_json(c)) == c);
  CHECK(model_config_from_json("{}") == ModelConfig{});
  CHECK(model_config_from_json(R"({"architecture": "ccn"})").architecture == Architecture::ccn);
  CHECK_THROWS_AS(model_config_from_json(R"({"architecure": "ccn"})"), ArgumentError);
  CHECK_THROWS_AS(model_config_from_json(R"({"architecture": "rnn"})"), ArgumentError);
  CHECK_THROWS_AS(model_config_from_json(R"({"patch_size": 12})"), ArgumentError);
  CHECK_THROWS_AS(model_config_from_json("{not json"), ArgumentError);
}

TEST_CASE("layer manifest") {
  Model ctn(ModelConfig{});
  std::vector<std::string> names;
  for (Parameter* p : ctn.parameters()) names.push_back(p->name);
  CHECK(names.front() == "feature.stem.conv.weight");
  const auto shape_of = [&](const std::string& name) {
    for (Parameter* p : ctn.parameters())
      if (p->name == name) return p->value.shape();
    FAIL("missing parameter " << name);
    return Shape{};
  };
  CHECK(shape_of("feature.stem.conv.weight") == Shape{32, 1, 3, 3});
  CHECK(shape_of("feature.block1.conv1.A") == Shape{32, 32, 3, 3});
  CHECK(shape_of("feature.block2.proj.A") == Shape{64, 32, 1, 1});
  CHECK(shape_of("feature.block3.conv2.B") == Shape{128, 128, 3, 3});
  CHECK(shape_of("metric.fc.A") == Shape{128, 128 * 4 * 4});

  ModelConfig ccn_cfg;
  ccn_cfg.architecture = Architecture::ccn;
  ccn_cfg.decision_width = 64;
  Model ccn(ccn_cfg);
  CHECK(ccn.feature.stem.weight.value.shape() == Shape{32, 2, 3, 3});
  CHECK(ccn.decision->trunk.size() == 3);
  CHECK(ccn.decision->trunk[0].weight.value.shape() == Shape{64, 128 * 16});
  CHECK(ccn.decision->head.weight.value.shape() == Shape{1, 128});
}

TEST_CASE("ctn descriptors") {
  Model model(small(Architecture::ctn));
  const Tensor x = patches(6, 1, 8, 1);
  Tape t;
  const CVar d = model.describe(t, x, Mode::train);
  CHECK(d.shape() == Shape{6, 128});
  const ComplexTensor v = d.value();
  for (std::size_t n = 0; n < 6; ++n) {
    double nr = 0.0, ni = 0.0;
    for (std::size_t k = 0; k < 128; ++k) {
      nr += v.real()[n * 128 + k] * v.real()[n * 128 + k];
      ni += v.imag()[n * 128 + k] * v.imag()[n * 128 + k];
    }
    CHECK(std::abs(nr - 1.0) < 1e-9);
    CHECK(std::abs(ni - 1.0) < 1e-9);
  }

  SUBCASE("shared branches") {
    const Tensor a = patches(4, 1, 8, 2), b = patches(4, 1, 8, 3), n = patches(4, 1, 8, 4);
    Tape t1, t2;
    const TripletDescriptors f = model.forward_triplets(t1, a, b, n, Mode::train);
    const TripletDescriptors g = model.forward_triplets(t2, b, a, n, Mode::train);
    CHECK(max_abs_diff(f.p1.value(), g.p2.value()) < 1e-12);
    CHECK(max_abs_diff(f.p2.value(), g.p1.value()) < 1e-12);

    Tape t3;
    const TripletDescriptors same = model.forward_triplets(t3, a, a, a, Mode::infer);
    CHECK(same.p1.value() == same.p2.value());
    CHECK(same.p1.value() == same.n.value());
  }
  SUBCASE("train and inference agree after calibration") {
    const Tensor big = patches(24, 1, 8, 5);
    Tape tt;
    const ComplexTensor train_out = model.describe(tt, big, Mode::train).value();
    model.calibrate_bn(big);
    CHECK(max_abs_diff(model.describe(big), train_out) < 1e-5);
  }
  SUBCASE("inference is independent of batching") {
    const Tensor big = patches(5, 1, 8, 6);
    const ComplexTensor whole = model.describe(big, 256);
    const ComplexTensor ones = model.describe(big, 1);
    CHECK(max_abs_diff(whole, ones) < 1e-9);
  }
  SUBCASE("wrong inputs") {
    Tape t2;
    CHECK_THROWS_AS(model.describe(t2, patches(2, 2, 8, 1), Mode::infer), ShapeError);
    CHECK_THROWS_AS(model.describe(t2, patches(2, 1, 16, 1), Mode::infer), ShapeError);
    CHECK_THROWS_AS(model.score_pairs(t2, patches(2, 2, 8, 1), Mode::infer), ContractError);
  }
}

TEST_CASE("ccn scores") {
  for (DecisionMode mode : {DecisionMode::siamese, DecisionMode::pseudo_siamese}) {
    ModelConfig cfg = small(Architecture::ccn);
    cfg.decision_mode = mode;
    Model model(cfg);
    const Tensor pairs = patches(128, 2, 8, 7);
    const std::vector<double> s = model.score(pairs);
    REQUIRE(s.size() == 128);
    for (double v : s) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
    CHECK(*std::min_element(s.begin(), s.end()) < *std::max_element(s.begin(), s.end()));
    CHECK(model.score(pairs) == s);
    Tape t;
    CHECK_THROWS_AS(model.describe(t, patches(2, 1, 8, 1), Mode::infer), ContractError);
  }
}

TEST_CASE("every trainable parameter receives gradient") {
  for (Architecture arch : {Architecture::ctn, Architecture::ccn}) {
    for (BnMode bn : {BnMode::per_component, BnMode::covariance}) {
      Model model(small(arch, bn));
      Tape t;
      Var loss;
      if (arch == Architecture::ctn) {
        const TripletDescriptors d =
            model.forward_triplets(t, patches(4, 1, 8, 1), patches(4, 1, 8, 2), patches(4, 1, 8, 3), Mode::train);
        const auto m = DistanceMode::modulus_sum;
        loss = softpn_loss(complex_distance(d.p1, d.p2, m), complex_distance(d.p1, d.n, m),
                           complex_distance(d.p2, d.n, m), LossForm::corrected);
      } else {
        loss = mse_pair_loss(model.score_pairs(t, patches(6, 2, 8, 4), Mode::train),
                             Tensor::vector({1, 0, 1, 0, 1, 0}));
      }
      t.backward(loss);
      for (Parameter* p : model.trainable_parameters()) {
        double norm = 0.0;
        for (double g : p->grad.data()) norm += g * g;
        INFO(p->name);
        CHECK(norm > 0.0);
      }
    }
  }
}

TEST_CASE("seeded construction and checkpoints") {
  Model a(small(Architecture::ctn)), b(small(Architecture::ctn));
  CHECK(bytes_of(checkpoint_container(a, nullptr)) == bytes_of(checkpoint_container(b, nullptr)));
  ModelConfig other = small(Architecture::ctn);
  other.seed = 4;
  Model c(other);
  CHECK(bytes_of(checkpoint_container(a, nullptr)) != bytes_of(checkpoint_container(c, nullptr)));

  testing::TempDir dir("ckpt");
  a.calibrate_bn(patches(8, 1, 8, 9));
  save_checkpoint(dir.path / "a.cvnn", a, nullptr);
  LoadedCheckpoint loaded = load_checkpoint(dir.path / "a.cvnn");
  CHECK(loaded.model->config() == a.config());
  const Tensor x = patches(3, 1, 8, 10);
  CHECK(loaded.model->describe(x) == a.describe(x));

  Container broken = checkpoint_container(a, nullptr);
  Container missing;
  for (const auto& [name, entry] : broken.entries())
    if (name != "param.metric.fc.A") missing.put(name, entry);
  CHECK_THROWS_AS(model_from_container(missing), ContractError);

  Container reshaped;
  for (const auto& [name, entry] : broken.entries())
    reshaped.put(name, name == "param.metric.fc.B" ? Container::Entry(Tensor(Shape{2, 2})) : entry);
  CHECK_THROWS_AS(model_from_container(reshaped), ContractError);
}
