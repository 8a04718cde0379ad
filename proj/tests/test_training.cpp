#include <fstream>
#include <numeric>
#include <sstream>

#include "cvnn/errors.hpp"
#include "cvnn/training.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace cvnn;

namespace {

RunConfig tiny_run(Architecture arch, const std::filesystem::path& out) {
  RunConfig c;
  c.model.architecture = arch;
  c.model.patch_size = 8;
  c.model.decision_width = 32;
  c.data.synth.num_ids = 16;
  c.data.synth.patches_per_id = 4;
  c.batch_size = 8;
  c.steps = 6;
  c.eval_pairs = 64;
  c.out_dir = out;
  c.seed = 11;
  return c;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

double window_mean(const std::vector<MetricsRow>& rows, std::size_t begin, std::size_t count) {
  double s = 0.0;
  for (std::size_t k = begin; k < begin + count; ++k) s += rows[k].loss;
  return s / static_cast<double>(count);
}

}  // namespace

TEST_CASE("run config validation") {
  testing::TempDir dir("cfg");
  RunConfig c = tiny_run(Architecture::ctn, dir.path);
  CHECK_NOTHROW(c.validate());
  c.batch_size = 1;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c = tiny_run(Architecture::ctn, dir.path);
  c.data.format = DataFormat::phototour;
  c.data.path = dir.path / "missing";
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c = tiny_run(Architecture::ctn, dir.path);
  c.data.format = DataFormat::hpatches;
  c.data.path = dir.path;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
}

TEST_CASE("run config json") {
  RunConfig c = tiny_run(Architecture::ccn, "somewhere");
  c.eval_data = DatasetSpec{};
  c.eval_data->synth_seed = 9;
  c.fixed_batch = true;
  const RunConfig back = run_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK((back.eval_data == c.eval_data));

  const RunConfig over = run_config_from_json(R"({"steps": 3, "model": {"bn_mode": "covariance"}})", c);
  CHECK(over.steps == 3);
  CHECK(over.model.bn_mode == BnMode::covariance);
  CHECK(over.model.architecture == Architecture::ccn);
  CHECK(over.batch_size == c.batch_size);

  CHECK_THROWS_AS(run_config_from_json(R"({"stpes": 3})"), ArgumentError);
  CHECK_THROWS_AS(run_config_from_json(R"({"data": {"format": "tarball"}})"), ArgumentError);
  CHECK_THROWS_AS(run_config_from_json("{"), ArgumentError);
}

TEST_CASE("held-out synthetic set uses the next seed") {
  RunConfig c = tiny_run(Architecture::ctn, "x");
  c.data.synth_seed = 5;
  const auto spec = held_out_spec(c);
  REQUIRE(spec);
  CHECK(spec->synth_seed == 6);
  c.data.format = DataFormat::phototour;
  CHECK_FALSE(held_out_spec(c));
}

TEST_CASE("same seed gives the same run") {
  testing::TempDir a("run_a"), b("run_b");
  for (Architecture arch : {Architecture::ctn, Architecture::ccn}) {
    const TrainResult ra = run_training(tiny_run(arch, a.path));
    const TrainResult rb = run_training(tiny_run(arch, b.path));
    REQUIRE(ra.metrics.size() == 6);
    for (std::size_t k = 0; k < ra.metrics.size(); ++k) CHECK(ra.metrics[k].loss == rb.metrics[k].loss);
    REQUIRE(ra.final_fpr95);
    CHECK(*ra.final_fpr95 == *rb.final_fpr95);
    CHECK(slurp(a.path / "model.cvnn") == slurp(b.path / "model.cvnn"));
    CHECK(std::filesystem::exists(a.path / "metrics.csv"));
    CHECK(std::filesystem::exists(a.path / "config.json"));
  }
}

TEST_CASE("metrics csv and periodic checkpoints") {
  testing::TempDir dir("ckpt");
  RunConfig c = tiny_run(Architecture::ctn, dir.path);
  c.eval_every = 2;
  c.checkpoint_every = 2;
  std::size_t calls = 0;
  const TrainResult r = run_training(c, [&](const MetricsRow&) { ++calls; });
  CHECK(calls == 6);
  CHECK(std::filesystem::exists(dir.path / "checkpoint_2.cvnn"));
  CHECK(std::filesystem::exists(dir.path / "checkpoint_4.cvnn"));
  CHECK_FALSE(std::filesystem::exists(dir.path / "checkpoint_6.cvnn"));
  for (const MetricsRow& row : r.metrics) CHECK(row.fpr95.has_value() == (row.step % 2 == 0));

  std::ifstream csv(dir.path / "metrics.csv");
  std::string line;
  std::getline(csv, line);
  CHECK(line == "step,loss,lr,wall_time,fpr95");
  std::size_t rows = 0;
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == 6);
}

TEST_CASE("smoothed loss decreases on synthetic data") {
  for (Architecture arch : {Architecture::ctn, Architecture::ccn}) {
    testing::TempDir dir("smooth");
    RunConfig c = tiny_run(arch, dir.path);
    c.data.synth.num_ids = 32;
    c.steps = 200;
    c.batch_size = arch == Architecture::ctn ? 8 : 16;
    const TrainResult r = run_training(c);
    const double first = window_mean(r.metrics, 0, 50), last = window_mean(r.metrics, 150, 50);
    INFO("arch " << static_cast<int>(arch) << ": first window " << first << ", last window " << last);
    CHECK(last < first);
  }
}

TEST_CASE("checkpoint reload evaluates identically") {
  testing::TempDir dir("reload");
  RunConfig c = tiny_run(Architecture::ctn, dir.path);
  const TrainResult r = run_training(c);
  LoadedCheckpoint loaded = load_checkpoint(r.checkpoint);
  CHECK(loaded.contents.contains("adam.step"));
  const auto spec = held_out_spec(c);
  const PatchStore store = load_dataset(*spec, 8);
  Rng rng(c.seed + 2);
  const auto pairs = evaluation_pairs(*spec, store, c.eval_pairs, rng);
  const Evaluation ev = evaluate(*loaded.model, store, pairs);
  CHECK(ev.fpr95 == *r.final_fpr95);
  REQUIRE(ev.roc.size() >= 2);
  CHECK(ev.roc.front().fpr == 0.0);
  CHECK(ev.roc.front().tpr == 0.0);
  CHECK(ev.roc.back().fpr == 1.0);
  CHECK(ev.roc.back().tpr == 1.0);
  CHECK(ev.auc >= 0.0);
  CHECK(ev.auc <= 1.0);

  const PatchStore wrong = load_dataset(*spec, 16);
  CHECK_THROWS_AS(evaluate(*loaded.model, wrong, pairs), ContractError);
}

TEST_CASE("descriptor export") {
  testing::TempDir dir("desc");
  ModelConfig mc;
  mc.patch_size = 8;
  Model model(mc);
  DatasetSpec spec;
  spec.synth.num_ids = 5;
  spec.synth.patches_per_id = 3;
  const PatchStore store = load_dataset(spec, 8);
  const ComplexTensor d = model.describe(store.patches);
  write_descriptors(dir.path / "d.cvnn", d, store.point_ids);
  write_descriptors(dir.path / "e.cvnn", model.describe(store.patches), store.point_ids);
  CHECK(slurp(dir.path / "d.cvnn") == slurp(dir.path / "e.cvnn"));

  const Container c = Container::load(dir.path / "d.cvnn");
  const ComplexTensor& back = c.complex("descriptors");
  REQUIRE(back.shape() == Shape{15, 128});
  for (std::size_t n = 0; n < 15; ++n) {
    double nr = 0.0, ni = 0.0;
    for (std::size_t k = 0; k < 128; ++k) {
      nr += back.real()[n * 128 + k] * back.real()[n * 128 + k];
      ni += back.imag()[n * 128 + k] * back.imag()[n * 128 + k];
    }
    CHECK(std::abs(std::sqrt(nr) - 1.0) < 1e-6);
    CHECK(std::abs(std::sqrt(ni) - 1.0) < 1e-6);
  }
  CHECK(c.tensor("point_ids")[14] == 4.0);

  std::ifstream txt(dir.path / "d.cvnn.txt");
  std::string line;
  std::getline(txt, line);
  CHECK(line == "# index point_id");
  std::getline(txt, line);
  CHECK(line == "0 0");

  const std::vector<std::int64_t> short_ids(3, 0);
  CHECK_THROWS_AS(write_descriptors(dir.path / "f.cvnn", d, short_ids), ShapeError);
}
