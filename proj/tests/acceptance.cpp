// Acceptance gate: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Usage: cvnn_acceptance <path to cvnn CLI> [--only <name>]...
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cvnn/training.hpp"
#include "cvnn/verify.hpp"

using namespace cvnn;

namespace {

constexpr std::uint64_t kSeed = 20240601;

// Desk-scale proxy settings. The patch side is the smallest the three 2x
// pools allow, which keeps a 2000-step run inside the time budget on one
// core. The CTN pushes three branches per triplet, so its batch is cut to 32.
constexpr std::size_t kDeskPatch = 8;
constexpr std::size_t kDeskCtnBatch = 32;
constexpr std::size_t kDeskCcnBatch = 128;
constexpr std::size_t kDeskCcnWidth = 512;
constexpr std::size_t kDeskSteps = 2000;
constexpr std::size_t kEvalPairs = 2000;

struct Outcome {
  bool passed = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

Outcome from_suite(const SuiteReport& r) { return {r.passed, fmt("max_error=%.3g cases=%.0f ", r.max_error, double(r.cases)) + r.detail}; }

std::filesystem::path scratch(const std::string& tag) {
  const auto p = std::filesystem::temp_directory_path() / ("cvnn_acceptance_" + tag);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  const SuiteReport r = run_gradient_suite(builtin_gradient_cases(), 20, kSeed, GradCheckOptions{});
  const double secs = seconds_since(t0);
  Outcome o = from_suite(r);
  o.passed = o.passed && secs < 120.0;
  o.detail += fmt(" time=%.1fs (limit 120s)", secs);
  return o;
}

Outcome overfit() {
  RunConfig c;
  c.model.architecture = Architecture::ctn;
  c.model.loss_form = LossForm::corrected;
  c.model.patch_size = 8;
  c.model.adam.lr = 1e-3;
  c.batch_size = 32;
  c.steps = 500;
  c.fixed_batch = true;
  c.seed = kSeed;
  c.out_dir = scratch("overfit");
  const auto t0 = std::chrono::steady_clock::now();
  c.model.seed = c.seed;
  Model model(c.model);
  const PatchStore store = load_dataset(c.data, c.model.patch_size);
  const TrainResult r = train(model, c, store, nullptr, nullptr);
  const double secs = seconds_since(t0), loss = r.metrics.back().loss;
  std::filesystem::remove_all(c.out_dir);
  return {loss < 0.05 && secs < 600.0, fmt("final loss=%.5f (limit 0.05) time=%.1fs (limit 600s)", loss, secs)};
}

// FPR95 of the untrained model on the held-out pairs with labels replaced
// by fair coin flips.
double random_label_baseline(const RunConfig& c) {
  ModelConfig mc = c.model;
  mc.seed = c.seed;
  Model model(mc);
  const DatasetSpec spec = *held_out_spec(c);
  const PatchStore store = load_dataset(spec, mc.patch_size);
  Rng rng(c.seed + 2);
  std::vector<PatchPair> pairs = evaluation_pairs(spec, store, c.eval_pairs, rng);
  std::bernoulli_distribution coin(0.5);
  Rng label_rng(c.seed + 3);
  for (PatchPair& p : pairs) p.label = coin(label_rng) ? 1 : 0;
  return evaluate(model, store, pairs).fpr95;
}

Outcome desk(Architecture arch, double limit) {
  RunConfig c;
  c.model.architecture = arch;
  c.model.patch_size = kDeskPatch;
  c.model.decision_width = kDeskCcnWidth;
  c.data.synth.num_ids = 64;
  c.data.synth.patches_per_id = 8;
  c.data.synth.noise_sigma = 0.05;
  c.batch_size = arch == Architecture::ctn ? kDeskCtnBatch : kDeskCcnBatch;
  c.steps = kDeskSteps;
  c.eval_pairs = kEvalPairs;
  c.seed = kSeed;
  c.out_dir = scratch(arch == Architecture::ctn ? "desk_ctn" : "desk_ccn");

  const double baseline = random_label_baseline(c);
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult r = run_training(c);
  const double secs = seconds_since(t0), fpr = r.final_fpr95.value_or(1.0);
  std::filesystem::remove_all(c.out_dir);
  const bool ok = fpr < limit && secs < 1800.0 && std::abs(baseline - 0.95) <= 0.03;
  return {ok, fmt("held-out fpr95=%.4f (limit %.2f) ", fpr, limit) +
                  fmt("untrained random-label fpr95=%.4f (0.95 +/- 0.03) time=%.0fs (limit 1800s)", baseline, secs)};
}

std::string run_cli(const std::string& cli, const std::string& args, const std::filesystem::path& log) {
  const std::string cmd = "\"" + cli + "\" " + args + " > \"" + log.string() + "\" 2>/dev/null";
  if (std::system(cmd.c_str()) != 0) return "";
  std::ifstream in(log);
  std::string line, last;
  while (std::getline(in, line)) last = line;
  return last;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome reproducibility(const std::string& cli) {
  const auto dir = scratch("repro");
  const std::string common =
      "train --arch ctn --patch-size 8 --batch 16 --steps 40 --eval-pairs 500 --seed 7 --synth-ids 32 ";
  const std::string a = run_cli(cli, common + "--out \"" + (dir / "a").string() + "\"", dir / "a.log");
  const std::string b = run_cli(cli, common + "--out \"" + (dir / "b").string() + "\"", dir / "b.log");
  const std::string ca = slurp(dir / "a" / "model.cvnn"), cb = slurp(dir / "b" / "model.cvnn");
  std::filesystem::remove_all(dir);
  const bool ok = a.rfind("fpr95=", 0) == 0 && a == b && !ca.empty() && ca == cb;
  return {ok, "run a: '" + a + "', run b: '" + b + "', checkpoints " + (ca == cb ? "identical" : "differ") +
                  " (" + std::to_string(ca.size()) + " bytes)"};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: %s <cvnn cli> [--only name]...\n", argv[0]);
    return 2;
  }
  const std::string cli = argv[1];
  std::vector<std::string> only;
  for (int k = 2; k + 1 < argc; k += 2) {
    if (std::string(argv[k]) == "--only") only.push_back(argv[k + 1]);
  }

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient_suite", gradient_suite},
      {"conv_block_oracle", [] { return from_suite(run_conv_suite(100, kSeed)); }},
      {"bn_oracles", [] { return from_suite(run_bn_suite(50, kSeed)); }},
      {"loss_distance_properties", [] { return from_suite(run_loss_suite(10000, kSeed)); }},
      {"fpr95_brute_force", [] { return from_suite(run_fpr95_suite(1000, kSeed)); }},
      {"overfit_32_triplets", overfit},
      {"desk_ctn", [] { return desk(Architecture::ctn, 0.20); }},
      {"desk_ccn", [] { return desk(Architecture::ccn, 0.35); }},
      {"dft_suite", [] { return from_suite(run_dft_suite(kSeed)); }},
      {"reproducibility", [&] { return reproducibility(cli); }},
  };

  int failed = 0;
  for (const auto& [name, run] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    std::printf("%s %s: %s\n", o.passed ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
    failed += o.passed ? 0 : 1;
  }
  return failed ? 1 : 0;
}
