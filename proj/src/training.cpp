#include "cvnn/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>

#include "cvnn/errors.hpp"
#include "json_util.hpp"

namespace cvnn {

namespace {

using detail::Json;

constexpr detail::EnumTable<DataFormat, 4> kFormats{{{DataFormat::phototour, "phototour"},
                                                     {DataFormat::hpatches, "hpatches"},
                                                     {DataFormat::synthetic, "synthetic"},
                                                     {DataFormat::container, "container"}}};

Json dataset_json(const DatasetSpec& d) {
  return {{"format", detail::enum_name(kFormats, d.format)},
          {"path", d.path.string()},
          {"split_file", d.split_file.string()},
          {"splits", d.splits},
          {"match_file", d.match_file.string()},
          {"synth",
           {{"num_ids", d.synth.num_ids},
            {"patches_per_id", d.synth.patches_per_id},
            {"noise_sigma", d.synth.noise_sigma},
            {"max_shift", d.synth.max_shift}}},
          {"synth_seed", d.synth_seed}};
}

void read_path(const Json& j, const char* key, std::filesystem::path& out) {
  std::string s = out.string();
  detail::read_field(j, key, s);
  out = s;
}

DatasetSpec dataset_from_json(const Json& j, DatasetSpec d) {
  detail::check_keys(j, {"format", "path", "split_file", "splits", "match_file", "synth", "synth_seed"}, "dataset");
  detail::read_enum(j, "format", kFormats, d.format);
  read_path(j, "path", d.path);
  read_path(j, "split_file", d.split_file);
  detail::read_field(j, "splits", d.splits);
  read_path(j, "match_file", d.match_file);
  detail::read_field(j, "synth_seed", d.synth_seed);
  if (j.contains("synth")) {
    const Json& s = j.at("synth");
    detail::check_keys(s, {"num_ids", "patches_per_id", "noise_sigma", "max_shift"}, "synth");
    detail::read_field(s, "num_ids", d.synth.num_ids);
    detail::read_field(s, "patches_per_id", d.synth.patches_per_id);
    detail::read_field(s, "noise_sigma", d.synth.noise_sigma);
    detail::read_field(s, "max_shift", d.synth.max_shift);
  }
  return d;
}

void check_dataset(const DatasetSpec& d, const char* what) {
  const auto require = [&](const std::filesystem::path& p, const char* field) {
    if (p.empty()) throw ArgumentError(std::string(what) + ": " + field + " is required");
    if (!std::filesystem::exists(p)) throw ArgumentError(std::string(what) + ": " + p.string() + " does not exist");
  };
  switch (d.format) {
    case DataFormat::phototour:
    case DataFormat::container:
      require(d.path, "path");
      break;
    case DataFormat::hpatches:
      require(d.path, "path");
      require(d.split_file, "split file");
      if (d.splits.empty()) throw ArgumentError(std::string(what) + ": hpatches needs at least one split name");
      break;
    case DataFormat::synthetic:
      break;
  }
  if (!d.match_file.empty()) require(d.match_file, "match file");
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Row `r` of every complex (N, D) descriptor for the listed patches.
ComplexTensor gather_rows(const ComplexTensor& all, const std::vector<std::size_t>& rows) {
  const std::size_t d = all.shape()[1];
  Tensor re(Shape{rows.size(), d}), im(Shape{rows.size(), d});
  for (std::size_t k = 0; k < rows.size(); ++k) {
    std::copy_n(all.real().data().begin() + static_cast<std::ptrdiff_t>(rows[k] * d), d,
                re.data().begin() + static_cast<std::ptrdiff_t>(k * d));
    std::copy_n(all.imag().data().begin() + static_cast<std::ptrdiff_t>(rows[k] * d), d,
                im.data().begin() + static_cast<std::ptrdiff_t>(k * d));
  }
  return ComplexTensor(std::move(re), std::move(im));
}

}  // namespace

std::string to_json(const DatasetSpec& spec) { return dataset_json(spec).dump(); }

DatasetSpec dataset_spec_from_json(const std::string& text) {
  return dataset_from_json(detail::parse_json(text, "dataset"), DatasetSpec{});
}

void RunConfig::validate() const {
  model.validate();
  if (batch_size < 2) throw ArgumentError("batch size must be at least 2 (batch normalization needs two samples)");
  if (steps == 0) throw ArgumentError("steps must be positive");
  if (out_dir.empty()) throw ArgumentError("output directory is required");
  check_dataset(data, "training data");
  if (eval_data) check_dataset(*eval_data, "evaluation data");
  if (eval_pairs < 2) throw ArgumentError("eval_pairs must be at least 2");
}

std::string to_json(const RunConfig& c) {
  Json j;
  j["model"] = Json::parse(to_json(c.model));
  j["data"] = dataset_json(c.data);
  if (c.eval_data) j["eval_data"] = dataset_json(*c.eval_data);
  j["batch_size"] = c.batch_size;
  j["steps"] = c.steps;
  j["eval_every"] = c.eval_every;
  j["checkpoint_every"] = c.checkpoint_every;
  j["eval_pairs"] = c.eval_pairs;
  j["fixed_batch"] = c.fixed_batch;
  j["out_dir"] = c.out_dir.string();
  j["seed"] = c.seed;
  return j.dump(2);
}

RunConfig run_config_from_json(const std::string& text, const RunConfig& base) {
  const Json j = detail::parse_json(text, "run config");
  detail::check_keys(j,
                     {"model", "data", "eval_data", "batch_size", "steps", "eval_every", "checkpoint_every",
                      "eval_pairs", "fixed_batch", "out_dir", "seed"},
                     "run config");
  RunConfig c = base;
  if (j.contains("model")) {
    Json merged = Json::parse(to_json(base.model));
    merged.merge_patch(j.at("model"));
    c.model = model_config_from_json(merged.dump());
  }
  if (j.contains("data")) c.data = dataset_from_json(j.at("data"), base.data);
  if (j.contains("eval_data")) c.eval_data = dataset_from_json(j.at("eval_data"), base.eval_data.value_or(DatasetSpec{}));
  detail::read_field(j, "batch_size", c.batch_size);
  detail::read_field(j, "steps", c.steps);
  detail::read_field(j, "eval_every", c.eval_every);
  detail::read_field(j, "checkpoint_every", c.checkpoint_every);
  detail::read_field(j, "eval_pairs", c.eval_pairs);
  detail::read_field(j, "fixed_batch", c.fixed_batch);
  read_path(j, "out_dir", c.out_dir);
  detail::read_field(j, "seed", c.seed);
  return c;
}

PatchStore load_dataset(const DatasetSpec& spec, std::size_t patch_size) {
  switch (spec.format) {
    case DataFormat::phototour:
      return load_phototour(spec.path, patch_size);
    case DataFormat::hpatches:
      return load_hpatches(spec.path, spec.split_file, spec.splits, patch_size);
    case DataFormat::synthetic: {
      SynthOptions o = spec.synth;
      o.patch_size = patch_size;
      Rng rng(spec.synth_seed);
      return synth_generate(o, rng);
    }
    case DataFormat::container: {
      PatchStore store = load_store(spec.path);
      if (store.patch_size() != patch_size) {
        throw ContractError("store " + spec.path.string() + " holds " + std::to_string(store.patch_size()) +
                            "px patches but the model expects " + std::to_string(patch_size));
      }
      return store;
    }
  }
  throw ArgumentError("unknown data format");
}

std::optional<DatasetSpec> held_out_spec(const RunConfig& config) {
  if (config.eval_data) return config.eval_data;
  if (config.data.format != DataFormat::synthetic) return std::nullopt;
  DatasetSpec spec = config.data;
  spec.synth_seed = config.data.synth_seed + 1;
  return spec;
}

std::vector<PatchPair> evaluation_pairs(const DatasetSpec& spec, const PatchStore& store, std::size_t count,
                                        Rng& rng) {
  if (!spec.match_file.empty()) return load_match_file(spec.match_file, store);
  return sample_pairs(store, count, 0.5, rng);
}

Evaluation evaluate(Model& model, const PatchStore& store, const std::vector<PatchPair>& pairs) {
  if (pairs.empty()) throw ArgumentError("no evaluation pairs");
  if (store.patch_size() != model.config().patch_size) {
    throw ContractError("evaluation patches are " + std::to_string(store.patch_size()) + "px but the model expects " +
                        std::to_string(model.config().patch_size));
  }
  Evaluation ev;
  ev.labels.reserve(pairs.size());
  for (const PatchPair& p : pairs) ev.labels.push_back(p.label);
  Polarity polarity = Polarity::larger_is_match;

  if (model.config().architecture == Architecture::ccn) {
    constexpr std::size_t kChunk = 512;
    for (std::size_t begin = 0; begin < pairs.size(); begin += kChunk) {
      const std::size_t end = std::min(pairs.size(), begin + kChunk);
      std::vector<std::size_t> a, b;
      for (std::size_t k = begin; k < end; ++k) {
        a.push_back(pairs[k].a);
        b.push_back(pairs[k].b);
      }
      const std::vector<double> s = model.score(store.gather_pairs(a, b));
      ev.scores.insert(ev.scores.end(), s.begin(), s.end());
    }
  } else {
    polarity = Polarity::smaller_is_match;
    std::vector<std::size_t> used;
    for (const PatchPair& p : pairs) {
      used.push_back(p.a);
      used.push_back(p.b);
    }
    std::sort(used.begin(), used.end());
    used.erase(std::unique(used.begin(), used.end()), used.end());
    std::map<std::size_t, std::size_t> row;
    for (std::size_t k = 0; k < used.size(); ++k) row[used[k]] = k;
    const ComplexTensor desc = model.describe(store.gather(used));
    std::vector<std::size_t> ra, rb;
    for (const PatchPair& p : pairs) {
      ra.push_back(row.at(p.a));
      rb.push_back(row.at(p.b));
    }
    ev.scores = complex_distance(gather_rows(desc, ra), gather_rows(desc, rb), model.config().distance_mode);
  }
  ev.fpr95 = fpr95(ev.scores, ev.labels, polarity);
  ev.roc = roc_curve(ev.scores, ev.labels, polarity);
  ev.auc = roc_auc(ev.roc);
  return ev;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "step,loss,lr,wall_time,fpr95\n" << std::setprecision(17);
  for (const MetricsRow& r : rows) {
    out << r.step << ',' << r.loss << ',' << r.lr << ',' << std::setprecision(6) << r.wall_time
        << std::setprecision(17) << ',';
    if (r.fpr95) out << *r.fpr95;
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

TrainResult train(Model& model, const RunConfig& config, const PatchStore& train_store, const PatchStore* eval_store,
                  const std::vector<PatchPair>* eval_pairs, const StepCallback& on_step) {
  config.validate();
  if (train_store.patch_size() != model.config().patch_size) {
    throw ContractError("training patches are " + std::to_string(train_store.patch_size()) +
                        "px but the model expects " + std::to_string(model.config().patch_size));
  }
  std::filesystem::create_directories(config.out_dir);
  const bool ctn = model.config().architecture == Architecture::ctn;
  Rng sampler(config.seed + 1);
  Adam adam(model.trainable_parameters(), model.config().adam);
  TrainResult result;
  const auto t0 = std::chrono::steady_clock::now();

  std::vector<PatchTriplet> triplets;
  std::vector<PatchPair> pairs;
  const auto draw = [&]() {
    if (ctn) {
      triplets = sample_triplets(train_store, config.batch_size, sampler);
    } else {
      pairs = sample_pairs(train_store, config.batch_size, 0.5, sampler);
    }
  };
  if (config.fixed_batch) draw();

  for (std::size_t step = 1; step <= config.steps; ++step) {
    if (!config.fixed_batch) draw();
    adam.zero_grad();
    Tape tape;
    Var loss;
    if (ctn) {
      std::vector<std::size_t> p1, p2, n;
      for (const PatchTriplet& t : triplets) {
        p1.push_back(t.p1);
        p2.push_back(t.p2);
        n.push_back(t.n);
      }
      const TripletDescriptors d = model.forward_triplets(tape, train_store.gather(p1), train_store.gather(p2),
                                                          train_store.gather(n), Mode::train);
      const DistanceMode dm = model.config().distance_mode;
      loss = softpn_loss(complex_distance(d.p1, d.p2, dm), complex_distance(d.p1, d.n, dm),
                         complex_distance(d.p2, d.n, dm), model.config().loss_form);
    } else {
      std::vector<std::size_t> a, b;
      Tensor labels(Shape{pairs.size()});
      for (std::size_t k = 0; k < pairs.size(); ++k) {
        a.push_back(pairs[k].a);
        b.push_back(pairs[k].b);
        labels[k] = pairs[k].label;
      }
      loss = mse_pair_loss(model.score_pairs(tape, train_store.gather_pairs(a, b), Mode::train), labels);
    }
    const double value = loss.value()[0];
    if (!std::isfinite(value)) throw NumericError("non-finite loss at step " + std::to_string(step));
    tape.backward(loss);
    adam.step();

    MetricsRow row{step, value, adam.options().lr, seconds_since(t0), std::nullopt};
    const bool last = step == config.steps;
    if (eval_store && eval_pairs && (last || (config.eval_every && step % config.eval_every == 0))) {
      row.fpr95 = evaluate(model, *eval_store, *eval_pairs).fpr95;
      if (last) result.final_fpr95 = row.fpr95;
    }
    if (config.checkpoint_every && step % config.checkpoint_every == 0 && !last) {
      save_checkpoint(config.out_dir / ("checkpoint_" + std::to_string(step) + ".cvnn"), model, &adam);
    }
    result.metrics.push_back(row);
    if (on_step) on_step(row);
  }
  result.checkpoint = config.out_dir / "model.cvnn";
  save_checkpoint(result.checkpoint, model, &adam);
  write_metrics_csv(config.out_dir / "metrics.csv", result.metrics);
  return result;
}

TrainResult run_training(const RunConfig& input, const StepCallback& on_step) {
  RunConfig config = input;
  config.model.seed = config.seed;
  config.validate();
  const std::size_t s = config.model.patch_size;
  const PatchStore train_store = load_dataset(config.data, s);
  std::optional<PatchStore> eval_store;
  std::vector<PatchPair> pairs;
  if (const auto spec = held_out_spec(config)) {
    eval_store = load_dataset(*spec, s);
    Rng rng(config.seed + 2);
    pairs = evaluation_pairs(*spec, *eval_store, config.eval_pairs, rng);
  }
  Model model(config.model);
  TrainResult result =
      train(model, config, train_store, eval_store ? &*eval_store : nullptr, eval_store ? &pairs : nullptr, on_step);
  std::ofstream(config.out_dir / "config.json") << to_json(config) << '\n';
  return result;
}

void write_descriptors(const std::filesystem::path& out, const ComplexTensor& descriptors,
                       const std::vector<std::int64_t>& point_ids) {
  if (descriptors.shape().rank() != 2 || descriptors.shape()[0] != point_ids.size()) {
    throw ShapeError("descriptors " + descriptors.shape().str() + " for " + std::to_string(point_ids.size()) +
                     " point ids");
  }
  Container c;
  c.put("descriptors", descriptors);
  Tensor ids(Shape{point_ids.size()});
  for (std::size_t k = 0; k < point_ids.size(); ++k) ids[k] = static_cast<double>(point_ids[k]);
  c.put("point_ids", std::move(ids));
  c.save(out);
  std::filesystem::path index = out;
  index += ".txt";
  std::ofstream txt(index);
  if (!txt) throw IoError("cannot write " + index.string());
  txt << "# index point_id\n";
  for (std::size_t k = 0; k < point_ids.size(); ++k) txt << k << ' ' << point_ids[k] << '\n';
  if (!txt) throw IoError("failed writing " + index.string());
}

}  // namespace cvnn
