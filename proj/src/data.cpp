#include "cvnn/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "cvnn/errors.hpp"
#include "json_util.hpp"

namespace cvnn {

namespace fs = std::filesystem;

namespace {

constexpr std::size_t kMosaicCells = 16;
constexpr std::size_t kMosaicPatch = 64;
constexpr std::size_t kHpatchesPatch = 65;

cv::Mat read_gray(const fs::path& path) {
  cv::Mat img;
  try {
    img = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  } catch (const cv::Exception& e) {
    throw IngestError(path.string() + ": " + e.what());
  }
  if (img.empty()) throw IngestError(path.string() + ": cannot decode image");
  return img;
}

// Mean-pools the 64x64 block at (top, left) of `img` into `out` (S*S values in [0,1]).
void pool_patch(const cv::Mat& img, std::size_t top, std::size_t left, std::size_t size, double* out) {
  const std::size_t f = kMosaicPatch / size;
  const double norm = 1.0 / (255.0 * static_cast<double>(f * f));
  for (std::size_t r = 0; r < size; ++r) {
    for (std::size_t c = 0; c < size; ++c) {
      double acc = 0.0;
      for (std::size_t i = 0; i < f; ++i) {
        const auto* row = img.ptr<std::uint8_t>(static_cast<int>(top + r * f + i));
        for (std::size_t j = 0; j < f; ++j) acc += row[left + c * f + j];
      }
      out[r * size + c] = acc * norm;
    }
  }
}

void check_patch_size(std::size_t size) {
  if (size == 0 || kMosaicPatch % size != 0) {
    throw ArgumentError("patch size must divide 64, got " + std::to_string(size));
  }
}

std::string lowercase(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

// Ids with at least two patches, and the patch list of every id, in id order.
struct IdIndex {
  std::map<std::int64_t, std::vector<std::size_t>> members;
  std::vector<std::int64_t> ids;
  std::vector<std::int64_t> multi;
};

IdIndex index_ids(const PatchStore& store) {
  IdIndex index;
  for (std::size_t k = 0; k < store.size(); ++k) index.members[store.point_ids[k]].push_back(k);
  for (const auto& [id, list] : index.members) {
    index.ids.push_back(id);
    if (list.size() >= 2) index.multi.push_back(id);
  }
  return index;
}

std::size_t uniform_index(std::size_t n, std::mt19937_64& rng) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

std::pair<std::size_t, std::size_t> distinct_pair(const std::vector<std::size_t>& list, std::mt19937_64& rng) {
  const std::size_t i = uniform_index(list.size(), rng);
  std::size_t j = uniform_index(list.size() - 1, rng);
  if (j >= i) ++j;
  return {list[i], list[j]};
}

}  // namespace

void PatchStore::validate() const {
  const Shape& s = patches.shape();
  if (s.rank() != 4 || s[1] != 1 || s[2] != s[3]) throw ContractError("patch store must hold (P,1,S,S), got " + s.str());
  if (s[0] != point_ids.size()) {
    throw ContractError("patch store has " + std::to_string(s[0]) + " patches but " +
                        std::to_string(point_ids.size()) + " point ids");
  }
  for (double v : patches.data()) {
    if (!(v >= 0.0 && v <= 1.0)) throw ContractError("patch values must lie in [0,1]");
  }
}

Tensor PatchStore::gather(std::span<const std::size_t> indices) const {
  const std::size_t s = patch_size();
  const std::size_t plane = s * s;
  Tensor out(Shape{indices.size(), 1, s, s});
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= size()) throw ArgumentError("patch index " + std::to_string(indices[k]) + " out of range");
    std::copy_n(patches.ptr() + indices[k] * plane, plane, out.ptr() + k * plane);
  }
  return out;
}

Tensor PatchStore::gather_pairs(std::span<const std::size_t> a, std::span<const std::size_t> b) const {
  if (a.size() != b.size()) throw ArgumentError("pair index lists differ in length");
  const std::size_t s = patch_size();
  const std::size_t plane = s * s;
  Tensor out(Shape{a.size(), 2, s, s});
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (a[k] >= size() || b[k] >= size()) throw ArgumentError("pair index out of range");
    std::copy_n(patches.ptr() + a[k] * plane, plane, out.ptr() + 2 * k * plane);
    std::copy_n(patches.ptr() + b[k] * plane, plane, out.ptr() + (2 * k + 1) * plane);
  }
  return out;
}

PatchStore load_phototour(const fs::path& dir, std::size_t patch_size) {
  check_patch_size(patch_size);
  const fs::path info = dir / "info.txt";
  std::ifstream in(info);
  if (!in) throw IngestError(info.string() + ": missing");
  std::vector<std::int64_t> ids;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    std::istringstream fields(line);
    std::int64_t id;
    if (!(fields >> id)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      throw IngestError(info.string() + ":" + std::to_string(n) + ": expected a point id");
    }
    ids.push_back(id);
  }
  if (ids.empty()) throw IngestError(info.string() + ": no patches listed");

  std::vector<fs::path> mosaics;
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(dir, ec)) {
    const std::string name = lowercase(entry.path().filename().string());
    if (entry.is_regular_file() && name.rfind("patches", 0) == 0 && entry.path().extension() == ".bmp") {
      mosaics.push_back(entry.path());
    }
  }
  if (ec) throw IngestError(dir.string() + ": " + ec.message());
  std::sort(mosaics.begin(), mosaics.end());
  const std::size_t per_mosaic = kMosaicCells * kMosaicCells;
  const std::size_t needed = (ids.size() + per_mosaic - 1) / per_mosaic;
  if (mosaics.size() < needed) {
    throw IngestError(dir.string() + ": info.txt lists " + std::to_string(ids.size()) + " patches, needing " +
                      std::to_string(needed) + " mosaics, found " + std::to_string(mosaics.size()));
  }

  PatchStore store;
  store.patches = Tensor(Shape{ids.size(), 1, patch_size, patch_size});
  const std::size_t side = kMosaicCells * kMosaicPatch;
  for (std::size_t m = 0; m < needed; ++m) {
    const cv::Mat img = read_gray(mosaics[m]);
    if (static_cast<std::size_t>(img.rows) != side || static_cast<std::size_t>(img.cols) != side) {
      throw IngestError(mosaics[m].string() + ": mosaic is " + std::to_string(img.cols) + "x" +
                        std::to_string(img.rows) + ", expected " + std::to_string(side) + "x" + std::to_string(side));
    }
    for (std::size_t cell = 0; cell < per_mosaic; ++cell) {
      const std::size_t k = m * per_mosaic + cell;
      if (k >= ids.size()) break;
      pool_patch(img, (cell / kMosaicCells) * kMosaicPatch, (cell % kMosaicCells) * kMosaicPatch, patch_size,
                 store.patches.ptr() + k * patch_size * patch_size);
    }
  }
  store.point_ids = std::move(ids);
  store.source = "phototour:" + dir.string();
  return store;
}

std::vector<PatchPair> load_match_file(const fs::path& path, const PatchStore& store) {
  std::ifstream in(path);
  if (!in) throw IngestError(path.string() + ": cannot open match file");
  std::vector<PatchPair> pairs;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream fields(line);
    long long a, pa, ua, b, pb, ub;
    if (!(fields >> a >> pa >> ua >> b >> pb >> ub)) {
      throw IngestError(path.string() + ":" + std::to_string(n) + ": expected six integer fields");
    }
    if (a < 0 || b < 0 || static_cast<std::size_t>(a) >= store.size() || static_cast<std::size_t>(b) >= store.size()) {
      throw IngestError(path.string() + ":" + std::to_string(n) + ": patch id out of range for a store of " +
                        std::to_string(store.size()));
    }
    pairs.push_back({static_cast<std::size_t>(a), static_cast<std::size_t>(b), pa == pb ? 1 : 0});
  }
  return pairs;
}

namespace {

std::vector<std::string> split_sequences(const detail::Json& splits, const std::string& request,
                                         const fs::path& split_file) {
  std::string name = request, list = "test";
  if (const auto dot = request.rfind('.'); dot != std::string::npos) {
    const std::string suffix = request.substr(dot + 1);
    if (suffix == "train" || suffix == "test") {
      name = request.substr(0, dot);
      list = suffix;
    }
  }
  if (!splits.contains(name)) throw IngestError(split_file.string() + ": unknown split '" + name + "'");
  detail::Json entry = splits.at(name);
  if (entry.is_object()) {
    if (!entry.contains(list)) throw IngestError(split_file.string() + ": split '" + name + "' has no " + list + " list");
    entry = entry.at(list);
  }
  if (!entry.is_array()) throw IngestError(split_file.string() + ": split '" + name + "' is not a list");
  std::vector<std::string> out;
  for (const auto& v : entry) {
    if (!v.is_string()) throw IngestError(split_file.string() + ": split '" + name + "' holds a non-string");
    out.push_back(v.get<std::string>());
  }
  return out;
}

}  // namespace

PatchStore load_hpatches(const fs::path& dir, const fs::path& split_file, std::span<const std::string> split_names,
                         std::size_t patch_size) {
  check_patch_size(patch_size);
  std::ifstream in(split_file);
  if (!in) throw IngestError(split_file.string() + ": cannot open split file");
  detail::Json splits;
  try {
    splits = detail::Json::parse(in);
  } catch (const detail::Json::exception& e) {
    throw IngestError(split_file.string() + ": " + e.what());
  }
  if (!splits.is_object()) throw IngestError(split_file.string() + ": expected a JSON object");
  if (split_names.empty()) throw ArgumentError("no HPatches split selected");

  std::vector<std::string> sequences;
  for (const auto& request : split_names) {
    for (auto& s : split_sequences(splits, request, split_file)) sequences.push_back(std::move(s));
  }
  std::sort(sequences.begin(), sequences.end());
  sequences.erase(std::unique(sequences.begin(), sequences.end()), sequences.end());

  static const char* const kViews[] = {"ref", "e1", "e2", "e3", "e4", "e5"};
  std::vector<double> values;
  PatchStore store;
  std::int64_t next_id = 0;
  const std::size_t plane = patch_size * patch_size;
  for (const auto& seq : sequences) {
    const fs::path folder = dir / seq;
    if (!fs::is_directory(folder)) throw IngestError(folder.string() + ": sequence folder missing");
    std::size_t rows = 0;
    for (std::size_t v = 0; v < std::size(kViews); ++v) {
      const fs::path file = folder / (std::string(kViews[v]) + ".png");
      if (!fs::exists(file)) throw IngestError(file.string() + ": missing view image");
      const cv::Mat img = read_gray(file);
      if (static_cast<std::size_t>(img.cols) != kHpatchesPatch || img.rows % kHpatchesPatch != 0) {
        throw IngestError(file.string() + ": expected a column of 65x65 patches, got " + std::to_string(img.cols) +
                          "x" + std::to_string(img.rows));
      }
      const std::size_t n = static_cast<std::size_t>(img.rows) / kHpatchesPatch;
      if (v == 0) {
        rows = n;
      } else if (n != rows) {
        throw IngestError(file.string() + ": has " + std::to_string(n) + " patches, ref has " + std::to_string(rows));
      }
      for (std::size_t r = 0; r < n; ++r) {
        values.resize(values.size() + plane);
        pool_patch(img, r * kHpatchesPatch, 0, patch_size, values.data() + values.size() - plane);
        store.point_ids.push_back(next_id + static_cast<std::int64_t>(r));
      }
    }
    next_id += static_cast<std::int64_t>(rows);
  }
  if (store.point_ids.empty()) throw IngestError(dir.string() + ": selected splits contain no patches");
  store.patches = Tensor(Shape{store.point_ids.size(), 1, patch_size, patch_size}, std::move(values));
  store.source = "hpatches:" + dir.string();
  return store;
}

std::vector<PatchTriplet> sample_triplets(const PatchStore& store, std::size_t count, std::mt19937_64& rng) {
  const IdIndex index = index_ids(store);
  if (index.ids.size() < 2 || index.multi.empty()) {
    throw ContractError("triplet sampling needs at least two point ids and one id with two patches");
  }
  std::vector<PatchTriplet> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const std::int64_t id = index.multi[uniform_index(index.multi.size(), rng)];
    const auto [p1, p2] = distinct_pair(index.members.at(id), rng);
    std::size_t other = uniform_index(index.ids.size() - 1, rng);
    const auto self = static_cast<std::size_t>(std::lower_bound(index.ids.begin(), index.ids.end(), id) - index.ids.begin());
    if (other >= self) ++other;
    const auto& negatives = index.members.at(index.ids[other]);
    out.push_back({p1, p2, negatives[uniform_index(negatives.size(), rng)]});
  }
  return out;
}

std::vector<PatchPair> sample_pairs(const PatchStore& store, std::size_t count, double pos_fraction,
                                    std::mt19937_64& rng) {
  if (!(pos_fraction >= 0.0 && pos_fraction <= 1.0)) throw ArgumentError("pos_fraction must lie in [0,1]");
  const IdIndex index = index_ids(store);
  const auto positives = static_cast<std::size_t>(std::llround(static_cast<double>(count) * pos_fraction));
  if (positives > 0 && index.multi.empty()) throw ContractError("matching pairs need an id with two patches");
  if (positives < count && index.ids.size() < 2) throw ContractError("non-matching pairs need two point ids");
  std::vector<PatchPair> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    if (k < positives) {
      const auto [a, b] = distinct_pair(index.members.at(index.multi[uniform_index(index.multi.size(), rng)]), rng);
      out.push_back({a, b, 1});
    } else {
      const std::size_t i = uniform_index(index.ids.size(), rng);
      std::size_t j = uniform_index(index.ids.size() - 1, rng);
      if (j >= i) ++j;
      const auto& la = index.members.at(index.ids[i]);
      const auto& lb = index.members.at(index.ids[j]);
      out.push_back({la[uniform_index(la.size(), rng)], lb[uniform_index(lb.size(), rng)], 0});
    }
  }
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

PatchStore synth_generate(const SynthOptions& o, std::mt19937_64& rng) {
  if (o.num_ids < 2) throw ArgumentError("synthetic data needs at least two ids");
  if (o.patches_per_id == 0 || o.patch_size == 0) throw ArgumentError("synthetic sizes must be positive");
  if (!(o.noise_sigma >= 0.0)) throw ArgumentError("noise sigma must be non-negative");
  const std::size_t s = o.patch_size;
  const std::size_t full = s + 2 * o.max_shift;
  const std::size_t grid = std::max<std::size_t>(3, s / 4 + 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> shift(0, 2 * o.max_shift);

  PatchStore store;
  store.patches = Tensor(Shape{o.num_ids * o.patches_per_id, 1, s, s});
  std::vector<double> coarse(grid * grid), tmpl(full * full);
  for (std::size_t id = 0; id < o.num_ids; ++id) {
    for (auto& v : coarse) v = normal(rng);
    for (std::size_t r = 0; r < full; ++r) {
      const double y = static_cast<double>(r) * static_cast<double>(grid - 1) / static_cast<double>(full - 1);
      const std::size_t y0 = std::min(grid - 2, static_cast<std::size_t>(y));
      const double fy = y - static_cast<double>(y0);
      for (std::size_t c = 0; c < full; ++c) {
        const double x = static_cast<double>(c) * static_cast<double>(grid - 1) / static_cast<double>(full - 1);
        const std::size_t x0 = std::min(grid - 2, static_cast<std::size_t>(x));
        const double fx = x - static_cast<double>(x0);
        tmpl[r * full + c] = (1 - fy) * ((1 - fx) * coarse[y0 * grid + x0] + fx * coarse[y0 * grid + x0 + 1]) +
                             fy * ((1 - fx) * coarse[(y0 + 1) * grid + x0] + fx * coarse[(y0 + 1) * grid + x0 + 1]);
      }
    }
    const auto [lo, hi] = std::minmax_element(tmpl.begin(), tmpl.end());
    const double span = std::max(*hi - *lo, 1e-12);
    const double base = *lo;
    for (auto& v : tmpl) v = 0.1 + 0.8 * (v - base) / span;

    for (std::size_t p = 0; p < o.patches_per_id; ++p) {
      const std::size_t dy = shift(rng), dx = shift(rng);
      const std::size_t k = id * o.patches_per_id + p;
      double* out = store.patches.ptr() + k * s * s;
      for (std::size_t r = 0; r < s; ++r) {
        for (std::size_t c = 0; c < s; ++c) {
          const double v = tmpl[(r + dy) * full + c + dx] + o.noise_sigma * normal(rng);
          out[r * s + c] = std::clamp(v, 0.0, 1.0);
        }
      }
      store.point_ids.push_back(static_cast<std::int64_t>(id));
    }
  }
  store.source = "synthetic";
  return store;
}

Container store_container(const PatchStore& store) {
  Container c;
  c.put("source", store.source);
  c.put("patches", store.patches);
  Tensor ids(Shape{store.point_ids.size()});
  for (std::size_t k = 0; k < store.point_ids.size(); ++k) ids[k] = static_cast<double>(store.point_ids[k]);
  c.put("point_ids", std::move(ids));
  return c;
}

PatchStore store_from_container(const Container& c) {
  for (const char* key : {"source", "patches", "point_ids"}) {
    if (!c.contains(key)) throw IngestError(std::string("patch store container lacks '") + key + "'");
  }
  PatchStore store;
  store.source = c.text("source");
  store.patches = c.tensor("patches");
  for (double v : c.tensor("point_ids").data()) {
    if (v != std::floor(v)) throw IngestError("patch store holds a non-integer point id");
    store.point_ids.push_back(static_cast<std::int64_t>(v));
  }
  try {
    store.validate();
  } catch (const ContractError& e) {
    throw IngestError(e.what());
  }
  return store;
}

void save_store(const fs::path& path, const PatchStore& store) { store_container(store).save(path); }

PatchStore load_store(const fs::path& path) { return store_from_container(Container::load(path)); }

}  // namespace cvnn
