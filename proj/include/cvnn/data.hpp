#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cvnn/serialize.hpp"
#include "cvnn/tensor.hpp"

namespace cvnn {

/// Grayscale patches (P, 1, S, S) with values in [0,1] and one 3D-point id
/// per patch.
struct PatchStore {
  Tensor patches;
  std::vector<std::int64_t> point_ids;
  std::string source;

  std::size_t size() const { return point_ids.size(); }
  std::size_t patch_size() const { return patches.shape()[2]; }
  void validate() const;
  /// (k, 1, S, S) copy of the listed patches.
  Tensor gather(std::span<const std::size_t> indices) const;
  /// (k, 2, S, S) with the two patches of each pair stacked on the channel axis.
  Tensor gather_pairs(std::span<const std::size_t> a, std::span<const std::size_t> b) const;
};

struct PatchPair {
  std::size_t a;
  std::size_t b;
  int label;  // 1 match, 0 non-match
};

struct PatchTriplet {
  std::size_t p1;
  std::size_t p2;
  std::size_t n;
};

/// Photo-Tour layout: mosaics "patches*.bmp" (16x16 cells of 64x64, row
/// major, sorted by file name) and "info.txt" (first field = point id).
/// Patches are mean-pooled from 64 down to `patch_size` (must divide 64).
PatchStore load_phototour(const std::filesystem::path& dir, std::size_t patch_size = 32);

/// m50-style lines "patch1 point1 unused patch2 point2 unused".
std::vector<PatchPair> load_match_file(const std::filesystem::path& path, const PatchStore& store);

/// HPatches release layout: one folder per sequence holding ref.png and
/// e1.png..e5.png, each a column of 65x65 patches. Patches are cropped to
/// the top-left 64x64 and mean-pooled to `patch_size`. The six views of one
/// row share a point id.
///
/// The split file is JSON mapping a split name either to a list of sequence
/// names or to {"train": [...], "test": [...]}. A bare name selects the
/// "test" list; "name.train" / "name.test" select explicitly.
PatchStore load_hpatches(const std::filesystem::path& dir, const std::filesystem::path& split_file,
                         std::span<const std::string> split_names, std::size_t patch_size = 32);

/// Point id uniformly among ids with >= 2 patches, two distinct patches of
/// it, then a negative patch from a uniformly chosen other id.
std::vector<PatchTriplet> sample_triplets(const PatchStore& store, std::size_t count, std::mt19937_64& rng);

/// round(count * pos_fraction) matching pairs, the rest non-matching, in
/// shuffled order.
std::vector<PatchPair> sample_pairs(const PatchStore& store, std::size_t count, double pos_fraction,
                                    std::mt19937_64& rng);

struct SynthOptions {
  std::size_t num_ids = 64;
  std::size_t patches_per_id = 8;
  double noise_sigma = 0.05;
  std::size_t patch_size = 32;
  std::size_t max_shift = 2;

  bool operator==(const SynthOptions&) const = default;
};

/// Each id is a smooth random template (bilinear upsampling of a coarse
/// Gaussian grid, rescaled to [0.1, 0.9]); its patches are integer-shifted
/// crops plus Gaussian noise, clamped to [0,1].
PatchStore synth_generate(const SynthOptions& options, std::mt19937_64& rng);

Container store_container(const PatchStore& store);
PatchStore store_from_container(const Container& c);
void save_store(const std::filesystem::path& path, const PatchStore& store);
PatchStore load_store(const std::filesystem::path& path);

}  // namespace cvnn
