#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include "cvnn/tensor.hpp"

namespace testing {

inline cvnn::Tensor random_tensor(const cvnn::Shape& shape, std::mt19937_64& rng, double sd = 1.0) {
  cvnn::Tensor t(shape);
  std::normal_distribution<double> d(0.0, sd);
  for (auto& v : t.data()) v = d(rng);
  return t;
}

inline double max_abs_diff(const cvnn::Tensor& a, const cvnn::Tensor& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double m = 0.0;
  for (std::size_t k = 0; k < a.numel(); ++k) m = std::max(m, std::abs(a[k] - b[k]));
  return m;
}

inline double max_abs_diff(const cvnn::ComplexTensor& a, const cvnn::ComplexTensor& b) {
  return std::max(max_abs_diff(a.real(), b.real()), max_abs_diff(a.imag(), b.imag()));
}

// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("cvnn_" + tag + "_" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

}  // namespace testing
