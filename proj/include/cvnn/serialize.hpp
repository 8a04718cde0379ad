#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "cvnn/tensor.hpp"

namespace cvnn {

// Single tensor ("CXT1"):
//   magic "CXT1" | dtype u32 | rank u64 | dims u64[rank] | real[] | imag[]
// All integers and floats little-endian, data row-major. Real-only dtypes
// omit the imaginary block.
enum class DType : std::uint32_t {
  complex_f64 = 1,
  complex_f32 = 2,
  real_f64 = 3,
  real_f32 = 4,
};

enum class Precision { f64, f32 };

void write_tensor(std::ostream& out, const ComplexTensor& t, Precision precision = Precision::f64);
void write_tensor(std::ostream& out, const Tensor& t, Precision precision = Precision::f64);

/// A tensor read back from a stream; `is_complex` is false for real dtypes,
/// in which case the imaginary part is zero.
struct StoredTensor {
  ComplexTensor value;
  bool is_complex = true;
};

StoredTensor read_tensor(std::istream& in);

void save_tensor(const std::filesystem::path& path, const ComplexTensor& t, Precision precision = Precision::f64);
ComplexTensor load_tensor(const std::filesystem::path& path);

// Named container ("CXC1"), used for checkpoints and patch stores:
//   magic "CXC1" | version u32 | count u64 |
//   count x { kind u8 | name_len u64 | name | payload }
// kind 0: real tensor, 1: complex tensor (both CXT1 payloads), 2: text
// (len u64 | bytes). Entry order is preserved, so identical contents give
// identical bytes.
class Container {
 public:
  using Entry = std::variant<Tensor, ComplexTensor, std::string>;

  void put(std::string name, Entry value);
  bool contains(const std::string& name) const;
  const Entry& at(const std::string& name) const;
  const Tensor& tensor(const std::string& name) const;
  const ComplexTensor& complex(const std::string& name) const;
  const std::string& text(const std::string& name) const;

  const std::vector<std::pair<std::string, Entry>>& entries() const { return entries_; }

  void save(const std::filesystem::path& path) const;
  static Container load(const std::filesystem::path& path);

  void write(std::ostream& out) const;
  static Container read(std::istream& in);

 private:
  std::vector<std::pair<std::string, Entry>> entries_;
};

}  // namespace cvnn
