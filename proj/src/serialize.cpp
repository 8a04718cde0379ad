#include "cvnn/serialize.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "cvnn/errors.hpp"

namespace cvnn {

namespace {

constexpr std::array<char, 4> kTensorMagic{'C', 'X', 'T', '1'};
constexpr std::array<char, 4> kContainerMagic{'C', 'X', 'C', '1'};
constexpr std::uint32_t kContainerVersion = 1;
constexpr std::uint64_t kMaxRank = 16;

template <typename U>
void put_le(std::ostream& out, U value) {
  std::array<char, sizeof(U)> bytes;
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  out.write(bytes.data(), bytes.size());
}

template <typename U>
U get_le(std::istream& in) {
  std::array<unsigned char, sizeof(U)> bytes;
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw IoError("unexpected end of stream");
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

void write_block(std::ostream& out, const Tensor& t, Precision precision) {
  const std::size_t width = precision == Precision::f64 ? 8 : 4;
  std::vector<char> bytes(t.numel() * width);
  char* dst = bytes.data();
  for (double v : t.data()) {
    const std::uint64_t bits =
        width == 8 ? std::bit_cast<std::uint64_t>(v) : std::bit_cast<std::uint32_t>(static_cast<float>(v));
    for (std::size_t i = 0; i < width; ++i) *dst++ = static_cast<char>((bits >> (8 * i)) & 0xFF);
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Tensor read_block(std::istream& in, const Shape& shape, Precision precision) {
  const std::size_t width = precision == Precision::f64 ? 8 : 4;
  Tensor t(shape);
  std::vector<unsigned char> bytes(t.numel() * width);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!in) throw IoError("unexpected end of stream in tensor data");
  const unsigned char* src = bytes.data();
  for (double& v : t.data()) {
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < width; ++i) bits |= static_cast<std::uint64_t>(*src++) << (8 * i);
    v = width == 8 ? std::bit_cast<double>(bits) : static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(bits)));
  }
  return t;
}

void write_header(std::ostream& out, DType dtype, const Shape& shape) {
  out.write(kTensorMagic.data(), kTensorMagic.size());
  put_le(out, static_cast<std::uint32_t>(dtype));
  put_le(out, static_cast<std::uint64_t>(shape.rank()));
  for (auto d : shape.dims()) put_le(out, static_cast<std::uint64_t>(d));
}

void write_string(std::ostream& out, const std::string& s) {
  put_le(out, static_cast<std::uint64_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
  const auto n = get_le<std::uint64_t>(in);
  if (n > (std::uint64_t{1} << 32)) throw IoError("string length " + std::to_string(n) + " is implausible");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw IoError("unexpected end of stream in string");
  return s;
}

}  // namespace

void write_tensor(std::ostream& out, const ComplexTensor& t, Precision precision) {
  write_header(out, precision == Precision::f64 ? DType::complex_f64 : DType::complex_f32, t.shape());
  write_block(out, t.real(), precision);
  write_block(out, t.imag(), precision);
}

void write_tensor(std::ostream& out, const Tensor& t, Precision precision) {
  write_header(out, precision == Precision::f64 ? DType::real_f64 : DType::real_f32, t.shape());
  write_block(out, t, precision);
}

StoredTensor read_tensor(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kTensorMagic) throw IoError("bad tensor magic (expected CXT1)");
  const auto code = get_le<std::uint32_t>(in);
  if (code < 1 || code > 4) throw IoError("unknown tensor dtype code " + std::to_string(code));
  const auto dtype = static_cast<DType>(code);
  const auto rank = get_le<std::uint64_t>(in);
  if (rank > kMaxRank) throw IoError("tensor rank " + std::to_string(rank) + " too large");
  std::vector<std::size_t> dims(rank);
  for (auto& d : dims) d = static_cast<std::size_t>(get_le<std::uint64_t>(in));
  const Shape shape(dims);
  const Precision precision =
      (dtype == DType::complex_f64 || dtype == DType::real_f64) ? Precision::f64 : Precision::f32;
  const bool is_complex = dtype == DType::complex_f64 || dtype == DType::complex_f32;
  Tensor re = read_block(in, shape, precision);
  Tensor im = is_complex ? read_block(in, shape, precision) : Tensor(shape);
  return {ComplexTensor(std::move(re), std::move(im)), is_complex};
}

void save_tensor(const std::filesystem::path& path, const ComplexTensor& t, Precision precision) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_tensor(out, t, precision);
  if (!out) throw IoError("write failed: " + path.string());
}

ComplexTensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return read_tensor(in).value;
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

void Container::put(std::string name, Entry value) {
  auto it = std::find_if(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == name; });
  if (it != entries_.end()) {
    it->second = std::move(value);
  } else {
    entries_.emplace_back(std::move(name), std::move(value));
  }
}

bool Container::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == name; });
}

const Container::Entry& Container::at(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.first == name) return e.second;
  }
  throw IoError("container has no entry '" + name + "'");
}

const Tensor& Container::tensor(const std::string& name) const {
  const auto* t = std::get_if<Tensor>(&at(name));
  if (!t) throw IoError("container entry '" + name + "' is not a real tensor");
  return *t;
}

const ComplexTensor& Container::complex(const std::string& name) const {
  const auto* t = std::get_if<ComplexTensor>(&at(name));
  if (!t) throw IoError("container entry '" + name + "' is not a complex tensor");
  return *t;
}

const std::string& Container::text(const std::string& name) const {
  const auto* t = std::get_if<std::string>(&at(name));
  if (!t) throw IoError("container entry '" + name + "' is not text");
  return *t;
}

void Container::write(std::ostream& out) const {
  out.write(kContainerMagic.data(), kContainerMagic.size());
  put_le(out, kContainerVersion);
  put_le(out, static_cast<std::uint64_t>(entries_.size()));
  for (const auto& [name, value] : entries_) {
    put_le(out, static_cast<std::uint8_t>(value.index()));
    write_string(out, name);
    std::visit(
        [&](const auto& v) {
          using T = std::decay_t<decltype(v)>;
          if constexpr (std::is_same_v<T, std::string>) {
            write_string(out, v);
          } else {
            write_tensor(out, v);
          }
        },
        value);
  }
}

Container Container::read(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kContainerMagic) throw IoError("bad container magic (expected CXC1)");
  const auto version = get_le<std::uint32_t>(in);
  if (version != kContainerVersion) throw IoError("unsupported container version " + std::to_string(version));
  const auto count = get_le<std::uint64_t>(in);
  Container c;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto kind = get_le<std::uint8_t>(in);
    std::string name = read_string(in);
    switch (kind) {
      case 0:
        c.entries_.emplace_back(std::move(name), read_tensor(in).value.real());
        break;
      case 1:
        c.entries_.emplace_back(std::move(name), read_tensor(in).value);
        break;
      case 2:
        c.entries_.emplace_back(std::move(name), read_string(in));
        break;
      default:
        throw IoError("unknown container entry kind " + std::to_string(kind));
    }
  }
  return c;
}

void Container::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write(out);
  out.flush();
  if (!out) throw IoError("write failed: " + path.string());
}

Container Container::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return read(in);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace cvnn
