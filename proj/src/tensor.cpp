#include "cvnn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "cvnn/errors.hpp"
#include "internal.hpp"

namespace cvnn {

Shape::Shape(std::initializer_list<std::size_t> dims) : Shape(std::vector<std::size_t>(dims)) {}

Shape::Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
  std::size_t total = 1;
  for (auto d : dims_) {
    if (d == 0) throw ShapeError("zero-sized dimension in shape " + str());
    if (total > static_cast<std::size_t>(-1) / d) throw ShapeError("shape overflows: " + str());
    total *= d;
  }
}

std::size_t Shape::numel() const {
  return std::accumulate(dims_.begin(), dims_.end(), std::size_t{1}, std::multiplies<>());
}

Shape Shape::tail() const {
  if (dims_.empty()) throw ShapeError("tail of a rank-0 shape");
  return Shape(std::vector<std::size_t>(dims_.begin() + 1, dims_.end()));
}

std::size_t Shape::stride(std::size_t axis) const {
  std::size_t s = 1;
  for (std::size_t i = axis; i < dims_.size(); ++i) s *= dims_[i];
  return s;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < dims_.size(); ++i) os << (i ? "," : "") << dims_[i];
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_.numel(), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_.numel()) {
    throw ShapeError("tensor data has " + std::to_string(data_.size()) + " elements, shape " + shape_.str() +
                     " needs " + std::to_string(shape_.numel()));
  }
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{1}, std::vector<double>{value}); }

Tensor Tensor::vector(std::vector<double> values) {
  const auto n = values.size();
  return Tensor(Shape{n}, std::move(values));
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_.str());
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape.numel() != numel()) throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

void Tensor::accumulate(const Tensor& other) {
  if (other.shape_ != shape_) throw ShapeError("accumulate " + other.shape_.str() + " into " + shape_.str());
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
}

ComplexTensor::ComplexTensor(Tensor real, Tensor imag) : real_(std::move(real)), imag_(std::move(imag)) {
  if (real_.shape() != imag_.shape()) {
    throw ShapeError("real part " + real_.shape().str() + " and imaginary part " + imag_.shape().str() + " differ");
  }
}

ComplexTensor ComplexTensor::from_real(Tensor real) {
  Tensor imag(real.shape());
  return ComplexTensor(std::move(real), std::move(imag));
}

namespace detail {

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b) {
  if (a == b) return {a, a.numel(), a.numel()};
  if (b.numel() == 1) return {a, a.numel(), 1};
  if (a.numel() == 1) return {b, 1, b.numel()};
  auto batch_form = [](const Shape& big, const Shape& small) {
    if (big.rank() < 2) return false;
    const Shape rest = big.tail();
    if (small == rest) return true;
    return small.rank() == big.rank() && small[0] == 1 && small.tail() == rest;
  };
  if (batch_form(a, b)) return {a, a.numel(), b.numel()};
  if (batch_form(b, a)) return {b, a.numel(), b.numel()};
  throw ShapeError("shapes " + a.str() + " and " + b.str() + " are not broadcastable");
}

}  // namespace detail

namespace {

template <typename Fn>
ComplexTensor elementwise(const ComplexTensor& a, const ComplexTensor& b, Fn fn) {
  const auto plan = detail::plan_broadcast(a.shape(), b.shape());
  const std::size_t n = plan.out.numel();
  Tensor re(plan.out), im(plan.out);
  const auto ar = a.real().data(), ai = a.imag().data();
  const auto br = b.real().data(), bi = b.imag().data();
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t ia = k % plan.a_period, ib = k % plan.b_period;
    fn(ar[ia], ai[ia], br[ib], bi[ib], re[k], im[k]);
  }
  return ComplexTensor(std::move(re), std::move(im));
}

}  // namespace

ComplexTensor cadd(const ComplexTensor& a, const ComplexTensor& b) {
  return elementwise(a, b, [](double ar, double ai, double br, double bi, double& r, double& i) {
    r = ar + br;
    i = ai + bi;
  });
}

ComplexTensor csub(const ComplexTensor& a, const ComplexTensor& b) {
  return elementwise(a, b, [](double ar, double ai, double br, double bi, double& r, double& i) {
    r = ar - br;
    i = ai - bi;
  });
}

ComplexTensor cmul(const ComplexTensor& a, const ComplexTensor& b) {
  return elementwise(a, b, [](double ar, double ai, double br, double bi, double& r, double& i) {
    r = ar * br - ai * bi;
    i = ar * bi + ai * br;
  });
}

Tensor modulus(const ComplexTensor& a) {
  Tensor out(a.shape());
  const auto re = a.real().data(), im = a.imag().data();
  for (std::size_t k = 0; k < out.numel(); ++k) out[k] = std::hypot(re[k], im[k]);
  return out;
}

namespace detail {

// Twiddle table for a length-n transform: entry (k*m mod n).
struct Twiddles {
  std::vector<double> cos_, sin_;
  explicit Twiddles(std::size_t n) : cos_(n), sin_(n) {
    for (std::size_t j = 0; j < n; ++j) {
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(n);
      cos_[j] = std::cos(angle);
      sin_[j] = std::sin(angle);
    }
  }
};

void dft_planes(std::span<const double> in_re, std::span<const double> in_im, std::span<double> out_re,
                std::span<double> out_im, std::size_t planes, std::size_t h, std::size_t w, int sign) {
  // Both passes are products with the (symmetric) DFT matrix F = C + i*s*S.
  const auto matrices = [sign](std::size_t n) {
    const Twiddles t(n);
    const double s = sign < 0 ? -1.0 : 1.0;
    std::vector<double> c(n * n), sn(n * n);
    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t b = 0; b < n; ++b) {
        c[a * n + b] = t.cos_[(a * b) % n];
        sn[a * n + b] = s * t.sin_[(a * b) % n];
      }
    }
    return std::pair{std::move(c), std::move(sn)};
  };
  const auto [cw, sw] = matrices(w);
  const auto [ch, sh] = matrices(h);
  const std::size_t rows = planes * h;
  // Along W: Y = X F over all rows at once.
  std::vector<double> y_re(rows * w), y_im(rows * w);
  gemm(false, false, rows, w, w, 1.0, in_re.data(), cw.data(), 0.0, y_re.data());
  gemm(false, false, rows, w, w, 1.0, in_re.data(), sw.data(), 0.0, y_im.data());
  if (!in_im.empty()) {
    gemm(false, false, rows, w, w, -1.0, in_im.data(), sw.data(), 1.0, y_re.data());
    gemm(false, false, rows, w, w, 1.0, in_im.data(), cw.data(), 1.0, y_im.data());
  }
  // Along H: Z_p = F Y_p per plane.
  for (std::size_t p = 0; p < planes; ++p) {
    const std::size_t base = p * h * w;
    gemm(false, false, h, w, h, 1.0, ch.data(), y_re.data() + base, 0.0, out_re.data() + base);
    gemm(false, false, h, w, h, -1.0, sh.data(), y_im.data() + base, 1.0, out_re.data() + base);
    if (!out_im.empty()) {
      gemm(false, false, h, w, h, 1.0, sh.data(), y_re.data() + base, 0.0, out_im.data() + base);
      gemm(false, false, h, w, h, 1.0, ch.data(), y_im.data() + base, 1.0, out_im.data() + base);
    }
  }
}

}  // namespace detail

ComplexTensor dft2d(const Tensor& x) {
  if (x.shape().rank() != 4) throw ShapeError("dft2d expects (N,C,H,W), got " + x.shape().str());
  const auto& s = x.shape();
  Tensor re(s), im(s);
  detail::dft_planes(x.data(), {}, re.data(), im.data(), s[0] * s[1], s[2], s[3], -1);
  return ComplexTensor(std::move(re), std::move(im));
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& first = parts[0].shape();
  if (axis >= first.rank()) throw ShapeError("concat axis out of range for " + first.str());
  std::vector<std::size_t> dims = first.dims();
  dims[axis] = 0;
  for (const auto& t : parts) {
    const Shape& s = t.shape();
    if (s.rank() != first.rank()) throw ShapeError("concat rank mismatch " + s.str() + " vs " + first.str());
    for (std::size_t d = 0; d < s.rank(); ++d) {
      if (d != axis && s[d] != first[d]) throw ShapeError("concat shape mismatch " + s.str() + " vs " + first.str());
    }
    dims[axis] += s[axis];
  }
  Shape out_shape(dims);
  Tensor out(out_shape);
  const std::size_t outer = first.numel() / first.stride(axis);
  std::size_t offset = 0;
  const std::size_t out_block = out_shape.stride(axis);
  for (const auto& t : parts) {
    const std::size_t block = t.shape().stride(axis);
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(t.ptr() + o * block, block, out.ptr() + o * out_block + offset);
    }
    offset += block;
  }
  return out;
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = a.shape();
  if (axis >= s.rank() || begin >= end || end > s[axis]) {
    throw ShapeError("invalid slice [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                     std::to_string(axis) + " of " + s.str());
  }
  std::vector<std::size_t> dims = s.dims();
  dims[axis] = end - begin;
  Tensor out{Shape(dims)};
  const std::size_t inner = s.stride(axis + 1);
  const std::size_t outer = s.numel() / s.stride(axis);
  const std::size_t block = (end - begin) * inner;
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(a.ptr() + o * s.stride(axis) + begin * inner, block, out.ptr() + o * block);
  }
  return out;
}

Tensor transpose(const Tensor& a, std::span<const std::size_t> perm) {
  const Shape& s = a.shape();
  if (perm.size() != s.rank()) throw ShapeError("transpose permutation rank mismatch for " + s.str());
  std::vector<bool> seen(perm.size(), false);
  std::vector<std::size_t> dims(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    if (perm[i] >= perm.size() || seen[perm[i]]) throw ShapeError("invalid transpose permutation");
    seen[perm[i]] = true;
    dims[i] = s[perm[i]];
  }
  Shape out_shape(dims);
  Tensor out(out_shape);
  const std::size_t rank = s.rank();
  std::vector<std::size_t> src_stride(rank);
  for (std::size_t d = 0; d < rank; ++d) src_stride[d] = s.stride(d + 1);
  std::vector<std::size_t> index(rank, 0);
  for (std::size_t k = 0; k < out.numel(); ++k) {
    std::size_t src = 0;
    for (std::size_t d = 0; d < rank; ++d) src += index[d] * src_stride[perm[d]];
    out[k] = a[src];
    for (std::size_t d = rank; d-- > 0;) {
      if (++index[d] < dims[d]) break;
      index[d] = 0;
    }
  }
  return out;
}

ComplexTensor concat(std::span<const ComplexTensor> parts, std::size_t axis) {
  std::vector<Tensor> re, im;
  for (const auto& p : parts) {
    re.push_back(p.real());
    im.push_back(p.imag());
  }
  return ComplexTensor(concat(re, axis), concat(im, axis));
}

ComplexTensor slice(const ComplexTensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  return ComplexTensor(slice(a.real(), axis, begin, end), slice(a.imag(), axis, begin, end));
}

ComplexTensor reshape(const ComplexTensor& a, Shape shape) {
  return ComplexTensor(a.real().reshaped(shape), a.imag().reshaped(shape));
}

ComplexTensor transpose(const ComplexTensor& a, std::span<const std::size_t> perm) {
  return ComplexTensor(transpose(a.real(), perm), transpose(a.imag(), perm));
}

}  // namespace cvnn
