#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace cvnn {

/// Ordered list of positive dimensions, row-major.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims);
  explicit Shape(std::vector<std::size_t> dims);

  std::size_t rank() const { return dims_.size(); }
  std::size_t operator[](std::size_t axis) const { return dims_.at(axis); }
  const std::vector<std::size_t>& dims() const { return dims_; }
  std::size_t numel() const;

  /// Shape with the leading dimension removed.
  Shape tail() const;
  /// Product of dimensions from `axis` onward.
  std::size_t stride(std::size_t axis) const;

  std::string str() const;

  friend bool operator==(const Shape&, const Shape&) = default;

 private:
  std::vector<std::size_t> dims_;
};

/// Dense row-major real tensor of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* ptr() { return data_.data(); }
  const double* ptr() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Scalar value of a one-element tensor.
  double item() const;

  Tensor reshaped(Shape shape) const;
  bool all_finite() const;

  void fill(double value);
  /// this += other (same shape).
  void accumulate(const Tensor& other);

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Complex tensor stored as two same-shape real tensors (planar layout).
class ComplexTensor {
 public:
  ComplexTensor() = default;
  ComplexTensor(Tensor real, Tensor imag);

  static ComplexTensor from_real(Tensor real);

  const Tensor& real() const { return real_; }
  const Tensor& imag() const { return imag_; }
  const Shape& shape() const { return real_.shape(); }
  std::size_t numel() const { return real_.numel(); }

  bool all_finite() const { return real_.all_finite() && imag_.all_finite(); }

  friend bool operator==(const ComplexTensor&, const ComplexTensor&) = default;

 private:
  Tensor real_;
  Tensor imag_;
};

// Elementwise arithmetic. Operand shapes must be equal, or one operand must be
// a single element, or one operand may omit (or have size 1 in) the leading
// batch dimension of the other.
ComplexTensor cadd(const ComplexTensor& a, const ComplexTensor& b);
ComplexTensor csub(const ComplexTensor& a, const ComplexTensor& b);
ComplexTensor cmul(const ComplexTensor& a, const ComplexTensor& b);

Tensor modulus(const ComplexTensor& a);

/// Unnormalized forward 2D DFT over the last two axes of an (N,C,H,W)
/// real tensor, each (sample, channel) plane independently.
ComplexTensor dft2d(const Tensor& x);

ComplexTensor concat(std::span<const ComplexTensor> parts, std::size_t axis);
ComplexTensor slice(const ComplexTensor& a, std::size_t axis, std::size_t begin, std::size_t end);
ComplexTensor reshape(const ComplexTensor& a, Shape shape);
/// Axis permutation; `perm[i]` names the source axis of output axis i.
ComplexTensor transpose(const ComplexTensor& a, std::span<const std::size_t> perm);

// Real-tensor counterparts used by the autograd layer.
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);
Tensor transpose(const Tensor& a, std::span<const std::size_t> perm);

}  // namespace cvnn
