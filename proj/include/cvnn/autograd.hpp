#pragma once

#include <cstdint>
#include <deque>
#include <algorithm>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cvnn/tensor.hpp"

namespace cvnn {

/// Named trainable tensor with its accumulated gradient. Non-trainable
/// parameters hold buffers such as batch-norm running statistics; they are
/// checkpointed but never receive gradients.
struct Parameter {
  Parameter(std::string name, Tensor value, bool trainable = true);

  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  void zero_grad();
};

class Tape;

/// Handle to one output slot of a tape node.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t node = 0;
  std::uint32_t slot = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
};

/// A complex quantity on the tape: real and imaginary parts as two real vars.
struct CVar {
  Var re;
  Var im;

  const Shape& shape() const { return re.shape(); }
  ComplexTensor value() const { return ComplexTensor(re.value(), im.value()); }
};

/// Data handed to a backward rule. `grads[k]` is the upstream gradient of
/// output slot k (zeros if nothing flowed into it).
struct BackwardContext {
  std::span<const Tensor> grads;
  std::span<const Tensor> outputs;
  std::vector<bool> needs;  // per input: does the input want a gradient?
};

/// Returns one gradient per input; an empty Tensor means "no contribution".
using BackwardFn = std::function<std::vector<Tensor>(const BackwardContext&)>;

/// Append-only record of one forward computation. Nodes are topologically
/// ordered by construction; `backward` sweeps them in reverse.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var param(Parameter& p);
  CVar constant(ComplexTensor value);

  std::vector<Var> record(std::string_view op, std::vector<Var> inputs, std::vector<Tensor> outputs,
                          BackwardFn backward);
  Var record1(std::string_view op, std::vector<Var> inputs, Tensor output, BackwardFn backward);

  /// Reverse sweep from a one-element root. Gradients of trainable
  /// parameters are accumulated into `Parameter::grad`; intermediate
  /// gradients are released as soon as their node has been processed.
  void backward(Var root);

  std::size_t size() const { return nodes_.size(); }
  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;
  std::string_view op(std::uint32_t node) const;

  /// Validate that `v` belongs to this tape.
  void check(Var v) const;

  /// Non-smooth ops report how close their inputs came to a kink (relu at
  /// 0, tied pool maxima, ...). Finite-difference checks resample inputs
  /// when the smallest margin on the tape is too small.
  void note_kink(double margin) { kink_margin_ = std::min(kink_margin_, margin); }
  double kink_margin() const { return kink_margin_; }

 private:
  struct Node {
    std::string_view op;
    std::vector<Var> inputs;
    std::vector<Tensor> values;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  std::deque<Node> nodes_;
  double kink_margin_ = std::numeric_limits<double>::infinity();
};

bool any_requires_grad(std::span<const Var> vars);

// Elementwise and structural real ops. Broadcasting follows the rules of
// `cadd` (equal shapes, scalar, or leading batch dimension).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double value);
Var square(Var a);
Var relu(Var a);
Var sigmoid(Var a);
Var sum(Var a);
Var mean(Var a);
Var reshape(Var a, Shape shape);
Var concat(std::span<const Var> parts, std::size_t axis);
Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end);

// Complex elementwise ops built on the real pair representation.
CVar cadd(CVar a, CVar b);
CVar csub(CVar a, CVar b);
CVar cmul(CVar a, CVar b);
Var modulus(CVar a);
CVar crelu(CVar a);
CVar reshape(CVar a, Shape shape);
CVar concat(std::span<const CVar> parts, std::size_t axis);
CVar slice(CVar a, std::size_t axis, std::size_t begin, std::size_t end);

}  // namespace cvnn
