#include "cvnn/autograd.hpp"

#include <algorithm>
#include <cmath>

#include "cvnn/errors.hpp"
#include "internal.hpp"

namespace cvnn {

Parameter::Parameter(std::string name_, Tensor value_, bool trainable_)
    : name(std::move(name_)), value(std::move(value_)), grad(value.shape()), trainable(trainable_) {}

void Parameter::zero_grad() {
  if (grad.shape() != value.shape()) {
    grad = Tensor(value.shape());
  } else {
    grad.fill(0.0);
  }
}

const Tensor& Var::value() const {
  if (!tape) throw GraphError("use of an unbound variable");
  return tape->value(*this);
}

bool Var::requires_grad() const { return tape && tape->requires_grad(*this); }

void Tape::check(Var v) const {
  if (v.tape != this) throw GraphError("variable belongs to a different tape");
  if (v.node >= nodes_.size()) throw GraphError("unknown input node id " + std::to_string(v.node));
  const Node& n = nodes_[v.node];
  if (v.slot >= (n.param ? 1 : n.values.size())) {
    throw GraphError("node " + std::to_string(v.node) + " has no output slot " + std::to_string(v.slot));
  }
}

const Tensor& Tape::value(Var v) const {
  check(v);
  const Node& n = nodes_[v.node];
  return n.param ? n.param->value : n.values[v.slot];
}

bool Tape::requires_grad(Var v) const {
  check(v);
  return nodes_[v.node].requires_grad;
}

std::string_view Tape::op(std::uint32_t node) const { return nodes_.at(node).op; }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{"constant", {}, {}, {}, nullptr, false});
  nodes_.back().values.push_back(std::move(value));
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1), 0};
}

CVar Tape::constant(ComplexTensor value) { return CVar{constant(value.real()), constant(value.imag())}; }

Var Tape::param(Parameter& p) {
  // Parameter values are read in place; they must not change while the tape is alive.
  nodes_.push_back(Node{"parameter", {}, {}, {}, &p, p.trainable});
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1), 0};
}

std::vector<Var> Tape::record(std::string_view op, std::vector<Var> inputs, std::vector<Tensor> outputs,
                              BackwardFn backward) {
  if (outputs.empty()) throw GraphError("node '" + std::string(op) + "' has no outputs");
  bool needs = false;
  for (const Var& v : inputs) {
    check(v);
    needs = needs || nodes_[v.node].requires_grad;
  }
  Node node{op, std::move(inputs), std::move(outputs), {}, nullptr, needs};
  if (needs) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  const auto id = static_cast<std::uint32_t>(nodes_.size() - 1);
  std::vector<Var> vars;
  for (std::uint32_t s = 0; s < nodes_.back().values.size(); ++s) vars.push_back(Var{this, id, s});
  return vars;
}

Var Tape::record1(std::string_view op, std::vector<Var> inputs, Tensor output, BackwardFn backward) {
  std::vector<Tensor> outs;
  outs.push_back(std::move(output));
  return record(op, std::move(inputs), std::move(outs), std::move(backward))[0];
}

void Tape::backward(Var root) {
  check(root);
  if (value(root).numel() != 1) {
    throw ContractError("backward root must be a scalar, got shape " + value(root).shape().str());
  }
  std::vector<std::vector<Tensor>> grads(root.node + 1);
  grads[root.node].resize(std::max<std::size_t>(1, nodes_[root.node].values.size()));
  grads[root.node][root.slot] = Tensor(value(root).shape(), 1.0);

  for (std::uint32_t id = root.node + 1; id-- > 0;) {
    Node& node = nodes_[id];
    auto& g = grads[id];
    const bool has_grad = std::any_of(g.begin(), g.end(), [](const Tensor& t) { return !t.empty(); });
    if (!has_grad || !node.requires_grad) {
      g.clear();
      g.shrink_to_fit();
      continue;
    }
    if (node.param) {
      Parameter& p = *node.param;
      if (p.grad.shape() != p.value.shape()) p.grad = Tensor(p.value.shape());
      p.grad.accumulate(g[0]);
    } else if (node.backward) {
      for (std::size_t k = 0; k < g.size(); ++k) {
        if (g[k].empty()) g[k] = Tensor(node.values[k].shape());
      }
      BackwardContext ctx{g, node.values, {}};
      ctx.needs.reserve(node.inputs.size());
      for (const Var& in : node.inputs) ctx.needs.push_back(nodes_[in.node].requires_grad);
      std::vector<Tensor> in_grads = node.backward(ctx);
      if (in_grads.size() != node.inputs.size()) {
        throw GraphError("backward of '" + std::string(node.op) + "' returned " + std::to_string(in_grads.size()) +
                         " gradients for " + std::to_string(node.inputs.size()) + " inputs");
      }
      for (std::size_t i = 0; i < node.inputs.size(); ++i) {
        if (in_grads[i].empty() || !ctx.needs[i]) continue;
        const Var in = node.inputs[i];
        if (in_grads[i].shape() != value(in).shape()) {
          throw GraphError("backward of '" + std::string(node.op) + "' produced gradient " +
                           in_grads[i].shape().str() + " for input of shape " +
                           value(in).shape().str());
        }
        auto& slot_grads = grads[in.node];
        if (slot_grads.empty()) slot_grads.resize(std::max<std::size_t>(1, nodes_[in.node].values.size()));
        if (slot_grads[in.slot].empty()) {
          slot_grads[in.slot] = std::move(in_grads[i]);
        } else {
          slot_grads[in.slot].accumulate(in_grads[i]);
        }
      }
    }
    g.clear();
    g.shrink_to_fit();
  }
}

bool any_requires_grad(std::span<const Var> vars) {
  return std::any_of(vars.begin(), vars.end(), [](const Var& v) { return v.requires_grad(); });
}

namespace {

Tape& tape_of(Var a) {
  if (!a.tape) throw GraphError("use of an unbound variable");
  return *a.tape;
}

Tape& tape_of(Var a, Var b) {
  if (a.tape != b.tape) throw GraphError("operands live on different tapes");
  return tape_of(a);
}

// Sum `full` into a tensor of `target` shape where element k of `full` maps to
// k % period.
Tensor reduce_to(const Tensor& full, const Shape& target, std::size_t period) {
  if (full.shape() == target) return full;
  Tensor out(target);
  for (std::size_t k = 0; k < full.numel(); ++k) out[k % period] += full[k];
  return out;
}

template <typename Fwd, typename Bwd>
Var binary(std::string_view name, Var a, Var b, Fwd fwd, Bwd bwd) {
  Tape& tape = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const auto plan = detail::plan_broadcast(av.shape(), bv.shape());
  Tensor out(plan.out);
  for (std::size_t k = 0; k < out.numel(); ++k) out[k] = fwd(av[k % plan.a_period], bv[k % plan.b_period]);
  return tape.record1(name, {a, b}, std::move(out), [a, b, plan, bwd](const BackwardContext& ctx) {
    const Tensor& g = ctx.grads[0];
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    Tensor ga(plan.out), gb(plan.out);
    for (std::size_t k = 0; k < g.numel(); ++k) {
      bwd(av[k % plan.a_period], bv[k % plan.b_period], g[k], ga[k], gb[k]);
    }
    std::vector<Tensor> res(2);
    if (ctx.needs[0]) res[0] = reduce_to(ga, av.shape(), plan.a_period);
    if (ctx.needs[1]) res[1] = reduce_to(gb, bv.shape(), plan.b_period);
    return res;
  });
}

template <typename Fwd, typename Deriv>
Var unary(std::string_view name, Var a, Fwd fwd, Deriv deriv) {
  Tape& tape = tape_of(a);
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t k = 0; k < out.numel(); ++k) out[k] = fwd(av[k]);
  return tape.record1(name, {a}, std::move(out), [a, deriv](const BackwardContext& ctx) {
    const Tensor& g = ctx.grads[0];
    const Tensor& av = a.value();
    const Tensor& y = ctx.outputs[0];
    Tensor ga(av.shape());
    for (std::size_t k = 0; k < ga.numel(); ++k) ga[k] = g[k] * deriv(av[k], y[k]);
    return std::vector<Tensor>{std::move(ga)};
  });
}

}  // namespace

Var add(Var a, Var b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double g, double& ga, double& gb) {
        ga = g;
        gb = g;
      });
}

Var sub(Var a, Var b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double g, double& ga, double& gb) {
        ga = g;
        gb = -g;
      });
}

Var mul(Var a, Var b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double x, double y, double g, double& ga, double& gb) {
        ga = g * y;
        gb = g * x;
      });
}

Var scale(Var a, double factor) {
  return unary(
      "scale", a, [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

Var add_scalar(Var a, double value) {
  return unary(
      "add_scalar", a, [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Var square(Var a) {
  return unary(
      "square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var relu(Var a) {
  double margin = std::numeric_limits<double>::infinity();
  for (double v : a.value().data()) margin = std::min(margin, std::abs(v));
  a.tape->note_kink(margin);
  return unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var a) {
  return unary(
      "sigmoid", a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var sum(Var a) {
  Tape& tape = tape_of(a);
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return tape.record1("sum", {a}, Tensor::scalar(s), [a](const BackwardContext& ctx) {
    return std::vector<Tensor>{Tensor(a.value().shape(), ctx.grads[0][0])};
  });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().numel())); }

Var reshape(Var a, Shape shape) {
  Tape& tape = tape_of(a);
  const Shape from = a.value().shape();
  return tape.record1("reshape", {a}, a.value().reshaped(std::move(shape)), [from](const BackwardContext& ctx) {
    return std::vector<Tensor>{ctx.grads[0].reshaped(from)};
  });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero variables");
  Tape& tape = tape_of(parts[0]);
  std::vector<Tensor> values;
  std::vector<std::size_t> extents;
  for (const Var& v : parts) {
    tape_of(parts[0], v);
    values.push_back(v.value());
    extents.push_back(v.value().shape()[axis]);
  }
  Tensor out = cvnn::concat(values, axis);
  return tape.record1("concat", std::vector<Var>(parts.begin(), parts.end()), std::move(out),
                      [axis, extents](const BackwardContext& ctx) {
                        std::vector<Tensor> res;
                        std::size_t begin = 0;
                        for (std::size_t i = 0; i < extents.size(); ++i) {
                          if (ctx.needs[i]) {
                            res.push_back(cvnn::slice(ctx.grads[0], axis, begin, begin + extents[i]));
                          } else {
                            res.emplace_back();
                          }
                          begin += extents[i];
                        }
                        return res;
                      });
}

Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end) {
  Tape& tape = tape_of(a);
  const Shape from = a.value().shape();
  return tape.record1("slice", {a}, cvnn::slice(a.value(), axis, begin, end),
                      [from, axis, begin, end](const BackwardContext& ctx) {
                        Tensor g(from);
                        const Tensor& up = ctx.grads[0];
                        const std::size_t inner = from.stride(axis + 1);
                        const std::size_t outer = from.numel() / from.stride(axis);
                        const std::size_t block = (end - begin) * inner;
                        for (std::size_t o = 0; o < outer; ++o) {
                          std::copy_n(up.ptr() + o * block, block, g.ptr() + o * from.stride(axis) + begin * inner);
                        }
                        return std::vector<Tensor>{std::move(g)};
                      });
}

CVar cadd(CVar a, CVar b) { return {add(a.re, b.re), add(a.im, b.im)}; }

CVar csub(CVar a, CVar b) { return {sub(a.re, b.re), sub(a.im, b.im)}; }

CVar cmul(CVar a, CVar b) {
  return {sub(mul(a.re, b.re), mul(a.im, b.im)), add(mul(a.re, b.im), mul(a.im, b.re))};
}

Var modulus(CVar a) {
  Tape& tape = tape_of(a.re, a.im);
  const Tensor& re = a.re.value();
  const Tensor& im = a.im.value();
  if (re.shape() != im.shape()) throw ShapeError("complex parts differ in shape");
  Tensor out(re.shape());
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < out.numel(); ++k) {
    out[k] = std::hypot(re[k], im[k]);
    margin = std::min(margin, out[k]);
  }
  tape.note_kink(margin);
  return tape.record1("modulus", {a.re, a.im}, std::move(out), [a](const BackwardContext& ctx) {
    const Tensor& g = ctx.grads[0];
    const Tensor& y = ctx.outputs[0];
    const Tensor& re = a.re.value();
    const Tensor& im = a.im.value();
    Tensor gr(re.shape()), gi(re.shape());
    for (std::size_t k = 0; k < g.numel(); ++k) {
      if (y[k] > 0.0) {
        gr[k] = g[k] * re[k] / y[k];
        gi[k] = g[k] * im[k] / y[k];
      }
    }
    return std::vector<Tensor>{std::move(gr), std::move(gi)};
  });
}

CVar crelu(CVar a) { return {relu(a.re), relu(a.im)}; }

CVar reshape(CVar a, Shape shape) { return {reshape(a.re, shape), reshape(a.im, shape)}; }

CVar concat(std::span<const CVar> parts, std::size_t axis) {
  std::vector<Var> re, im;
  for (const auto& p : parts) {
    re.push_back(p.re);
    im.push_back(p.im);
  }
  return {concat(re, axis), concat(im, axis)};
}

CVar slice(CVar a, std::size_t axis, std::size_t begin, std::size_t end) {
  return {slice(a.re, axis, begin, end), slice(a.im, axis, begin, end)};
}

}  // namespace cvnn
