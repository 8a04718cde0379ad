#include "cvnn/verify.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <sstream>

#include "cvnn/errors.hpp"
#include "cvnn/nn_ops.hpp"
#include "cvnn/objectives.hpp"

namespace cvnn {

namespace {

std::size_t uniform(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

Tensor normal(const Shape& shape, Rng& rng, double mean = 0.0, double sd = 1.0) {
  Tensor t(shape);
  std::normal_distribution<double> d(mean, sd);
  for (auto& v : t.data()) v = d(rng);
  return t;
}

Tensor uniform_tensor(const Shape& shape, Rng& rng, double lo, double hi) {
  Tensor t(shape);
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& v : t.data()) v = d(rng);
  return t;
}

Shape shape4(Rng& rng, std::size_t n_lo = 1) { return Shape{uniform(rng, n_lo, 2), uniform(rng, 1, 4), uniform(rng, 2, 8), uniform(rng, 2, 8)}; }

Shape any_shape(Rng& rng) {
  std::vector<std::size_t> dims(uniform(rng, 1, 4));
  for (auto& d : dims) d = uniform(rng, 1, 5);
  return Shape(dims);
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(3);
  s << v;
  return s.str();
}

using Fn = std::function<std::vector<Var>(Tape&, const std::vector<Var>&)>;

GradCase op_case(std::string name, std::function<std::vector<Tensor>(Rng&)> sample, Fn fn) {
  return {std::move(name), [sample = std::move(sample), fn = std::move(fn)](Rng& rng) {
            return make_problem(sample(rng), fn);
          }};
}

std::vector<Var> one(Var v) { return {v}; }
std::vector<Var> both(CVar z) { return {z.re, z.im}; }

template <class Layer>
GradProblem layer_problem(std::shared_ptr<Layer> layer, Tensor x_re, Tensor x_im,
                          std::function<CVar(Layer&, Tape&, CVar)> fn) {
  struct Holder {
    std::shared_ptr<Layer> layer;
    Parameter xr{"x.re", Tensor()};
    Parameter xi{"x.im", Tensor()};
  };
  auto h = std::make_shared<Holder>();
  h->layer = std::move(layer);
  h->xr.value = std::move(x_re);
  h->xr.zero_grad();
  h->xi.value = std::move(x_im);
  h->xi.zero_grad();
  GradProblem p;
  p.params = {&h->xr, &h->xi};
  std::vector<Parameter*> all;
  h->layer->collect(all);
  for (Parameter* q : all) {
    if (q->trainable) p.params.push_back(q);
  }
  p.forward = [h, fn](Tape& tape) { return both(fn(*h->layer, tape, CVar{tape.param(h->xr), tape.param(h->xi)})); };
  p.owner = h;
  return p;
}

// Gamma/beta away from their initial values so the affine part is exercised.
void jitter(ComplexBN& bn, Rng& rng) {
  for (Parameter* p : {&bn.gamma_r, &bn.gamma_i}) p->value = uniform_tensor(p->value.shape(), rng, 0.5, 1.5);
  for (Parameter* p : {&bn.beta_r, &bn.beta_i}) p->value = normal(p->value.shape(), rng, 0.0, 0.5);
}

}  // namespace

GradProblem make_problem(std::vector<Tensor> inputs, Fn fn) {
  auto params = std::make_shared<std::vector<Parameter>>();
  params->reserve(inputs.size());
  for (std::size_t k = 0; k < inputs.size(); ++k) params->emplace_back("input" + std::to_string(k), std::move(inputs[k]));
  GradProblem p;
  for (auto& q : *params) p.params.push_back(&q);
  p.forward = [params, fn = std::move(fn)](Tape& tape) {
    std::vector<Var> leaves;
    for (auto& q : *params) leaves.push_back(tape.param(q));
    return fn(tape, leaves);
  };
  p.owner = params;
  return p;
}

GradCheckResult check_gradients(const GradCase& gcase, Rng& rng, const GradCheckOptions& options) {
  GradCheckResult result;
  GradProblem problem;
  for (int attempt = 0;; ++attempt) {
    problem = gcase.make(rng);
    Tape tape;
    problem.forward(tape);
    if (tape.kink_margin() >= options.kink_margin) break;
    if (attempt >= options.max_resample) {
      result.passed = false;
      result.worst = "could not sample inputs away from kinks";
      return result;
    }
  }

  std::vector<Tensor> weights;
  {
    Tape tape;
    for (const Var& v : problem.forward(tape)) weights.push_back(normal(v.shape(), rng));
  }
  const auto weighted_sum = [&](Tape& tape, const std::vector<Var>& outs) {
    Var total = sum(mul(outs[0], tape.constant(weights[0])));
    for (std::size_t j = 1; j < outs.size(); ++j) total = add(total, sum(mul(outs[j], tape.constant(weights[j]))));
    return total;
  };
  const auto loss_value = [&]() {
    Tape tape;
    return weighted_sum(tape, problem.forward(tape)).value()[0];
  };

  for (Parameter* p : problem.params) p->zero_grad();
  {
    Tape tape;
    tape.backward(weighted_sum(tape, problem.forward(tape)));
  }

  for (Parameter* p : problem.params) {
    const std::size_t n = p->value.numel();
    std::vector<std::size_t> coords(n);
    for (std::size_t k = 0; k < n; ++k) coords[k] = k;
    if (n > options.max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords);
    }
    for (std::size_t k : coords) {
      const double original = p->value[k];
      p->value[k] = original + options.eps;
      const double up = loss_value();
      p->value[k] = original - options.eps;
      const double down = loss_value();
      p->value[k] = original;
      const double numeric = (up - down) / (2.0 * options.eps);
      const double analytic = p->grad[k];
      const double err = std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
      ++result.coords;
      if (err > result.max_error || !std::isfinite(err)) {
        result.max_error = std::isfinite(err) ? err : std::numeric_limits<double>::infinity();
        result.worst = p->name + "[" + std::to_string(k) + "]: analytic " + fmt(analytic) + ", numeric " + fmt(numeric);
      }
    }
  }
  result.passed = result.max_error <= options.rel_tol;
  return result;
}

std::vector<GradCase> builtin_gradient_cases() {
  std::vector<GradCase> cases;
  const auto same2 = [](Rng& r) {
    const Shape s = any_shape(r);
    return std::vector<Tensor>{normal(s, r), normal(s, r)};
  };
  const auto batch2 = [](Rng& r) {
    const Shape s{uniform(r, 2, 4), uniform(r, 1, 4), uniform(r, 1, 4)};
    return std::vector<Tensor>{normal(s, r), normal(s.tail(), r)};
  };
  const auto single = [](Rng& r) { return std::vector<Tensor>{normal(any_shape(r), r)}; };
  const auto complex_pair = [](Rng& r) {
    const Shape s = any_shape(r);
    return std::vector<Tensor>{normal(s, r), normal(s, r), normal(s, r), normal(s, r)};
  };

  cases.push_back(op_case("add", same2, [](Tape&, const std::vector<Var>& v) { return one(add(v[0], v[1])); }));
  cases.push_back(op_case("add_broadcast", batch2, [](Tape&, const std::vector<Var>& v) { return one(add(v[0], v[1])); }));
  cases.push_back(op_case("sub", same2, [](Tape&, const std::vector<Var>& v) { return one(sub(v[0], v[1])); }));
  cases.push_back(op_case(
      "sub_scalar",
      [](Rng& r) { return std::vector<Tensor>{normal(any_shape(r), r), normal(Shape{1}, r)}; },
      [](Tape&, const std::vector<Var>& v) { return one(sub(v[0], v[1])); }));
  cases.push_back(op_case("mul", same2, [](Tape&, const std::vector<Var>& v) { return one(mul(v[0], v[1])); }));
  cases.push_back(op_case("mul_broadcast", batch2, [](Tape&, const std::vector<Var>& v) { return one(mul(v[1], v[0])); }));
  cases.push_back(op_case("scale", single, [](Tape&, const std::vector<Var>& v) { return one(scale(v[0], -1.7)); }));
  cases.push_back(op_case("add_scalar", single, [](Tape&, const std::vector<Var>& v) { return one(add_scalar(v[0], 0.3)); }));
  cases.push_back(op_case("square", single, [](Tape&, const std::vector<Var>& v) { return one(square(v[0])); }));
  cases.push_back(op_case("relu", single, [](Tape&, const std::vector<Var>& v) { return one(relu(v[0])); }));
  cases.push_back(op_case("sigmoid", single, [](Tape&, const std::vector<Var>& v) { return one(sigmoid(v[0])); }));
  cases.push_back(op_case("sum", single, [](Tape&, const std::vector<Var>& v) { return one(sum(v[0])); }));
  cases.push_back(op_case("mean", single, [](Tape&, const std::vector<Var>& v) { return one(mean(v[0])); }));
  cases.push_back(op_case("reshape", single, [](Tape&, const std::vector<Var>& v) {
    return one(reshape(v[0], Shape{v[0].shape().numel()}));
  }));
  cases.push_back(op_case(
      "concat",
      [](Rng& r) {
        const Shape s = any_shape(r);
        std::vector<std::size_t> d = s.dims();
        d[d.size() - 1 - uniform(r, 0, d.size() - 1)] += uniform(r, 0, 3);
        return std::vector<Tensor>{normal(s, r), normal(Shape(d), r)};
      },
      [](Tape&, const std::vector<Var>& v) {
        const Shape &a = v[0].shape(), &b = v[1].shape();
        std::size_t axis = 0;
        for (std::size_t k = 0; k < a.rank(); ++k) {
          if (a[k] != b[k]) axis = k;
        }
        const std::array<Var, 2> parts{v[0], v[1]};
        return one(concat(parts, axis));
      }));
  cases.push_back(op_case(
      "slice", [](Rng& r) { return std::vector<Tensor>{normal(Shape{uniform(r, 2, 6), uniform(r, 1, 5)}, r)}; },
      [](Tape&, const std::vector<Var>& v) { return one(slice(v[0], 0, 1, v[0].shape()[0])); }));

  cases.push_back(op_case("cadd", complex_pair, [](Tape&, const std::vector<Var>& v) {
    return both(cadd(CVar{v[0], v[1]}, CVar{v[2], v[3]}));
  }));
  cases.push_back(op_case("csub", complex_pair, [](Tape&, const std::vector<Var>& v) {
    return both(csub(CVar{v[0], v[1]}, CVar{v[2], v[3]}));
  }));
  cases.push_back(op_case("cmul", complex_pair, [](Tape&, const std::vector<Var>& v) {
    return both(cmul(CVar{v[0], v[1]}, CVar{v[2], v[3]}));
  }));
  cases.push_back(op_case(
      "cmul_broadcast",
      [](Rng& r) {
        const Shape s{uniform(r, 2, 4), uniform(r, 1, 5)};
        return std::vector<Tensor>{normal(s, r), normal(s, r), normal(s.tail(), r), normal(s.tail(), r)};
      },
      [](Tape&, const std::vector<Var>& v) { return both(cmul(CVar{v[0], v[1]}, CVar{v[2], v[3]})); }));
  const auto complex_single = [](Rng& r) {
    const Shape s = any_shape(r);
    return std::vector<Tensor>{normal(s, r), normal(s, r)};
  };
  cases.push_back(op_case("modulus", complex_single,
                          [](Tape&, const std::vector<Var>& v) { return one(modulus(CVar{v[0], v[1]})); }));
  cases.push_back(op_case("crelu", complex_single,
                          [](Tape&, const std::vector<Var>& v) { return both(crelu(CVar{v[0], v[1]})); }));
  cases.push_back(op_case(
      "complex_concat_slice",
      [](Rng& r) {
        const Shape s{uniform(r, 1, 3), uniform(r, 2, 5)};
        return std::vector<Tensor>{normal(s, r), normal(s, r), normal(s, r), normal(s, r)};
      },
      [](Tape&, const std::vector<Var>& v) {
        const std::array<CVar, 2> parts{CVar{v[0], v[1]}, CVar{v[2], v[3]}};
        const CVar joined = concat(parts, 1);
        return both(reshape(slice(joined, 1, 1, joined.shape()[1]), Shape{joined.shape()[0] * (joined.shape()[1] - 1)}));
      }));

  // Convolutions: random kernel size, padding and stride.
  struct ConvDraw {
    std::size_t k, pad, stride;
  };
  const auto draw_conv = [](Rng& r, const Shape& x) {
    for (;;) {
      ConvDraw d{2 * uniform(r, 0, 1) + 1, 0, uniform(r, 1, 2)};
      d.pad = uniform(r, 0, d.k / 2);
      if (x[2] + 2 * d.pad >= d.k && x[3] + 2 * d.pad >= d.k) return d;
    }
  };
  cases.push_back(GradCase{"conv2d", [draw_conv](Rng& r) {
                             const Shape xs = shape4(r);
                             const ConvDraw d = draw_conv(r, xs);
                             const std::size_t o = uniform(r, 1, 4);
                             return make_problem(
                                 {normal(xs, r), normal(Shape{o, xs[1], d.k, d.k}, r), normal(Shape{o}, r)},
                                 [d](Tape&, const std::vector<Var>& v) {
                                   return one(conv2d(v[0], v[1], v[2], ConvGeometry{d.pad, d.stride}));
                                 });
                           }});
  for (bool with_bias : {true, false}) {
    cases.push_back(GradCase{with_bias ? "complex_conv2d" : "complex_conv2d_nobias", [draw_conv, with_bias](Rng& r) {
                               const Shape xs = shape4(r);
                               const ConvDraw d = draw_conv(r, xs);
                               const std::size_t o = uniform(r, 1, 4);
                               const Shape ks{o, xs[1], d.k, d.k};
                               return make_problem({normal(xs, r), normal(xs, r), normal(ks, r), normal(ks, r),
                                                    normal(Shape{o}, r), normal(Shape{o}, r)},
                                                   [d, with_bias](Tape&, const std::vector<Var>& v) {
                                                     std::optional<CVar> bias;
                                                     if (with_bias) bias = CVar{v[4], v[5]};
                                                     return both(complex_conv2d(CVar{v[0], v[1]}, v[2], v[3], bias,
                                                                                ConvGeometry{d.pad, d.stride}));
                                                   });
                             }});
  }
  cases.push_back(op_case(
      "linear",
      [](Rng& r) {
        const std::size_t n = uniform(r, 1, 4), i = uniform(r, 1, 6), o = uniform(r, 1, 6);
        return std::vector<Tensor>{normal(Shape{n, i}, r), normal(Shape{o, i}, r), normal(Shape{o}, r)};
      },
      [](Tape&, const std::vector<Var>& v) { return one(linear(v[0], v[1], v[2])); }));
  cases.push_back(op_case(
      "complex_linear",
      [](Rng& r) {
        const std::size_t n = uniform(r, 1, 4), i = uniform(r, 1, 6), o = uniform(r, 1, 6);
        return std::vector<Tensor>{normal(Shape{n, i}, r), normal(Shape{n, i}, r), normal(Shape{o, i}, r),
                                   normal(Shape{o, i}, r), normal(Shape{o}, r), normal(Shape{o}, r)};
      },
      [](Tape&, const std::vector<Var>& v) {
        return both(complex_linear(CVar{v[0], v[1]}, v[2], v[3], CVar{v[4], v[5]}));
      }));

  const auto pool_input = [](Rng& r, std::size_t parts) {
    const Shape s{uniform(r, 1, 2), uniform(r, 1, 4), 2 * uniform(r, 1, 4), 2 * uniform(r, 1, 4)};
    std::vector<Tensor> out;
    for (std::size_t k = 0; k < parts; ++k) out.push_back(normal(s, r));
    return out;
  };
  cases.push_back(op_case(
      "max_pool2d", [pool_input](Rng& r) { return pool_input(r, 1); },
      [](Tape&, const std::vector<Var>& v) { return one(max_pool2d(v[0], 2, 2)); }));
  cases.push_back(op_case(
      "max_pool2d_overlapping", [pool_input](Rng& r) { return pool_input(r, 1); },
      [](Tape&, const std::vector<Var>& v) { return one(max_pool2d(v[0], 2, 1)); }));
  cases.push_back(op_case(
      "complex_pool2d", [pool_input](Rng& r) { return pool_input(r, 2); },
      [](Tape&, const std::vector<Var>& v) { return both(complex_pool2d(CVar{v[0], v[1]}, 2, 2)); }));

  cases.push_back(op_case(
      "batch_normalize", [](Rng& r) { return std::vector<Tensor>{normal(shape4(r, 2), r, 0.5, 2.0)}; },
      [](Tape&, const std::vector<Var>& v) { return one(batch_normalize(v[0], 1e-5)); }));
  cases.push_back(op_case(
      "batch_normalize_2d",
      [](Rng& r) { return std::vector<Tensor>{normal(Shape{uniform(r, 3, 8), uniform(r, 1, 5)}, r)}; },
      [](Tape&, const std::vector<Var>& v) { return one(batch_normalize(v[0], 1e-5)); }));
  cases.push_back(GradCase{"normalize_with", [](Rng& r) {
                             const Shape s = shape4(r);
                             ChannelStats st{normal(Shape{s[1]}, r), uniform_tensor(Shape{s[1]}, r, 0.5, 2.0)};
                             return make_problem({normal(s, r)}, [st](Tape&, const std::vector<Var>& v) {
                               return one(normalize_with(v[0], st, 1e-5));
                             });
                           }});
  cases.push_back(op_case(
      "channel_affine",
      [](Rng& r) {
        const Shape s = shape4(r);
        return std::vector<Tensor>{normal(s, r), normal(Shape{s[1]}, r), normal(Shape{s[1]}, r)};
      },
      [](Tape&, const std::vector<Var>& v) { return one(channel_affine(v[0], v[1], v[2])); }));
  cases.push_back(op_case(
      "covariance_whiten",
      [](Rng& r) {
        const Shape s = shape4(r, 2);
        Tensor re = normal(s, r, 0.3, 1.5), im = normal(s, r, -0.2, 1.0);
        for (std::size_t k = 0; k < re.numel(); ++k) im[k] += 0.5 * re[k];  // correlated parts
        return std::vector<Tensor>{std::move(re), std::move(im)};
      },
      [](Tape&, const std::vector<Var>& v) { return both(covariance_whiten(CVar{v[0], v[1]}, 1e-5)); }));
  cases.push_back(GradCase{"whiten_with", [](Rng& r) {
                             const Shape s = shape4(r);
                             const std::size_t c = s[1];
                             ComplexStats st{normal(Shape{c}, r), normal(Shape{c}, r), Tensor(Shape{c}),
                                             Tensor(Shape{c}), Tensor(Shape{c})};
                             for (std::size_t k = 0; k < c; ++k) {
                               const Tensor l = normal(Shape{3}, r);
                               st.cov_rr[k] = l[0] * l[0] + 0.5;
                               st.cov_ri[k] = l[0] * l[1];
                               st.cov_ii[k] = l[1] * l[1] + l[2] * l[2] + 0.5;
                             }
                             return make_problem({normal(s, r), normal(s, r)}, [st](Tape&, const std::vector<Var>& v) {
                               return both(whiten_with(CVar{v[0], v[1]}, st, 1e-5));
                             });
                           }});
  cases.push_back(op_case(
      "dft2d", [](Rng& r) { return std::vector<Tensor>{normal(shape4(r), r)}; },
      [](Tape&, const std::vector<Var>& v) { return both(dft2d(v[0])); }));
  cases.push_back(op_case(
      "l2_normalize_rows",
      [](Rng& r) { return std::vector<Tensor>{normal(Shape{uniform(r, 1, 4), uniform(r, 1, 8)}, r)}; },
      [](Tape&, const std::vector<Var>& v) { return one(l2_normalize_rows(v[0], 1e-12)); }));
  cases.push_back(op_case(
      "cl2_normalize",
      [](Rng& r) {
        const Shape s{uniform(r, 1, 4), uniform(r, 1, 8)};
        return std::vector<Tensor>{normal(s, r), normal(s, r)};
      },
      [](Tape&, const std::vector<Var>& v) { return both(cl2_normalize(CVar{v[0], v[1]})); }));

  const auto descriptors = [](Rng& r) {
    const Shape s{uniform(r, 1, 4), uniform(r, 1, 8)};
    return std::vector<Tensor>{normal(s, r), normal(s, r), normal(s, r), normal(s, r)};
  };
  for (DistanceMode mode : {DistanceMode::modulus_sum, DistanceMode::literal_clamped}) {
    cases.push_back(op_case(mode == DistanceMode::modulus_sum ? "complex_distance_modulus_sum"
                                                              : "complex_distance_literal_clamped",
                            descriptors, [mode](Tape&, const std::vector<Var>& v) {
                              return one(complex_distance(CVar{v[0], v[1]}, CVar{v[2], v[3]}, mode));
                            }));
  }
  for (LossForm form : {LossForm::corrected, LossForm::literal}) {
    cases.push_back(op_case(
        form == LossForm::corrected ? "softpn_corrected" : "softpn_literal",
        [](Rng& r) {
          const Shape s{uniform(r, 1, 8)};
          return std::vector<Tensor>{uniform_tensor(s, r, 0.0, 3.0), uniform_tensor(s, r, 0.0, 3.0),
                                     uniform_tensor(s, r, 0.0, 3.0)};
        },
        [form](Tape&, const std::vector<Var>& v) { return one(softpn_loss(v[0], v[1], v[2], form)); }));
  }
  cases.push_back(GradCase{"softpn_through_distance", [](Rng& r) {
                             const Shape s{uniform(r, 1, 4), uniform(r, 1, 6)};
                             std::vector<Tensor> in;
                             for (int k = 0; k < 6; ++k) in.push_back(normal(s, r));
                             return make_problem(std::move(in), [](Tape&, const std::vector<Var>& v) {
                               const CVar a{v[0], v[1]}, b{v[2], v[3]}, n{v[4], v[5]};
                               const auto m = DistanceMode::modulus_sum;
                               return one(softpn_loss(complex_distance(a, b, m), complex_distance(a, n, m),
                                                      complex_distance(b, n, m), LossForm::corrected));
                             });
                           }});
  cases.push_back(GradCase{"mse_pair_loss", [](Rng& r) {
                             const std::size_t n = uniform(r, 1, 8);
                             Tensor labels(Shape{n});
                             for (std::size_t k = 0; k < n; ++k) labels[k] = static_cast<double>(uniform(r, 0, 1));
                             return make_problem({uniform_tensor(Shape{n}, r, 0.0, 1.0)},
                                                 [labels](Tape&, const std::vector<Var>& v) {
                                                   return one(mse_pair_loss(v[0], labels));
                                                 });
                           }});

  for (BnMode mode : {BnMode::per_component, BnMode::covariance}) {
    cases.push_back(GradCase{mode == BnMode::per_component ? "complex_bn_per_component" : "complex_bn_covariance",
                             [mode](Rng& r) {
                               const Shape s = shape4(r, 2);
                               auto bn = std::make_shared<ComplexBN>("bn", s[1], mode);
                               jitter(*bn, r);
                               return layer_problem<ComplexBN>(
                                   bn, normal(s, r, 0.2, 1.3), normal(s, r, -0.1, 0.8),
                                   [](ComplexBN& l, Tape& t, CVar x) { return l.forward(t, x, Mode::train); });
                             }});
  }
  for (bool project : {false, true}) {
    cases.push_back(GradCase{project ? "residual_block_projection" : "residual_block", [project](Rng& r) {
                               const Shape s = shape4(r, 2);
                               const std::size_t out = project ? s[1] + uniform(r, 1, 2) : s[1];
                               const BnMode mode = uniform(r, 0, 1) ? BnMode::covariance : BnMode::per_component;
                               auto block =
                                   std::make_shared<ComplexResidualBlock>("block", s[1], out, mode, r, InitScheme::rayleigh);
                               jitter(block->bn1, r);
                               jitter(block->bn2, r);
                               return layer_problem<ComplexResidualBlock>(
                                   block, normal(s, r), normal(s, r),
                                   [](ComplexResidualBlock& l, Tape& t, CVar x) { return l.forward(t, x, Mode::train); });
                             }});
  }
  return cases;
}

SuiteReport run_gradient_suite(const std::vector<GradCase>& cases, std::size_t shapes_per_case, std::uint64_t seed,
                               const GradCheckOptions& options) {
  SuiteReport report;
  report.name = "gradients";
  Rng rng(seed);
  std::size_t coords = 0;
  for (const auto& gcase : cases) {
    for (std::size_t k = 0; k < shapes_per_case; ++k) {
      const GradCheckResult r = check_gradients(gcase, rng, options);
      ++report.cases;
      coords += r.coords;
      report.max_error = std::max(report.max_error, r.max_error);
      if (!r.passed && report.passed) {
        report.passed = false;
        report.detail = gcase.name + " (shape draw " + std::to_string(k) + "): " + r.worst;
      }
    }
  }
  if (report.passed) {
    report.detail = std::to_string(cases.size()) + " ops x " + std::to_string(shapes_per_case) + " shapes, " +
                    std::to_string(coords) + " coordinates";
  }
  return report;
}

namespace {

// Direct complex multiply-accumulate over every output position.
ComplexTensor naive_complex_conv(const ComplexTensor& x, const ComplexTensor& w, std::size_t pad, std::size_t stride) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  const std::size_t n = xs[0], c = xs[1], h = xs[2], wd = xs[3], o = ws[0], kh = ws[2], kw = ws[3];
  const std::size_t ho = (h + 2 * pad - kh) / stride + 1, wo = (wd + 2 * pad - kw) / stride + 1;
  Tensor re(Shape{n, o, ho, wo}), im(Shape{n, o, ho, wo});
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t q = 0; q < o; ++q) {
      for (std::size_t i = 0; i < ho; ++i) {
        for (std::size_t j = 0; j < wo; ++j) {
          std::complex<double> acc = 0.0;
          for (std::size_t ch = 0; ch < c; ++ch) {
            for (std::size_t u = 0; u < kh; ++u) {
              for (std::size_t v = 0; v < kw; ++v) {
                const auto y = static_cast<std::ptrdiff_t>(i * stride + u) - static_cast<std::ptrdiff_t>(pad);
                const auto z = static_cast<std::ptrdiff_t>(j * stride + v) - static_cast<std::ptrdiff_t>(pad);
                if (y < 0 || z < 0 || y >= static_cast<std::ptrdiff_t>(h) || z >= static_cast<std::ptrdiff_t>(wd)) continue;
                const std::size_t xi = ((b * c + ch) * h + static_cast<std::size_t>(y)) * wd + static_cast<std::size_t>(z);
                const std::size_t wi = ((q * c + ch) * kh + u) * kw + v;
                acc += std::complex<double>(w.real()[wi], w.imag()[wi]) *
                       std::complex<double>(x.real()[xi], x.imag()[xi]);
              }
            }
          }
          const std::size_t oi = ((b * o + q) * ho + i) * wo + j;
          re[oi] = acc.real();
          im[oi] = acc.imag();
        }
      }
    }
  }
  return ComplexTensor(std::move(re), std::move(im));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return std::numeric_limits<double>::infinity();
  double m = 0.0;
  for (std::size_t k = 0; k < a.numel(); ++k) m = std::max(m, std::abs(a[k] - b[k]));
  return m;
}

void record(SuiteReport& r, double err, double tol, const std::string& what) {
  r.max_error = std::max(r.max_error, std::isfinite(err) ? err : std::numeric_limits<double>::infinity());
  if (!(err <= tol) && r.passed) {
    r.passed = false;
    r.detail = what + ": error " + fmt(err) + " > " + fmt(tol);
  }
}

}  // namespace

SuiteReport run_conv_suite(std::size_t cases, std::uint64_t seed) {
  SuiteReport report;
  report.name = "conv_structure";
  Rng rng(seed);
  for (std::size_t t = 0; t < cases; ++t) {
    const std::size_t n = uniform(rng, 1, 3), c = uniform(rng, 1, 4), o = uniform(rng, 1, 4);
    const std::size_t k = 2 * uniform(rng, 0, 2) + 1, stride = uniform(rng, 1, 2), pad = uniform(rng, 0, k / 2);
    const std::size_t h = uniform(rng, std::max<std::size_t>(1, k > 2 * pad ? k - 2 * pad : 1), 8);
    const std::size_t w = uniform(rng, std::max<std::size_t>(1, k > 2 * pad ? k - 2 * pad : 1), 8);
    const Tensor xr = normal(Shape{n, c, h, w}, rng), xi = normal(Shape{n, c, h, w}, rng);
    const Tensor a = normal(Shape{o, c, k, k}, rng), b = normal(Shape{o, c, k, k}, rng);
    const ConvGeometry g{pad, stride};

    Tape tape;
    const CVar out = complex_conv2d(tape.constant(ComplexTensor(xr, xi)), tape.constant(a), tape.constant(b),
                                    std::nullopt, g);

    // Real conv of [x; y] with [[A, -B], [B, A]].
    Tensor kernel(Shape{2 * o, 2 * c, k, k});
    const std::size_t kk = k * k;
    for (std::size_t i = 0; i < o; ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        for (std::size_t q = 0; q < kk; ++q) {
          const double av = a[(i * c + j) * kk + q], bv = b[(i * c + j) * kk + q];
          kernel[(i * 2 * c + j) * kk + q] = av;
          kernel[(i * 2 * c + c + j) * kk + q] = -bv;
          kernel[((o + i) * 2 * c + j) * kk + q] = bv;
          kernel[((o + i) * 2 * c + c + j) * kk + q] = av;
        }
      }
    }
    const std::array<Tensor, 2> parts{xr, xi};
    const Var real = conv2d(tape.constant(concat(parts, 1)), tape.constant(kernel), std::nullopt, g);
    const Tensor block_re = slice(real.value(), 1, 0, o), block_im = slice(real.value(), 1, o, 2 * o);
    const std::string label = "case " + std::to_string(t);
    record(report, std::max(max_abs_diff(out.re.value(), block_re), max_abs_diff(out.im.value(), block_im)), 1e-12,
           label + " vs block conv");

    const ComplexTensor naive = naive_complex_conv(ComplexTensor(xr, xi), ComplexTensor(a, b), pad, stride);
    record(report, std::max(max_abs_diff(out.re.value(), naive.real()), max_abs_diff(out.im.value(), naive.imag())),
           1e-12, label + " vs naive loop");
    ++report.cases;
  }
  if (report.passed) report.detail = std::to_string(cases) + " random geometries";
  return report;
}

namespace {

// Rescales every channel of `x` (N,C,H,W) to unit biased variance.
void unit_variance(Tensor& x) {
  const Shape& s = x.shape();
  const std::size_t inner = s[2] * s[3];
  for (std::size_t c = 0; c < s[1]; ++c) {
    double sum_v = 0.0, sum_sq = 0.0;
    const double m = static_cast<double>(s[0] * inner);
    for (std::size_t n = 0; n < s[0]; ++n) {
      for (std::size_t p = 0; p < inner; ++p) sum_v += x[(n * s[1] + c) * inner + p];
    }
    const double mu = sum_v / m;
    for (std::size_t n = 0; n < s[0]; ++n) {
      for (std::size_t p = 0; p < inner; ++p) {
        const double d = x[(n * s[1] + c) * inner + p] - mu;
        sum_sq += d * d;
      }
    }
    const double sd = std::sqrt(sum_sq / m);
    for (std::size_t n = 0; n < s[0]; ++n) {
      for (std::size_t p = 0; p < inner; ++p) {
        double& v = x[(n * s[1] + c) * inner + p];
        v = mu + (v - mu) / sd;
      }
    }
  }
}

struct Moments2 {
  double mr, mi, rr, ri, ii;
};

Moments2 channel_moments(const Tensor& re, const Tensor& im, std::size_t c) {
  const Shape& s = re.shape();
  const std::size_t inner = s[2] * s[3];
  const double m = static_cast<double>(s[0] * inner);
  Moments2 out{0, 0, 0, 0, 0};
  for (std::size_t n = 0; n < s[0]; ++n) {
    for (std::size_t p = 0; p < inner; ++p) {
      out.mr += re[(n * s[1] + c) * inner + p];
      out.mi += im[(n * s[1] + c) * inner + p];
    }
  }
  out.mr /= m;
  out.mi /= m;
  for (std::size_t n = 0; n < s[0]; ++n) {
    for (std::size_t p = 0; p < inner; ++p) {
      const double a = re[(n * s[1] + c) * inner + p] - out.mr, b = im[(n * s[1] + c) * inner + p] - out.mi;
      out.rr += a * a;
      out.ri += a * b;
      out.ii += b * b;
    }
  }
  out.rr /= m;
  out.ri /= m;
  out.ii /= m;
  return out;
}

}  // namespace

SuiteReport run_bn_suite(std::size_t cases, std::uint64_t seed) {
  SuiteReport report;
  report.name = "batch_norm";
  Rng rng(seed);
  const double eps = 1e-5;
  for (std::size_t t = 0; t < cases; ++t) {
    const Shape s{uniform(rng, 2, 8), uniform(rng, 1, 4), uniform(rng, 1, 6), uniform(rng, 1, 6)};
    const std::string label = "case " + std::to_string(t);

    // Per-component mode on unit-variance channels with arbitrary means.
    {
      Tensor re = normal(s, rng, 0.0, 3.0), im = normal(s, rng, 0.0, 0.5);
      for (std::size_t k = 0; k < re.numel(); ++k) {
        const std::size_t c = (k / (s[2] * s[3])) % s[1];
        re[k] += static_cast<double>(c) * 2.5 - 3.0;
        im[k] += 1.5;
      }
      unit_variance(re);
      unit_variance(im);
      ComplexBN bn("bn", s[1], BnMode::per_component, 0.9, eps);
      Tape tape;
      const CVar y = bn.forward(tape, tape.constant(ComplexTensor(re, im)), Mode::train);
      for (std::size_t c = 0; c < s[1]; ++c) {
        const Moments2 m = channel_moments(y.re.value(), y.im.value(), c);
        record(report, std::max(std::abs(m.mr), std::abs(m.mi)), 1e-7, label + " per-component mean");
        record(report, std::max(std::abs(m.rr - 1.0 / (1.0 + eps)), std::abs(m.ii - 1.0 / (1.0 + eps))), 1e-6,
               label + " per-component variance");
      }
    }

    // Covariance mode: batch whose per-channel covariance is exactly a random
    // SPD matrix with eigenvalues in [10, 100].
    {
      const std::size_t count = s[0] * s[2] * s[3];
      if (count < 3) continue;
      Tensor re = normal(s, rng), im = normal(s, rng);
      const std::size_t inner = s[2] * s[3];
      for (std::size_t c = 0; c < s[1]; ++c) {
        const Moments2 m = channel_moments(re, im, c);
        // Whiten exactly with the Cholesky factor, then impose Q diag(l) Q^T.
        const double l11 = std::sqrt(m.rr), l21 = m.ri / l11, l22 = std::sqrt(m.ii - l21 * l21);
        std::uniform_real_distribution<double> lam(10.0, 100.0), angle(0.0, std::numbers::pi);
        const double e1 = std::sqrt(lam(rng)), e2 = std::sqrt(lam(rng)), th = angle(rng);
        const double q11 = std::cos(th), q12 = -std::sin(th), q21 = std::sin(th), q22 = std::cos(th);
        const double shift_r = normal(Shape{1}, rng, 0.0, 5.0)[0], shift_i = normal(Shape{1}, rng, 0.0, 5.0)[0];
        for (std::size_t n = 0; n < s[0]; ++n) {
          for (std::size_t p = 0; p < inner; ++p) {
            const std::size_t k = (n * s[1] + c) * inner + p;
            const double a = (re[k] - m.mr) / l11;
            const double b = (im[k] - m.mi - l21 * a) / l22;
            re[k] = shift_r + q11 * e1 * a + q12 * e2 * b;
            im[k] = shift_i + q21 * e1 * a + q22 * e2 * b;
          }
        }
      }
      ComplexBN bn("bn", s[1], BnMode::covariance, 0.9, eps);
      Tape tape;
      const CVar y = bn.forward(tape, tape.constant(ComplexTensor(re, im)), Mode::train);
      for (std::size_t c = 0; c < s[1]; ++c) {
        const Moments2 m = channel_moments(y.re.value(), y.im.value(), c);
        record(report, std::max(std::abs(m.mr), std::abs(m.mi)), 1e-7, label + " covariance-mode mean");
        record(report, std::max({std::abs(m.rr - 1.0), std::abs(m.ri), std::abs(m.ii - 1.0)}), 1e-6,
               label + " whitened covariance");
      }
    }
    ++report.cases;
  }
  if (report.passed) report.detail = std::to_string(report.cases) + " random batches per mode";
  return report;
}

SuiteReport run_loss_suite(std::size_t triples, std::uint64_t seed) {
  SuiteReport report;
  report.name = "loss_distance";
  Rng rng(seed);
  std::uniform_real_distribution<double> dist(0.0, 4.0);
  for (std::size_t t = 0; t < triples; ++t) {
    const std::size_t d = uniform(rng, 1, 16);
    const bool real_only = t % 10 == 0;
    const auto draw = [&]() {
      Tensor im = normal(Shape{d}, rng);
      if (real_only) im.fill(0.0);
      return ComplexTensor(normal(Shape{d}, rng), std::move(im));
    };
    const ComplexTensor f = draw(), g = draw(), h = draw();
    const std::string label = "triple " + std::to_string(t);
    for (DistanceMode mode : {DistanceMode::modulus_sum, DistanceMode::literal_clamped}) {
      const double ff = complex_distance(f, f, mode)[0];
      const double fg = complex_distance(f, g, mode)[0], gf = complex_distance(g, f, mode)[0];
      record(report, std::abs(ff), 0.0, label + " D(f,f)");
      record(report, std::abs(fg - gf), 1e-12, label + " symmetry");
      record(report, fg >= 0.0 ? 0.0 : -fg, 0.0, label + " non-negativity");
      if (real_only) {
        double l1 = 0.0;
        for (std::size_t k = 0; k < d; ++k) l1 += std::abs(f.real()[k] - g.real()[k]);
        record(report, std::abs(fg - l1), 1e-12, label + " real-vector reduction");
      }
    }
    const auto m = DistanceMode::modulus_sum;
    const double violation = complex_distance(f, h, m)[0] - complex_distance(f, g, m)[0] - complex_distance(g, h, m)[0];
    record(report, std::max(0.0, violation), 1e-9, label + " triangle inequality");

    const double dp = dist(rng), ds = dist(rng), step = 1e-6;
    for (LossForm form : {LossForm::corrected, LossForm::literal}) {
      record(report, std::abs(softpn_loss(dp, dp, form) - 0.5), 1e-15, label + " symmetry point");
      const double l = softpn_loss(dp, ds, form);
      const bool in_range = form == LossForm::literal ? (l > 0.0 && l <= 1.0) : (l > 0.0 && l < 2.0);
      record(report, in_range ? 0.0 : 1.0, 0.0, label + " loss range");
    }
    const double base = softpn_loss(dp, ds, LossForm::corrected);
    const double d_star = (softpn_loss(dp, ds + step, LossForm::corrected) - base) / step;
    const double d_pos = (softpn_loss(dp + step, ds, LossForm::corrected) - base) / step;
    record(report, d_star < 0.0 ? 0.0 : 1.0, 0.0, label + " decreasing in D*");
    record(report, d_pos > 0.0 ? 0.0 : 1.0, 0.0, label + " increasing in Dpos");
    ++report.cases;
  }
  if (report.passed) report.detail = std::to_string(triples) + " random triples";
  return report;
}

double brute_force_fpr95(const std::vector<double>& scores, const std::vector<int>& labels, bool larger_is_match) {
  std::size_t pos = 0, neg = 0;
  for (int l : labels) (l ? pos : neg)++;
  double best = 1.0;
  for (double t : scores) {
    std::size_t tp = 0, fp = 0;
    for (std::size_t k = 0; k < scores.size(); ++k) {
      const bool accept = larger_is_match ? scores[k] >= t : scores[k] <= t;
      if (accept) (labels[k] ? tp : fp)++;
    }
    if (static_cast<double>(tp) / static_cast<double>(pos) >= 0.95) {
      best = std::min(best, static_cast<double>(fp) / static_cast<double>(neg));
    }
  }
  return best;
}

SuiteReport run_fpr95_suite(std::size_t trials, std::uint64_t seed) {
  SuiteReport report;
  report.name = "fpr95";
  Rng rng(seed);
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t n = uniform(rng, 2, 200);
    const bool ties = uniform(rng, 0, 1) == 1;
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    for (std::size_t k = 0; k < n; ++k) {
      scores[k] = ties ? static_cast<double>(uniform(rng, 0, 6)) : normal(Shape{1}, rng)[0];
      labels[k] = static_cast<int>(uniform(rng, 0, 1));
    }
    labels[0] = 1;
    labels[1] = 0;
    const bool larger = uniform(rng, 0, 1) == 1;
    const double got = fpr95(scores, labels, larger ? Polarity::larger_is_match : Polarity::smaller_is_match);
    const double want = brute_force_fpr95(scores, labels, larger);
    record(report, std::abs(got - want), 0.0, "trial " + std::to_string(t) + " (N=" + std::to_string(n) + ")");
    ++report.cases;
  }
  if (report.passed) report.detail = std::to_string(trials) + " random instances, N <= 200";
  return report;
}

ComplexTensor naive_dft2d(const Tensor& x) {
  const Shape& s = x.shape();
  const std::size_t planes = s[0] * s[1], h = s[2], w = s[3];
  Tensor re(s), im(s);
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t k = 0; k < h; ++k) {
      for (std::size_t l = 0; l < w; ++l) {
        std::complex<double> acc = 0.0;
        for (std::size_t m = 0; m < h; ++m) {
          for (std::size_t n = 0; n < w; ++n) {
            const double turns = static_cast<double>((k * m) % h) / static_cast<double>(h) +
                                 static_cast<double>((l * n) % w) / static_cast<double>(w);
            acc += x[(p * h + m) * w + n] * std::polar(1.0, -2.0 * std::numbers::pi * turns);
          }
        }
        re[(p * h + k) * w + l] = acc.real();
        im[(p * h + k) * w + l] = acc.imag();
      }
    }
  }
  return ComplexTensor(std::move(re), std::move(im));
}

SuiteReport run_dft_suite(std::uint64_t seed) {
  SuiteReport report;
  report.name = "dft";
  Rng rng(seed);
  for (std::size_t h = 1; h <= 8; ++h) {
    for (std::size_t w = 1; w <= 8; ++w) {
      const Tensor x = normal(Shape{uniform(rng, 1, 2), uniform(rng, 1, 2), h, w}, rng);
      const ComplexTensor got = dft2d(x);
      const ComplexTensor want = naive_dft2d(x);
      const std::string label = std::to_string(h) + "x" + std::to_string(w);
      record(report, std::max(max_abs_diff(got.real(), want.real()), max_abs_diff(got.imag(), want.imag())), 1e-10,
             label + " vs direct sum");
      double energy_x = 0.0, energy_f = 0.0;
      for (double v : x.data()) energy_x += v * v;
      for (std::size_t k = 0; k < got.numel(); ++k) {
        energy_f += got.real()[k] * got.real()[k] + got.imag()[k] * got.imag()[k];
      }
      const double expected = static_cast<double>(h * w) * energy_x;
      record(report, std::abs(energy_f - expected) / expected, 1e-8, label + " Parseval");
      ++report.cases;
    }
  }
  if (report.passed) report.detail = "all sizes 1x1 .. 8x8";
  return report;
}

std::vector<SuiteReport> run_verification(std::uint64_t seed) {
  return {run_gradient_suite(builtin_gradient_cases(), 20, seed), run_conv_suite(100, seed + 1),
          run_bn_suite(50, seed + 2),   run_loss_suite(10000, seed + 3),
          run_fpr95_suite(1000, seed + 4), run_dft_suite(seed + 5)};
}

}  // namespace cvnn
