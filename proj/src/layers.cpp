#include "cvnn/layers.hpp"

#include <cmath>
#include <numbers>

#include "cvnn/errors.hpp"

namespace cvnn {

namespace {

std::size_t fan_in(const Shape& shape) { return shape.numel() / shape[0]; }

Tensor zeros(std::size_t n) { return Tensor(Shape{n}); }
Tensor ones(std::size_t n) { return Tensor(Shape{n}, 1.0); }

}  // namespace

std::pair<Tensor, Tensor> init_complex_weights(const Shape& shape, Rng& rng, InitScheme scheme) {
  Tensor a(shape), b(shape);
  const double fi = static_cast<double>(fan_in(shape));
  if (scheme == InitScheme::rayleigh) {
    const double sigma = 1.0 / std::sqrt(fi);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_real_distribution<double> phase(-std::numbers::pi, std::numbers::pi);
    for (std::size_t k = 0; k < a.numel(); ++k) {
      // Inverse-CDF sample; 1-u keeps the argument of log in (0, 1].
      const double modulus = sigma * std::sqrt(-2.0 * std::log(1.0 - unit(rng)));
      const double theta = phase(rng);
      a[k] = modulus * std::cos(theta);
      b[k] = modulus * std::sin(theta);
    }
  } else {
    const double fo = static_cast<double>(shape.numel() / shape[1]);
    const double limit = std::sqrt(6.0 / (fi + fo));
    std::uniform_real_distribution<double> u(-limit, limit);
    for (auto& v : a.data()) v = u(rng);
    for (auto& v : b.data()) v = u(rng);
  }
  return {std::move(a), std::move(b)};
}

Tensor init_he_normal(const Shape& shape, Rng& rng) {
  Tensor w(shape);
  std::normal_distribution<double> n(0.0, std::sqrt(2.0 / static_cast<double>(fan_in(shape))));
  for (auto& v : w.data()) v = n(rng);
  return w;
}

Tensor init_glorot_uniform(const Shape& shape, Rng& rng) {
  Tensor w(shape);
  const double fi = static_cast<double>(fan_in(shape));
  const double fo = static_cast<double>(shape.numel() / shape[1]);
  std::uniform_real_distribution<double> u(-std::sqrt(6.0 / (fi + fo)), std::sqrt(6.0 / (fi + fo)));
  for (auto& v : w.data()) v = u(rng);
  return w;
}

RealConv::RealConv(const std::string& name, std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                   Rng& rng)
    : weight(name + ".weight", init_he_normal(Shape{out_channels, in_channels, kernel, kernel}, rng)),
      bias(name + ".bias", zeros(out_channels)),
      geometry{kernel / 2, 1} {}

Var RealConv::forward(Tape& tape, Var x) { return conv2d(x, tape.param(weight), tape.param(bias), geometry); }

void RealConv::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

RealFC::RealFC(const std::string& name, std::size_t in_features, std::size_t out_features, Rng& rng, Init init)
    : weight(name + ".weight", init == Init::he ? init_he_normal(Shape{out_features, in_features}, rng)
                                                : init_glorot_uniform(Shape{out_features, in_features}, rng)),
      bias(name + ".bias", zeros(out_features)) {}

Var RealFC::forward(Tape& tape, Var x) { return linear(x, tape.param(weight), tape.param(bias)); }

void RealFC::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

namespace {

std::pair<Tensor, Tensor> kernel_pair(const Shape& shape, Rng& rng, InitScheme scheme) {
  return init_complex_weights(shape, rng, scheme);
}

}  // namespace

ComplexConv::ComplexConv(const std::string& name, std::size_t in_channels, std::size_t out_channels,
                         std::size_t kernel, Rng& rng, InitScheme scheme)
    : a(name + ".A", Tensor()),
      b(name + ".B", Tensor()),
      bias_r(name + ".bias_r", zeros(out_channels)),
      bias_i(name + ".bias_i", zeros(out_channels)),
      geometry{kernel / 2, 1} {
  auto [ka, kb] = kernel_pair(Shape{out_channels, in_channels, kernel, kernel}, rng, scheme);
  a.value = std::move(ka);
  b.value = std::move(kb);
  a.zero_grad();
  b.zero_grad();
}

CVar ComplexConv::forward(Tape& tape, CVar x) {
  return complex_conv2d(x, tape.param(a), tape.param(b), CVar{tape.param(bias_r), tape.param(bias_i)}, geometry);
}

void ComplexConv::collect(std::vector<Parameter*>& out) {
  out.insert(out.end(), {&a, &b, &bias_r, &bias_i});
}

ComplexFC::ComplexFC(const std::string& name, std::size_t in_features, std::size_t out_features, Rng& rng,
                     InitScheme scheme)
    : a(name + ".A", Tensor()),
      b(name + ".B", Tensor()),
      bias_r(name + ".bias_r", zeros(out_features)),
      bias_i(name + ".bias_i", zeros(out_features)) {
  auto [ka, kb] = kernel_pair(Shape{out_features, in_features}, rng, scheme);
  a.value = std::move(ka);
  b.value = std::move(kb);
  a.zero_grad();
  b.zero_grad();
}

CVar ComplexFC::forward(Tape& tape, CVar x) {
  return complex_linear(x, tape.param(a), tape.param(b), CVar{tape.param(bias_r), tape.param(bias_i)});
}

void ComplexFC::collect(std::vector<Parameter*>& out) {
  out.insert(out.end(), {&a, &b, &bias_r, &bias_i});
}

ComplexBN::ComplexBN(const std::string& name, std::size_t channels, BnMode mode, double momentum_, double eps_)
    : momentum(momentum_),
      eps(eps_),
      gamma_r(name + ".gamma_r", ones(channels)),
      beta_r(name + ".beta_r", zeros(channels)),
      gamma_i(name + ".gamma_i", ones(channels)),
      beta_i(name + ".beta_i", zeros(channels)),
      running_mean_r(name + ".running_mean_r", zeros(channels), false),
      running_mean_i(name + ".running_mean_i", zeros(channels), false),
      running_var_r(name + ".running_var_r", ones(channels), false),
      running_var_i(name + ".running_var_i", ones(channels), false),
      running_cov_ri(name + ".running_cov_ri", zeros(channels), false),
      mode_(mode) {}

namespace {

void blend(Tensor& running, const Tensor& batch, double momentum) {
  for (std::size_t k = 0; k < running.numel(); ++k) running[k] = momentum * running[k] + (1.0 - momentum) * batch[k];
}

}  // namespace

CVar ComplexBN::forward(Tape& tape, CVar x, Mode mode) {
  const Shape& s = x.shape();
  if (s.rank() < 2 || s[1] != gamma_r.value.numel()) {
    throw ShapeError("batch norm over " + std::to_string(gamma_r.value.numel()) + " channels got input " + s.str());
  }
  CVar normalized;
  if (mode == Mode::train) {
    if (s[0] < 2) throw ContractError("batch normalization in training mode needs a batch of at least 2");
    if (mode_ == BnMode::per_component) {
      ChannelStats sr, si;
      normalized = {batch_normalize(x.re, eps, &sr), batch_normalize(x.im, eps, &si)};
      blend(running_mean_r.value, sr.mean, momentum);
      blend(running_var_r.value, sr.var, momentum);
      blend(running_mean_i.value, si.mean, momentum);
      blend(running_var_i.value, si.var, momentum);
    } else {
      ComplexStats st;
      normalized = covariance_whiten(x, eps, &st);
      blend(running_mean_r.value, st.mean_re, momentum);
      blend(running_mean_i.value, st.mean_im, momentum);
      blend(running_var_r.value, st.cov_rr, momentum);
      blend(running_cov_ri.value, st.cov_ri, momentum);
      blend(running_var_i.value, st.cov_ii, momentum);
    }
  } else if (mode_ == BnMode::per_component) {
    normalized = {normalize_with(x.re, {running_mean_r.value, running_var_r.value}, eps),
                  normalize_with(x.im, {running_mean_i.value, running_var_i.value}, eps)};
  } else {
    normalized = whiten_with(x,
                             {running_mean_r.value, running_mean_i.value, running_var_r.value, running_cov_ri.value,
                              running_var_i.value},
                             eps);
  }
  return {channel_affine(normalized.re, tape.param(gamma_r), tape.param(beta_r)),
          channel_affine(normalized.im, tape.param(gamma_i), tape.param(beta_i))};
}

void ComplexBN::collect(std::vector<Parameter*>& out) {
  out.insert(out.end(), {&gamma_r, &beta_r, &gamma_i, &beta_i, &running_mean_r, &running_mean_i, &running_var_r,
                         &running_var_i});
  if (mode_ == BnMode::covariance) out.push_back(&running_cov_ri);
}

ComplexResidualBlock::ComplexResidualBlock(const std::string& name, std::size_t in_channels,
                                           std::size_t out_channels, BnMode bn_mode, Rng& rng, InitScheme scheme)
    : bn1(name + ".bn1", in_channels, bn_mode),
      conv1(name + ".conv1", in_channels, out_channels, 3, rng, scheme),
      bn2(name + ".bn2", out_channels, bn_mode),
      conv2(name + ".conv2", out_channels, out_channels, 3, rng, scheme) {
  if (in_channels != out_channels) {
    projection.emplace(name + ".proj", in_channels, out_channels, 1, rng, scheme);
  }
}

CVar ComplexResidualBlock::forward(Tape& tape, CVar x, Mode mode) {
  CVar h = conv1.forward(tape, crelu(bn1.forward(tape, x, mode)));
  h = conv2.forward(tape, crelu(bn2.forward(tape, h, mode)));
  const CVar skip = projection ? projection->forward(tape, x) : x;
  return cadd(h, skip);
}

void ComplexResidualBlock::collect(std::vector<Parameter*>& out) {
  bn1.collect(out);
  conv1.collect(out);
  bn2.collect(out);
  conv2.collect(out);
  if (projection) projection->collect(out);
}

}  // namespace cvnn
