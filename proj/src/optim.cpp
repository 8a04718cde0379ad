#include "cvnn/optim.hpp"

#include <cmath>

#include "cvnn/errors.hpp"

namespace cvnn {

void zero_grad(std::span<Parameter* const> params) {
  for (Parameter* p : params) p->zero_grad();
}

void sgd_step(std::span<Parameter* const> params, double lr) {
  for (Parameter* p : params) {
    if (!p->trainable || p->grad.shape() != p->value.shape()) continue;
    for (std::size_t k = 0; k < p->value.numel(); ++k) p->value[k] -= lr * p->grad[k];
  }
}

Adam::Adam(std::vector<Parameter*> params, AdamOptions options) : options_(options) {
  for (Parameter* p : params) {
    if (!p->trainable) continue;
    params_.push_back(p);
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

void Adam::zero_grad() { cvnn::zero_grad(params_); }

void Adam::step() {
  ++steps_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  double clip_scale = 1.0;
  if (options_.clip_norm > 0.0) {
    double sq = 0.0;
    for (Parameter* p : params_) {
      if (p->grad.shape() != p->value.shape()) continue;
      for (double g : p->grad.data()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > options_.clip_norm) clip_scale = options_.clip_norm / norm;
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    const bool has_grad = p.grad.shape() == p.value.shape();
    double* m = m_[i].ptr();
    double* v = v_[i].ptr();
    double* w = p.value.ptr();
    for (std::size_t k = 0; k < p.value.numel(); ++k) {
      double g = has_grad ? p.grad[k] * clip_scale : 0.0;
      if (options_.weight_decay > 0.0) g += options_.weight_decay * w[k];
      m[k] = b1 * m[k] + (1.0 - b1) * g;
      v[k] = b2 * v[k] + (1.0 - b2) * g * g;
      w[k] -= options_.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + options_.eps);
    }
  }
}

void Adam::save_state(Container& out) const {
  out.put("adam.step", Tensor::scalar(static_cast<double>(steps_)));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    out.put("adam.m." + params_[i]->name, m_[i]);
    out.put("adam.v." + params_[i]->name, v_[i]);
  }
}

void Adam::load_state(const Container& in) {
  steps_ = static_cast<std::uint64_t>(in.tensor("adam.step").item());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Tensor& m = in.tensor("adam.m." + params_[i]->name);
    const Tensor& v = in.tensor("adam.v." + params_[i]->name);
    if (m.shape() != m_[i].shape() || v.shape() != v_[i].shape()) {
      throw IoError("optimizer moment shape mismatch for " + params_[i]->name);
    }
    m_[i] = m;
    v_[i] = v;
  }
}

}  // namespace cvnn
