#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cvnn/autograd.hpp"
#include "cvnn/serialize.hpp"

namespace cvnn {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // L2 coefficient added to the gradient; 0 disables
  double clip_norm = 0.0;     // global gradient-norm clip; 0 disables

  bool operator==(const AdamOptions&) const = default;
};

void zero_grad(std::span<Parameter* const> params);

/// Plain gradient descent on the trainable parameters.
void sgd_step(std::span<Parameter* const> params, double lr);

/// Adam with bias correction. Moments are kept per trainable parameter in the
/// order given at construction.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamOptions options);

  void step();
  void zero_grad();

  std::uint64_t steps() const { return steps_; }
  const AdamOptions& options() const { return options_; }

  /// Moments and step counter under "adam.m.<name>", "adam.v.<name>", "adam.step".
  void save_state(Container& out) const;
  void load_state(const Container& in);

 private:
  std::vector<Parameter*> params_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  AdamOptions options_;
  std::uint64_t steps_ = 0;
};

}  // namespace cvnn
