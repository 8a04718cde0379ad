#pragma once

#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "cvnn/autograd.hpp"
#include "cvnn/nn_ops.hpp"

namespace cvnn {

enum class Mode { train, infer };
enum class BnMode { per_component, covariance };
enum class InitScheme { rayleigh, glorot };

using Rng = std::mt19937_64;

/// Complex kernel parts (A, B) for a kernel of `shape` = (out, in, ...).
/// rayleigh: modulus ~ Rayleigh(1/sqrt(fan_in)), phase ~ U[-pi, pi).
/// glorot: A and B independently Glorot-uniform.
std::pair<Tensor, Tensor> init_complex_weights(const Shape& shape, Rng& rng, InitScheme scheme);

/// He-normal real weights for a relu-followed layer.
Tensor init_he_normal(const Shape& shape, Rng& rng);
Tensor init_glorot_uniform(const Shape& shape, Rng& rng);

/// Real 3x3 (or k x k) convolution with bias, "same" zero padding.
class RealConv {
 public:
  RealConv(const std::string& name, std::size_t in_channels, std::size_t out_channels, std::size_t kernel, Rng& rng);
  Var forward(Tape& tape, Var x);
  void collect(std::vector<Parameter*>& out);

  Parameter weight;
  Parameter bias;
  ConvGeometry geometry;
};

class RealFC {
 public:
  enum class Init { he, glorot };
  RealFC(const std::string& name, std::size_t in_features, std::size_t out_features, Rng& rng, Init init = Init::he);
  Var forward(Tape& tape, Var x);
  void collect(std::vector<Parameter*>& out);

  Parameter weight;
  Parameter bias;
};

/// Complex convolution W = A + iB with complex bias.
class ComplexConv {
 public:
  ComplexConv(const std::string& name, std::size_t in_channels, std::size_t out_channels, std::size_t kernel, Rng& rng,
              InitScheme scheme);
  CVar forward(Tape& tape, CVar x);
  void collect(std::vector<Parameter*>& out);

  Parameter a;
  Parameter b;
  Parameter bias_r;
  Parameter bias_i;
  ConvGeometry geometry;
};

class ComplexFC {
 public:
  ComplexFC(const std::string& name, std::size_t in_features, std::size_t out_features, Rng& rng, InitScheme scheme);
  CVar forward(Tape& tape, CVar x);
  void collect(std::vector<Parameter*>& out);

  Parameter a;
  Parameter b;
  Parameter bias_r;
  Parameter bias_i;
};

/// Complex batch normalization.
///  per_component: ordinary BN on the real and imaginary parts separately.
///  covariance: per-channel whitening of (re, im) by V^{-1/2}.
/// Both finish with a per-part scale and shift. Running statistics follow
/// running = momentum * running + (1 - momentum) * batch.
class ComplexBN {
 public:
  ComplexBN(const std::string& name, std::size_t channels, BnMode mode, double momentum = 0.9, double eps = 1e-5);
  CVar forward(Tape& tape, CVar x, Mode mode);
  void collect(std::vector<Parameter*>& out);

  BnMode mode() const { return mode_; }
  double momentum = 0.9;
  double eps = 1e-5;

  Parameter gamma_r;
  Parameter beta_r;
  Parameter gamma_i;
  Parameter beta_i;
  // Running statistics (non-trainable). per_component uses mean/var per part;
  // covariance uses both means and the 2x2 covariance entries.
  Parameter running_mean_r;
  Parameter running_mean_i;
  Parameter running_var_r;
  Parameter running_var_i;
  Parameter running_cov_ri;

 private:
  BnMode mode_;
};

/// Pre-activation complex residual block:
///   BN -> CRelu -> Conv -> BN -> CRelu -> Conv, plus the skip path.
/// The skip is the identity, or a 1x1 complex convolution when the channel
/// count changes.
class ComplexResidualBlock {
 public:
  ComplexResidualBlock(const std::string& name, std::size_t in_channels, std::size_t out_channels, BnMode bn_mode,
                       Rng& rng, InitScheme scheme);
  CVar forward(Tape& tape, CVar x, Mode mode);
  void collect(std::vector<Parameter*>& out);

  ComplexBN bn1;
  ComplexConv conv1;
  ComplexBN bn2;
  ComplexConv conv2;
  std::optional<ComplexConv> projection;
};

}  // namespace cvnn
