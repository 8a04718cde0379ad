#pragma once

#include <optional>

#include "cvnn/autograd.hpp"

namespace cvnn {

/// Zero padding and stride of a 2D cross-correlation (no kernel flip).
struct ConvGeometry {
  std::size_t pad = 1;
  std::size_t stride = 1;
};

/// Real 2D convolution. x: (N,C,H,W), weight: (O,C,kh,kw), bias: (O).
Var conv2d(Var x, Var weight, std::optional<Var> bias, ConvGeometry geometry);

/// Complex convolution with kernel A+iB:
///   re = A*x - B*y + bias_re,  im = B*x + A*y + bias_im.
CVar complex_conv2d(CVar x, Var a, Var b, std::optional<CVar> bias, ConvGeometry geometry);

/// x: (N,Din), weight: (Dout,Din), bias: (Dout).
Var linear(Var x, Var weight, std::optional<Var> bias);
CVar complex_linear(CVar x, Var a, Var b, std::optional<CVar> bias);

/// Max pooling over each (sample, channel) plane. Ties route the gradient to
/// the first maximum in row-major window order.
Var max_pool2d(Var x, std::size_t window, std::size_t stride);
/// Real and imaginary parts pooled independently.
CVar complex_pool2d(CVar x, std::size_t window, std::size_t stride);

/// Per-channel statistics. Channel axis is 1; reduction runs over every other
/// axis (N,H,W for feature maps, N for vectors).
struct ChannelStats {
  Tensor mean;
  Tensor var;  // biased
};

/// Training-mode normalization with batch statistics: (x - mean)/sqrt(var + eps).
Var batch_normalize(Var x, double eps, ChannelStats* stats_out = nullptr);
/// Normalization with fixed statistics (inference mode).
Var normalize_with(Var x, const ChannelStats& stats, double eps);
/// Per-channel scale and shift: gamma[c] * x + beta[c].
Var channel_affine(Var x, Var gamma, Var beta);

/// Per-channel complex mean and 2x2 covariance of (re, im).
struct ComplexStats {
  Tensor mean_re;
  Tensor mean_im;
  Tensor cov_rr;
  Tensor cov_ri;
  Tensor cov_ii;
};

/// Training-mode whitening: V^{-1/2} (z - E[z]) per channel, V regularized by eps*I.
CVar covariance_whiten(CVar x, double eps, ComplexStats* stats_out = nullptr);
CVar whiten_with(CVar x, const ComplexStats& stats, double eps);

/// Unnormalized per-plane 2D DFT of a real (N,C,H,W) map.
CVar dft2d(Var x);

/// Each row of an (N,D) tensor divided by (its Euclidean norm + eps).
Var l2_normalize_rows(Var x, double eps);
/// Real and imaginary parts normalized separately.
CVar cl2_normalize(CVar z, double eps = 1e-12);

}  // namespace cvnn
