#pragma once

// Helpers shared between translation units; not part of the public headers.

#include <cstddef>
#include <span>

#include "cvnn/tensor.hpp"

namespace cvnn::detail {

struct BroadcastPlan {
  Shape out;
  std::size_t a_period;
  std::size_t b_period;
};

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b);

/// Separable 2D DFT over `planes` contiguous h*w planes. sign=-1 is the
/// forward transform, +1 the unnormalized inverse. Empty `in_im` means a real
/// input; empty `out_im` drops the imaginary output.
void dft_planes(std::span<const double> in_re, std::span<const double> in_im, std::span<double> out_re,
                std::span<double> out_im, std::size_t planes, std::size_t h, std::size_t w, int sign);

// Row-major GEMM wrappers: C = alpha * op(A) * op(B) + beta * C.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
          const double* b, double beta, double* c);

}  // namespace cvnn::detail
