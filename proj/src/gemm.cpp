#include <Eigen/Core>

#include "internal.hpp"

namespace cvnn::detail {

namespace {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;
}  // namespace

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
          const double* b, double beta, double* c) {
  const auto M = static_cast<Eigen::Index>(m), N = static_cast<Eigen::Index>(n), K = static_cast<Eigen::Index>(k);
  Map out(c, M, N);
  if (beta == 0.0) {
    out.setZero();
  } else if (beta != 1.0) {
    out *= beta;
  }
  if (!trans_a && !trans_b) {
    out.noalias() += alpha * (ConstMap(a, M, K) * ConstMap(b, K, N));
  } else if (trans_a && !trans_b) {
    out.noalias() += alpha * (ConstMap(a, K, M).transpose() * ConstMap(b, K, N));
  } else if (!trans_a && trans_b) {
    out.noalias() += alpha * (ConstMap(a, M, K) * ConstMap(b, N, K).transpose());
  } else {
    out.noalias() += alpha * (ConstMap(a, K, M).transpose() * ConstMap(b, N, K).transpose());
  }
}

}  // namespace cvnn::detail
