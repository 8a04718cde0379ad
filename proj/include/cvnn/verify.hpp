#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "cvnn/layers.hpp"

namespace cvnn {

/// Parameters to differentiate plus the forward graph over them. `owner`
/// keeps whatever holds the parameters alive.
struct GradProblem {
  std::vector<Parameter*> params;
  std::function<std::vector<Var>(Tape&)> forward;
  std::shared_ptr<void> owner;
};

/// Wraps plain tensors as parameters; `fn` receives one leaf per tensor.
GradProblem make_problem(std::vector<Tensor> inputs,
                         std::function<std::vector<Var>(Tape&, const std::vector<Var>&)> fn);

struct GradCase {
  std::string name;
  std::function<GradProblem(Rng&)> make;  // draws a random shape and values
};

struct GradCheckOptions {
  double eps = 1e-5;
  double rel_tol = 1e-4;
  double kink_margin = 1e-3;   // resample when any kink is closer than this
  std::size_t max_coords = 96; // per parameter; all coordinates when smaller
  int max_resample = 200;
};

struct GradCheckResult {
  bool passed = true;
  double max_error = 0.0;  // |analytic - numeric| / max(1, |analytic|)
  std::size_t coords = 0;
  std::string worst;       // "<param>[<index>]: analytic a, numeric n"
};

/// Central differences of L = sum_j <out_j, R_j> with fixed random R_j.
GradCheckResult check_gradients(const GradCase& gcase, Rng& rng, const GradCheckOptions& options = {});

std::vector<GradCase> builtin_gradient_cases();

struct SuiteReport {
  std::string name;
  bool passed = true;
  double max_error = 0.0;
  std::size_t cases = 0;
  std::string detail;  // first failure, or a summary
};

SuiteReport run_gradient_suite(const std::vector<GradCase>& cases, std::size_t shapes_per_case, std::uint64_t seed,
                               const GradCheckOptions& options = {});
/// Complex conv against the real block-kernel conv and a naive loop (1e-12).
SuiteReport run_conv_suite(std::size_t cases, std::uint64_t seed);
/// Per-component: mean <= 1e-7, var within 1e-6 of 1/(1+eps) on unit-variance
/// channels. Covariance: whitened covariance within 1e-6 of I on channels
/// whose covariance eigenvalues are at least 10 (the eps*I regularizer
/// leaves eps/lambda off the identity).
SuiteReport run_bn_suite(std::size_t cases, std::uint64_t seed);
/// Distance axioms, SoftPN symmetry point and monotonicity.
SuiteReport run_loss_suite(std::size_t triples, std::uint64_t seed);
/// fpr95 against an O(N^2) threshold sweep, exact equality.
SuiteReport run_fpr95_suite(std::size_t trials, std::uint64_t seed);
/// dft2d against direct summation (1e-10) for every size up to 8x8, and
/// Parseval (1e-8 relative).
SuiteReport run_dft_suite(std::uint64_t seed);

/// All suites at their standard sizes.
std::vector<SuiteReport> run_verification(std::uint64_t seed);

/// Independent references shared with the tests.
double brute_force_fpr95(const std::vector<double>& scores, const std::vector<int>& labels, bool larger_is_match);
ComplexTensor naive_dft2d(const Tensor& x);

}  // namespace cvnn
