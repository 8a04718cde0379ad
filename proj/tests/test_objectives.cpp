#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "cvnn/errors.hpp"
#include "cvnn/objectives.hpp"
#include "cvnn/verify.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace cvnn;

namespace {

ComplexTensor vec(std::vector<double> re, std::vector<double> im) {
  return ComplexTensor(Tensor::vector(std::move(re)), Tensor::vector(std::move(im)));
}

}  // namespace

TEST_CASE("complex distance") {
  const auto m = DistanceMode::modulus_sum;
  const auto l = DistanceMode::literal_clamped;
  CHECK(complex_distance(vec({1}, {0}), vec({0}, {0}), m)[0] == 1.0);
  CHECK(complex_distance(vec({3}, {4}), vec({0}, {0}), m)[0] == 5.0);
  CHECK(complex_distance(vec({3}, {4}), vec({0}, {0}), l)[0] == 0.0);
  CHECK(complex_distance(vec({5}, {3}), vec({0}, {0}), l)[0] == 4.0);

  std::mt19937_64 rng(1);
  const Tensor a = testing::random_tensor(Shape{4, 9}, rng), b = testing::random_tensor(Shape{4, 9}, rng);
  const Tensor zero(Shape{4, 9});
  for (DistanceMode mode : {m, l}) {
    const auto d = complex_distance(ComplexTensor(a, zero), ComplexTensor(b, zero), mode);
    for (std::size_t r = 0; r < 4; ++r) {
      double l1 = 0.0;
      for (std::size_t k = 0; k < 9; ++k) l1 += std::abs(a[r * 9 + k] - b[r * 9 + k]);
      CHECK(d[r] == doctest::Approx(l1).epsilon(1e-14));
    }
  }
  CHECK_THROWS_AS(complex_distance(vec({1, 2}, {0, 0}), vec({1}, {0}), m), ShapeError);
}

TEST_CASE("softpn loss values") {
  for (LossForm f : {LossForm::corrected, LossForm::literal}) {
    CHECK(softpn_loss(0.7, 0.7, f) == doctest::Approx(0.5).epsilon(1e-15));
  }
  const double s = 1.0 / (1.0 + std::exp(1.0));
  CHECK(softpn_loss(1.0, 2.0, LossForm::corrected) == doctest::Approx(2.0 * s * s).epsilon(1e-14));
  CHECK(softpn_loss(1.0, 2.0, LossForm::corrected) == doctest::Approx(0.14463).epsilon(1e-4));
  CHECK(softpn_loss(1.0, 2.0, LossForm::literal) == doctest::Approx(0.60677).epsilon(1e-4));
  CHECK(softpn_loss(1.0, 60.0, LossForm::corrected) < 1e-40);
  CHECK(softpn_loss(1.0, 60.0, LossForm::literal) == doctest::Approx(1.0));
  CHECK(std::isfinite(softpn_loss(1e6, -1e6, LossForm::corrected)));
}

TEST_CASE("softpn picks the smaller negative distance") {
  Tape t;
  Parameter dp("dp", Tensor::vector({1.0, 1.0})), d1("d1", Tensor::vector({2.0, 5.0})), d2("d2", Tensor::vector({3.0, 4.0}));
  const Var loss = softpn_loss(t.param(dp), t.param(d1), t.param(d2), LossForm::corrected);
  const double want = 0.5 * (softpn_loss(1.0, 2.0, LossForm::corrected) + softpn_loss(1.0, 4.0, LossForm::corrected));
  CHECK(loss.value()[0] == doctest::Approx(want).epsilon(1e-15));
  t.backward(loss);
  CHECK(d1.grad[0] != 0.0);
  CHECK(d1.grad[1] == 0.0);
  CHECK(d2.grad[0] == 0.0);
  CHECK(d2.grad[1] != 0.0);
}

TEST_CASE("mse pair loss") {
  Tape t;
  CHECK(mse_pair_loss(t.constant(Tensor::vector({1, 0, 1})), Tensor::vector({1, 0, 1})).value()[0] == 0.0);
  CHECK(mse_pair_loss(t.constant(Tensor::vector({0.5, 0.5})), Tensor::vector({1, 0})).value()[0] == 0.25);
}

TEST_CASE("fpr95") {
  const std::vector<double> sep{0.9, 0.8, 0.7, 0.2, 0.1};
  const std::vector<int> sep_l{1, 1, 1, 0, 0};
  CHECK(fpr95(sep, sep_l, Polarity::larger_is_match) == 0.0);

  // Recall 1.0 requires accepting 0.2, which also accepts the negatives 0.5, 0.4, 0.3.
  const std::vector<double> s{0.9, 0.8, 0.7, 0.6, 0.2, 0.5, 0.4, 0.3, 0.1, 0.05};
  const std::vector<int> l{1, 1, 1, 1, 1, 0, 0, 0, 0, 0};
  CHECK(fpr95(s, l, Polarity::larger_is_match) == doctest::Approx(0.6));
  CHECK(brute_force_fpr95(s, l, true) == doctest::Approx(0.6));

  SUBCASE("smaller-is-match mirrors negated scores") {
    std::vector<double> neg(s.size());
    std::transform(s.begin(), s.end(), neg.begin(), [](double v) { return -v; });
    CHECK(fpr95(neg, l, Polarity::smaller_is_match) == fpr95(s, l, Polarity::larger_is_match));
  }
  SUBCASE("ties count as one threshold") {
    const std::vector<double> tied{1, 1, 1, 1};
    const std::vector<int> tl{1, 0, 1, 0};
    CHECK(fpr95(tied, tl, Polarity::larger_is_match) == 1.0);
  }
  SUBCASE("random labels sit near 0.95") {
    std::mt19937_64 rng(3);
    std::vector<double> scores(20000);
    std::vector<int> labels(20000);
    std::normal_distribution<double> n;
    for (std::size_t k = 0; k < scores.size(); ++k) {
      scores[k] = n(rng);
      labels[k] = static_cast<int>(rng() & 1u);
    }
    CHECK(std::abs(fpr95(scores, labels, Polarity::larger_is_match) - 0.95) < 0.02);
  }
  SUBCASE("errors") {
    const std::vector<double> two{0.1, 0.2};
    CHECK_THROWS_AS(fpr95(two, std::vector<int>{1, 1}, Polarity::larger_is_match), ContractError);
    CHECK_THROWS_AS(fpr95(two, std::vector<int>{0, 2}, Polarity::larger_is_match), ArgumentError);
    CHECK_THROWS_AS(fpr95(std::vector<double>{NAN, 0.2}, std::vector<int>{0, 1}, Polarity::larger_is_match),
                    NumericError);
    CHECK_THROWS_AS(fpr95(two, std::vector<int>{1}, Polarity::larger_is_match), ShapeError);
  }
  SUBCASE("brute-force equivalence") {
    const SuiteReport r = run_fpr95_suite(300, 9);
    INFO(r.detail);
    CHECK(r.passed);
  }
}

TEST_CASE("roc curve") {
  const std::vector<double> s{0.9, 0.8, 0.3, 0.2};
  const std::vector<int> l{1, 1, 0, 0};
  const auto curve = roc_curve(s, l, Polarity::larger_is_match);
  CHECK(curve.front().fpr == 0.0);
  CHECK(curve.front().tpr == 0.0);
  CHECK(curve.back().fpr == 1.0);
  CHECK(curve.back().tpr == 1.0);
  CHECK(std::any_of(curve.begin(), curve.end(), [](const RocPoint& p) { return p.fpr == 0.0 && p.tpr == 1.0; }));
  CHECK(roc_auc(curve) == 1.0);

  SUBCASE("reversed polarity mirrors across the diagonal") {
    const auto flipped = roc_curve(s, l, Polarity::smaller_is_match);
    CHECK(roc_auc(flipped) == 0.0);
    std::mt19937_64 rng(4);
    std::vector<double> rs(500);
    std::vector<int> rl(500);
    for (std::size_t k = 0; k < rs.size(); ++k) {
      rs[k] = std::uniform_real_distribution<double>()(rng);
      rl[k] = k % 2;
    }
    const double up = roc_auc(roc_curve(rs, rl, Polarity::larger_is_match));
    const double down = roc_auc(roc_curve(rs, rl, Polarity::smaller_is_match));
    CHECK(up + down == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(up - 0.5) < 0.1);
  }
  SUBCASE("csv export") {
    testing::TempDir dir("roc");
    write_roc_csv(dir.path / "roc.csv", curve);
    std::ifstream in(dir.path / "roc.csv");
    std::string header, first;
    std::getline(in, header);
    std::getline(in, first);
    CHECK(header == "threshold,fpr,tpr");
    CHECK(first == "inf,0,0");
  }
}

TEST_CASE("loss and distance property suite") {
  const SuiteReport r = run_loss_suite(2000, 12);
  INFO(r.detail);
  CHECK(r.passed);
}
