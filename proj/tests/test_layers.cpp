#include <complex>

#include "cvnn/errors.hpp"
#include "cvnn/layers.hpp"
#include "cvnn/verify.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace cvnn;
using testing::max_abs_diff;
using testing::random_tensor;

namespace {

using C = std::complex<double>;

CVar cconst(Tape& t, const Tensor& re, const Tensor& im) { return t.constant(ComplexTensor(re, im)); }

// Scalar multiply-accumulate reference for "same"-padded stride-1 convs.
ComplexTensor brute_conv(const ComplexTensor& x, const ComplexTensor& w, std::size_t pad) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  const std::size_t ho = xs[2] + 2 * pad - ws[2] + 1, wo = xs[3] + 2 * pad - ws[3] + 1;
  Tensor re(Shape{xs[0], ws[0], ho, wo}), im(re.shape());
  for (std::size_t n = 0; n < xs[0]; ++n)
    for (std::size_t o = 0; o < ws[0]; ++o)
      for (std::size_t i = 0; i < ho; ++i)
        for (std::size_t j = 0; j < wo; ++j) {
          C acc = 0.0;
          for (std::size_t c = 0; c < xs[1]; ++c)
            for (std::size_t u = 0; u < ws[2]; ++u)
              for (std::size_t v = 0; v < ws[3]; ++v) {
                const long y = static_cast<long>(i + u) - static_cast<long>(pad);
                const long z = static_cast<long>(j + v) - static_cast<long>(pad);
                if (y < 0 || z < 0 || y >= static_cast<long>(xs[2]) || z >= static_cast<long>(xs[3])) continue;
                const std::size_t xi = ((n * xs[1] + c) * xs[2] + y) * xs[3] + z;
                const std::size_t wi = ((o * ws[1] + c) * ws[2] + u) * ws[3] + v;
                acc += C(w.real()[wi], w.imag()[wi]) * C(x.real()[xi], x.imag()[xi]);
              }
          const std::size_t oi = ((n * ws[0] + o) * ho + i) * wo + j;
          re[oi] = acc.real();
          im[oi] = acc.imag();
        }
  return ComplexTensor(re, im);
}

struct Moments {
  double mean_r, mean_i, var_r, var_i, cov;
};

Moments moments(const ComplexTensor& z, std::size_t c) {
  const Shape& s = z.shape();
  const std::size_t inner = s.rank() == 4 ? s[2] * s[3] : 1;
  std::vector<double> r, i;
  for (std::size_t n = 0; n < s[0]; ++n)
    for (std::size_t p = 0; p < inner; ++p) {
      r.push_back(z.real()[(n * s[1] + c) * inner + p]);
      i.push_back(z.imag()[(n * s[1] + c) * inner + p]);
    }
  Moments m{0, 0, 0, 0, 0};
  const double k = static_cast<double>(r.size());
  for (std::size_t q = 0; q < r.size(); ++q) {
    m.mean_r += r[q] / k;
    m.mean_i += i[q] / k;
  }
  for (std::size_t q = 0; q < r.size(); ++q) {
    m.var_r += (r[q] - m.mean_r) * (r[q] - m.mean_r) / k;
    m.var_i += (i[q] - m.mean_i) * (i[q] - m.mean_i) / k;
    m.cov += (r[q] - m.mean_r) * (i[q] - m.mean_i) / k;
  }
  return m;
}

}  // namespace

TEST_CASE("complex convolution") {
  std::mt19937_64 rng(1);
  const Tensor x = random_tensor(Shape{2, 1, 5, 5}, rng), y = random_tensor(Shape{2, 1, 5, 5}, rng);
  const ConvGeometry g{0, 1};

  SUBCASE("multiplication by one") {
    Tape t;
    const CVar out = complex_conv2d(cconst(t, x, y), t.constant(Tensor(Shape{1, 1, 1, 1}, 1.0)),
                                    t.constant(Tensor(Shape{1, 1, 1, 1}, 0.0)), std::nullopt, g);
    CHECK(out.re.value() == x);
    CHECK(out.im.value() == y);
  }
  SUBCASE("multiplication by i") {
    Tape t;
    const CVar out = complex_conv2d(cconst(t, x, y), t.constant(Tensor(Shape{1, 1, 1, 1}, 0.0)),
                                    t.constant(Tensor(Shape{1, 1, 1, 1}, 1.0)), std::nullopt, g);
    for (std::size_t k = 0; k < x.numel(); ++k) {
      CHECK(out.re.value()[k] == -y[k]);
      CHECK(out.im.value()[k] == x[k]);
    }
  }
  SUBCASE("3x3 kernel against scalar loops") {
    const Tensor xr = random_tensor(Shape{2, 3, 5, 5}, rng), xi = random_tensor(Shape{2, 3, 5, 5}, rng);
    const Tensor a = random_tensor(Shape{4, 3, 3, 3}, rng), b = random_tensor(Shape{4, 3, 3, 3}, rng);
    Tape t;
    const CVar out = complex_conv2d(cconst(t, xr, xi), t.constant(a), t.constant(b), std::nullopt, ConvGeometry{1, 1});
    CHECK(max_abs_diff(out.value(), brute_conv(ComplexTensor(xr, xi), ComplexTensor(a, b), 1)) < 1e-10);
  }
  SUBCASE("real conv against scalar loops") {
    const Tensor xr = random_tensor(Shape{1, 2, 6, 4}, rng), w = random_tensor(Shape{3, 2, 3, 3}, rng);
    Tape t;
    const Var out = conv2d(t.constant(xr), t.constant(w), std::nullopt, ConvGeometry{1, 1});
    const ComplexTensor ref = brute_conv(ComplexTensor::from_real(xr), ComplexTensor::from_real(w), 1);
    CHECK(max_abs_diff(out.value(), ref.real()) < 1e-10);
  }
  SUBCASE("block-kernel and naive suites") {
    const SuiteReport r = run_conv_suite(30, 5);
    INFO(r.detail);
    CHECK(r.passed);
  }
  SUBCASE("shape errors") {
    Tape t;
    CHECK_THROWS_AS(complex_conv2d(cconst(t, x, y), t.constant(Tensor(Shape{1, 2, 3, 3})),
                                   t.constant(Tensor(Shape{1, 2, 3, 3})), std::nullopt, g),
                    ShapeError);
  }
}

TEST_CASE("complex batch norm, per component") {
  std::mt19937_64 rng(2);
  SUBCASE("standardized input is a fixed point up to eps") {
    Tensor re = random_tensor(Shape{6, 1, 3, 3}, rng);
    const Moments m = moments(ComplexTensor(re, re), 0);
    for (auto& v : re.data()) v = (v - m.mean_r) / std::sqrt(m.var_r);
    ComplexBN bn("bn", 1, BnMode::per_component);
    Tape t;
    const CVar out = bn.forward(t, cconst(t, re, random_tensor(re.shape(), rng)), Mode::train);
    const double factor = std::sqrt(1.0 / (1.0 + bn.eps));
    for (std::size_t k = 0; k < re.numel(); ++k) CHECK(out.re.value()[k] == doctest::Approx(re[k] * factor).epsilon(1e-12));
  }
  SUBCASE("constant batch collapses to beta") {
    ComplexBN bn("bn", 2, BnMode::per_component);
    bn.beta_r.value = Tensor::vector({0.5, -1.0});
    bn.beta_i.value = Tensor::vector({2.0, 3.0});
    Tape t;
    const CVar out = bn.forward(t, cconst(t, Tensor(Shape{4, 2, 2, 2}, 7.0), Tensor(Shape{4, 2, 2, 2}, -3.0)), Mode::train);
    for (std::size_t k = 0; k < out.re.value().numel(); ++k) {
      const std::size_t c = (k / 4) % 2;
      CHECK(out.re.value()[k] == doctest::Approx(bn.beta_r.value[c]));
      CHECK(out.im.value()[k] == doctest::Approx(bn.beta_i.value[c]));
    }
  }
  SUBCASE("running statistics follow momentum 0.9") {
    ComplexBN bn("bn", 1, BnMode::per_component);
    const Tensor re = random_tensor(Shape{5, 1, 2, 2}, rng), im = random_tensor(Shape{5, 1, 2, 2}, rng);
    Tape t;
    bn.forward(t, cconst(t, re, im), Mode::train);
    const Moments m = moments(ComplexTensor(re, im), 0);
    CHECK(bn.running_mean_r.value[0] == doctest::Approx(0.1 * m.mean_r));
    CHECK(bn.running_var_i.value[0] == doctest::Approx(0.9 + 0.1 * m.var_i));
  }
  SUBCASE("inference uses running statistics") {
    ComplexBN bn("bn", 1, BnMode::per_component);
    bn.running_mean_r.value = Tensor::vector({1.0});
    bn.running_var_r.value = Tensor::vector({4.0});
    Tape t;
    const CVar out = bn.forward(t, cconst(t, Tensor(Shape{1, 1, 1, 1}, 3.0), Tensor(Shape{1, 1, 1, 1}, 0.0)), Mode::infer);
    CHECK(out.re.value()[0] == doctest::Approx(2.0 / std::sqrt(4.0 + bn.eps)));
  }
  SUBCASE("batch of one sample and one pixel is refused in training") {
    ComplexBN bn("bn", 1, BnMode::per_component);
    Tape t;
    CHECK_THROWS_AS(bn.forward(t, cconst(t, Tensor(Shape{1, 1}), Tensor(Shape{1, 1})), Mode::train), Error);
  }
}

TEST_CASE("complex batch norm, covariance whitening") {
  std::mt19937_64 rng(3);
  Tensor re = random_tensor(Shape{8, 3, 4, 4}, rng, 2.0), im = random_tensor(Shape{8, 3, 4, 4}, rng);
  for (std::size_t k = 0; k < re.numel(); ++k) im[k] += 0.8 * re[k] + 1.0;
  ComplexBN bn("bn", 3, BnMode::covariance);
  Tape t;
  const ComplexTensor out = bn.forward(t, cconst(t, re, im), Mode::train).value();
  for (std::size_t c = 0; c < 3; ++c) {
    const Moments in = moments(ComplexTensor(re, im), c);
    const Moments m = moments(out, c);
    CHECK(std::abs(m.mean_r) < 1e-12);
    CHECK(std::abs(m.mean_i) < 1e-12);
    // With eps*I regularization the output covariance is V (V + eps I)^-1.
    const double e = bn.eps, a = in.var_r + e, d = in.var_i + e, b = in.cov, det = a * d - b * b;
    CHECK(m.var_r == doctest::Approx((in.var_r * d - b * b) / det).epsilon(1e-10));
    CHECK(m.var_i == doctest::Approx((in.var_i * a - b * b) / det).epsilon(1e-10));
    CHECK(std::abs(m.cov - (in.cov * e) / det) < 1e-10);
    CHECK(std::abs(m.var_r - 1.0) < 1e-4);
    CHECK(bn.running_cov_ri.value[c] == doctest::Approx(0.1 * in.cov));
  }
  const SuiteReport r = run_bn_suite(10, 4);
  INFO(r.detail);
  CHECK(r.passed);
}

TEST_CASE("crelu, pooling and complex fc") {
  Tape t;
  const CVar z = cconst(t, Tensor::vector({-1.0, 3.0, 0.5}), Tensor::vector({2.0, -4.0, 0.25}));
  const CVar r = crelu(z);
  CHECK(r.re.value() == Tensor::vector({0.0, 3.0, 0.5}));
  CHECK(r.im.value() == Tensor::vector({2.0, 0.0, 0.25}));

  const CVar window = cconst(t, Tensor(Shape{1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4}),
                             Tensor(Shape{1, 1, 2, 2}, std::vector<double>{4, 3, 2, 1}));
  const CVar pooled = complex_pool2d(window, 2, 2);
  CHECK(pooled.re.value()[0] == 4.0);
  CHECK(pooled.im.value()[0] == 4.0);
  const CVar flat = complex_pool2d(cconst(t, Tensor(Shape{1, 1, 4, 4}, 2.5), Tensor(Shape{1, 1, 4, 4}, -1.0)), 2, 2);
  for (double v : flat.re.value().data()) CHECK(v == 2.5);

  std::mt19937_64 rng(4);
  const Tensor xr = random_tensor(Shape{2, 4}, rng), xi = random_tensor(Shape{2, 4}, rng);
  Tensor eye(Shape{4, 4});
  for (std::size_t k = 0; k < 4; ++k) eye[k * 5] = 1.0;
  const CVar x = cconst(t, xr, xi);
  const CVar ident = complex_linear(x, t.constant(eye), t.constant(Tensor(Shape{4, 4})), std::nullopt);
  CHECK(ident.re.value() == xr);
  CHECK(ident.im.value() == xi);
  const CVar rot = complex_linear(x, t.constant(Tensor(Shape{4, 4})), t.constant(eye), std::nullopt);
  for (std::size_t k = 0; k < 8; ++k) {
    CHECK(rot.re.value()[k] == -xi[k]);
    CHECK(rot.im.value()[k] == xr[k]);
  }
  const Tensor a = random_tensor(Shape{3, 4}, rng), b = random_tensor(Shape{3, 4}, rng);
  const Tensor br = random_tensor(Shape{3}, rng), bi = random_tensor(Shape{3}, rng);
  const CVar y = complex_linear(x, t.constant(a), t.constant(b), cconst(t, br, bi));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t o = 0; o < 3; ++o) {
      C acc(br[o], bi[o]);
      for (std::size_t i = 0; i < 4; ++i) acc += C(a[o * 4 + i], b[o * 4 + i]) * C(xr[n * 4 + i], xi[n * 4 + i]);
      CHECK(std::abs(y.re.value()[n * 3 + o] - acc.real()) < 1e-12);
      CHECK(std::abs(y.im.value()[n * 3 + o] - acc.imag()) < 1e-12);
    }
}

TEST_CASE("per-part l2 normalization") {
  Tape t;
  const CVar a = cl2_normalize(cconst(t, Tensor(Shape{1, 2}, std::vector<double>{3, 4}), Tensor(Shape{1, 2})));
  CHECK(a.re.value()[0] == doctest::Approx(0.6));
  CHECK(a.re.value()[1] == doctest::Approx(0.8));
  CHECK(a.im.value()[0] == 0.0);
  const CVar b = cl2_normalize(cconst(t, Tensor(Shape{1, 2}, std::vector<double>{3, 4}),
                                      Tensor(Shape{1, 2}, std::vector<double>{5, 12})));
  CHECK(b.im.value()[0] == doctest::Approx(5.0 / 13.0));
  CHECK(b.im.value()[1] == doctest::Approx(12.0 / 13.0));

  std::mt19937_64 rng(6);
  const CVar c = cl2_normalize(cconst(t, random_tensor(Shape{5, 7}, rng), random_tensor(Shape{5, 7}, rng)));
  for (std::size_t n = 0; n < 5; ++n) {
    double nr = 0.0, ni = 0.0;
    for (std::size_t k = 0; k < 7; ++k) {
      nr += c.re.value()[n * 7 + k] * c.re.value()[n * 7 + k];
      ni += c.im.value()[n * 7 + k] * c.im.value()[n * 7 + k];
    }
    CHECK(nr == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(ni == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("residual block") {
  std::mt19937_64 rng(7);
  SUBCASE("zero convolutions leave the identity") {
    ComplexResidualBlock block("b", 4, 4, BnMode::per_component, rng, InitScheme::rayleigh);
    CHECK_FALSE(block.projection.has_value());
    for (Parameter* p : {&block.conv1.a, &block.conv1.b, &block.conv2.a, &block.conv2.b}) p->value.fill(0.0);
    const Tensor xr = random_tensor(Shape{2, 4, 4, 4}, rng), xi = random_tensor(Shape{2, 4, 4, 4}, rng);
    Tape t;
    const CVar out = block.forward(t, cconst(t, xr, xi), Mode::train);
    CHECK(out.re.value() == xr);
    CHECK(out.im.value() == xi);
  }
  SUBCASE("channel doubling uses a projection") {
    ComplexResidualBlock block("b", 3, 6, BnMode::covariance, rng, InitScheme::rayleigh);
    CHECK(block.projection.has_value());
    Tape t;
    const CVar out = block.forward(
        t, cconst(t, random_tensor(Shape{2, 3, 4, 4}, rng), random_tensor(Shape{2, 3, 4, 4}, rng)), Mode::train);
    CHECK(out.shape() == Shape{2, 6, 4, 4});
  }
}

TEST_CASE("real activations") {
  Tape t;
  CHECK(sigmoid(t.constant(Tensor::vector({0.0}))).value()[0] == 0.5);
  const Var r = relu(t.constant(Tensor::vector({-2.0, -0.1, 1.5})));
  CHECK(r.value() == Tensor::vector({0.0, 0.0, 1.5}));
}

TEST_CASE("complex weight initialization") {
  SUBCASE("rayleigh modulus mean") {
    Rng rng(9);
    const Shape s{1000, 4, 5, 5};  // fan_in 100
    const auto [a, b] = init_complex_weights(s, rng, InitScheme::rayleigh);
    double mean = 0.0;
    for (std::size_t k = 0; k < a.numel(); ++k) mean += std::hypot(a[k], b[k]);
    mean /= static_cast<double>(a.numel());
    const double sigma = 1.0 / std::sqrt(100.0);
    CHECK(mean == doctest::Approx(sigma * std::sqrt(std::acos(-1.0) / 2.0)).epsilon(0.02));
  }
  SUBCASE("fan-in scaling") {
    Rng r1(10), r2(10);
    const auto [a1, b1] = init_complex_weights(Shape{20000, 8}, r1, InitScheme::rayleigh);
    const auto [a2, b2] = init_complex_weights(Shape{20000, 16}, r2, InitScheme::rayleigh);
    double m1 = 0.0, m2 = 0.0;
    for (std::size_t k = 0; k < a1.numel(); ++k) m1 += a1[k] * a1[k] + b1[k] * b1[k];
    for (std::size_t k = 0; k < a2.numel(); ++k) m2 += a2[k] * a2[k] + b2[k] * b2[k];
    m1 /= static_cast<double>(a1.numel());
    m2 /= static_cast<double>(a2.numel());
    CHECK(std::sqrt(m1 / m2) == doctest::Approx(std::sqrt(2.0)).epsilon(0.02));
  }
  SUBCASE("seeded draws repeat") {
    Rng r1(11), r2(11);
    CHECK(init_complex_weights(Shape{3, 2, 3, 3}, r1, InitScheme::glorot) ==
          init_complex_weights(Shape{3, 2, 3, 3}, r2, InitScheme::glorot));
  }
}
