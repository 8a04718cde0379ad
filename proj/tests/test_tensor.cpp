#include <complex>
#include <sstream>

#include "cvnn/errors.hpp"
#include "cvnn/serialize.hpp"
#include "cvnn/tensor.hpp"
#include "cvnn/verify.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace cvnn;

namespace {

ComplexTensor scalar_c(double re, double im) { return ComplexTensor(Tensor::vector({re}), Tensor::vector({im})); }

}  // namespace

TEST_CASE("complex tensor construction") {
  const ComplexTensor z(Tensor::vector({1, 2}), Tensor::vector({3, 4}));
  CHECK(z.real() == Tensor::vector({1, 2}));
  CHECK(z.imag() == Tensor::vector({3, 4}));

  const ComplexTensor r = ComplexTensor::from_real(Tensor::vector({5}));
  CHECK(r.real()[0] == 5.0);
  CHECK(r.imag()[0] == 0.0);

  CHECK_THROWS_AS(ComplexTensor(Tensor(Shape{2, 3}), Tensor(Shape{3, 2})), ShapeError);
}

TEST_CASE("complex arithmetic") {
  const ComplexTensor ii = cmul(scalar_c(0, 1), scalar_c(0, 1));
  CHECK(ii.real()[0] == -1.0);
  CHECK(ii.imag()[0] == 0.0);

  const ComplexTensor s = cadd(scalar_c(1, 2), scalar_c(3, -2));
  CHECK(s.real()[0] == 4.0);
  CHECK(s.imag()[0] == 0.0);

  // (2+3i)(4-i) = 8 - 2i + 12i - 3i^2 = 11 + 10i
  const ComplexTensor p = cmul(scalar_c(2, 3), scalar_c(4, -1));
  CHECK(p.real()[0] == 11.0);
  CHECK(p.imag()[0] == 10.0);

  CHECK(modulus(scalar_c(3, 4))[0] == 5.0);
  CHECK(modulus(scalar_c(0, 0))[0] == 0.0);
  CHECK(modulus(scalar_c(1, 1))[0] == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
}

TEST_CASE("broadcasting over the leading batch axis") {
  std::mt19937_64 rng(3);
  const ComplexTensor a(testing::random_tensor(Shape{3, 4}, rng), testing::random_tensor(Shape{3, 4}, rng));
  const ComplexTensor b(testing::random_tensor(Shape{4}, rng), testing::random_tensor(Shape{4}, rng));
  const ComplexTensor c = cmul(a, b);
  for (std::size_t n = 0; n < 3; ++n) {
    for (std::size_t k = 0; k < 4; ++k) {
      const std::complex<double> want = std::complex<double>(a.real()[n * 4 + k], a.imag()[n * 4 + k]) *
                                        std::complex<double>(b.real()[k], b.imag()[k]);
      CHECK(c.real()[n * 4 + k] == doctest::Approx(want.real()).epsilon(1e-14));
      CHECK(c.imag()[n * 4 + k] == doctest::Approx(want.imag()).epsilon(1e-14));
    }
  }
  CHECK_THROWS_AS(cadd(a, ComplexTensor(Tensor(Shape{5}), Tensor(Shape{5}))), ShapeError);
}

TEST_CASE("dft2d") {
  SUBCASE("constant map is DC only") {
    const ComplexTensor f = dft2d(Tensor(Shape{1, 1, 2, 2}, 1.5));
    CHECK(f.real()[0] == doctest::Approx(6.0));
    CHECK(f.imag()[0] == 0.0);
    for (std::size_t k = 1; k < 4; ++k) {
      CHECK(std::abs(f.real()[k]) < 1e-15);
      CHECK(std::abs(f.imag()[k]) < 1e-15);
    }
  }
  SUBCASE("zero map") {
    const ComplexTensor f = dft2d(Tensor(Shape{2, 3, 4, 5}));
    for (std::size_t k = 0; k < f.numel(); ++k) {
      CHECK(f.real()[k] == 0.0);
      CHECK(f.imag()[k] == 0.0);
    }
  }
  SUBCASE("random maps against direct summation") {
    std::mt19937_64 rng(11);
    for (const Shape& s : {Shape{1, 1, 4, 4}, Shape{2, 3, 5, 7}, Shape{1, 2, 8, 3}, Shape{3, 1, 16, 16}}) {
      const Tensor x = testing::random_tensor(s, rng);
      CHECK(testing::max_abs_diff(dft2d(x), naive_dft2d(x)) < 1e-10);
    }
  }
  SUBCASE("independent planes") {
    std::mt19937_64 rng(12);
    const Tensor x = testing::random_tensor(Shape{2, 2, 3, 3}, rng);
    const ComplexTensor whole = dft2d(x);
    const ComplexTensor second = dft2d(slice(slice(x, 0, 1, 2), 1, 1, 2));
    CHECK(testing::max_abs_diff(slice(slice(whole, 0, 1, 2), 1, 1, 2), second) == 0.0);
  }
  CHECK_THROWS_AS(dft2d(Tensor(Shape{4, 4})), ShapeError);
}

TEST_CASE("structural ops") {
  std::mt19937_64 rng(5);
  const ComplexTensor z(testing::random_tensor(Shape{2, 3}, rng), testing::random_tensor(Shape{2, 3}, rng));
  const ComplexTensor flat = reshape(z, Shape{6});
  CHECK(flat.shape() == Shape{6});
  for (std::size_t k = 0; k < 6; ++k) {
    CHECK(flat.real()[k] == z.real()[k]);
    CHECK(flat.imag()[k] == z.imag()[k]);
  }
  CHECK_THROWS_AS(reshape(z, Shape{4}), ShapeError);

  const ComplexTensor a(testing::random_tensor(Shape{3, 4}, rng), testing::random_tensor(Shape{3, 4}, rng));
  const ComplexTensor b(testing::random_tensor(Shape{3, 4}, rng), testing::random_tensor(Shape{3, 4}, rng));
  const std::array<ComplexTensor, 2> parts{a, b};
  const ComplexTensor ab = concat(parts, 1);
  CHECK(ab.shape() == Shape{3, 8});

  const std::array<ComplexTensor, 2> halves{slice(ab, 1, 0, 4), slice(ab, 1, 4, 8)};
  CHECK(concat(halves, 1) == ab);
  CHECK(halves[0] == a);
  CHECK(halves[1] == b);

  const std::array<std::size_t, 2> perm{1, 0};
  const ComplexTensor t = transpose(a, perm);
  CHECK(t.shape() == Shape{4, 3});
  CHECK(t.real()[1 * 3 + 2] == a.real()[2 * 4 + 1]);
  CHECK(transpose(t, perm) == a);
}

TEST_CASE("tensor serialization") {
  std::mt19937_64 rng(8);
  const ComplexTensor z(testing::random_tensor(Shape{2, 3, 4}, rng), testing::random_tensor(Shape{2, 3, 4}, rng));

  SUBCASE("f64 round trip is bit exact") {
    std::stringstream buf;
    write_tensor(buf, z);
    const StoredTensor back = read_tensor(buf);
    CHECK(back.is_complex);
    CHECK(back.value == z);
  }
  SUBCASE("real tensors") {
    std::stringstream buf;
    write_tensor(buf, z.real());
    const StoredTensor back = read_tensor(buf);
    CHECK_FALSE(back.is_complex);
    CHECK(back.value.real() == z.real());
  }
  SUBCASE("f32 rounds to single precision") {
    std::stringstream buf;
    write_tensor(buf, z, Precision::f32);
    const StoredTensor back = read_tensor(buf);
    for (std::size_t k = 0; k < z.numel(); ++k) {
      CHECK(back.value.real()[k] == static_cast<double>(static_cast<float>(z.real()[k])));
    }
  }
  SUBCASE("bad magic") {
    std::stringstream buf("XXXX garbage");
    CHECK_THROWS_AS(read_tensor(buf), Error);
  }
  SUBCASE("truncated payload") {
    std::stringstream buf;
    write_tensor(buf, z);
    std::string bytes = buf.str();
    bytes.resize(bytes.size() - 8);
    std::stringstream cut(bytes);
    CHECK_THROWS_AS(read_tensor(cut), Error);
  }
}

TEST_CASE("container keeps order and bytes") {
  Container c;
  c.put("b", Tensor::vector({1, 2, 3}));
  c.put("a", std::string("hello"));
  c.put("z", ComplexTensor(Tensor::vector({1}), Tensor::vector({-1})));
  std::stringstream first, second;
  c.write(first);
  const Container back = Container::read(first);
  CHECK(back.entries().size() == 3);
  CHECK(back.entries()[0].first == "b");
  CHECK(back.text("a") == "hello");
  CHECK(back.complex("z").imag()[0] == -1.0);
  back.write(second);
  CHECK(second.str() == first.str());
  CHECK_THROWS(back.tensor("missing"));
}
