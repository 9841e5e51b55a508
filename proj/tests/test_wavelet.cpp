#include "support.hpp"

#include "fsdiff/wavelet.hpp"

using namespace fsdiff;
using namespace testing_support;

TEST_SUITE("wavelet") {
  TEST_CASE("constant image has only a low band") {
    const Tensor img({3, 4, 6}, 0.7);
    const auto b = haar_decompose(img);
    CHECK(b.ll.shape() == Shape{3, 2, 3});
    for (std::size_t i = 0; i < b.ll.size(); ++i) {
      CHECK(b.ll[i] == doctest::Approx(1.4));
      CHECK(b.lh[i] == 0.0);
      CHECK(b.hl[i] == 0.0);
      CHECK(b.hh[i] == 0.0);
    }
    CHECK(high_frequency(img) == Tensor({3, 2, 3}));
  }

  TEST_CASE("2x2 block by hand") {
    const double a = 1, b = 2, c = 3, d = 5;
    const Tensor img({1, 2, 2}, {a, b, c, d});
    const auto bands = haar_decompose(img);
    CHECK(bands.ll[0] == doctest::Approx((a + b + c + d) / 2));
    CHECK(bands.lh[0] == doctest::Approx((-a + b - c + d) / 2));
    CHECK(bands.hl[0] == doctest::Approx((-a - b + c + d) / 2));
    CHECK(bands.hh[0] == doctest::Approx((a - b - c + d) / 2));
    CHECK(high_frequency(img)[0] == doctest::Approx((-a - b - c + 3 * d) / 2));
    CHECK(max_abs_diff(haar_reconstruct(bands), img) < 1e-15);
  }

  TEST_CASE("round trip and energy on random 64x64 images") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const Tensor x = randn(seed, {3, 64, 64});
      const auto b = haar_decompose(x);
      CHECK(max_abs_diff(haar_reconstruct(b), x) <= 1e-10);
      const double e = b.ll.vec().squaredNorm() + b.lh.vec().squaredNorm() + b.hl.vec().squaredNorm() +
                       b.hh.vec().squaredNorm();
      CHECK(std::abs(e - x.vec().squaredNorm()) <= 1e-10 * x.vec().squaredNorm());
    }
  }

  TEST_CASE("zero bands reconstruct to zero") {
    const Tensor z({2, 3, 3});
    CHECK(haar_reconstruct(FrequencyBands<double>{z, z, z, z}) == Tensor({2, 6, 6}));
  }

  TEST_CASE("mismatched bands are rejected") {
    const Tensor z({2, 3, 3});
    CHECK_THROWS_AS(haar_reconstruct(FrequencyBands<double>{z, z, z, Tensor({2, 3, 4})}), ShapeError);
  }

  TEST_CASE("odd sizes are rejected") {
    CHECK_THROWS_AS(haar_decompose(Tensor({1, 3, 4})), ShapeError);
    CHECK_THROWS_AS(haar_decompose(Tensor({1, 4, 5})), ShapeError);
    CHECK_THROWS_AS(high_frequency(Tensor({5, 4})), ShapeError);
  }

  TEST_CASE("horizontal step edge responds only in the height-high band") {
    // Rows 0-2 are 1, rows 3-5 are 0. Only block row 1 (rows 2, 3) straddles the edge.
    Tensor img({1, 6, 6});
    for (std::size_t y = 0; y < 3; ++y)
      for (std::size_t x = 0; x < 6; ++x) img[y * 6 + x] = 1.0;
    const auto b = haar_decompose(img);
    const Tensor hf = high_frequency(img);
    for (std::size_t by = 0; by < 3; ++by)
      for (std::size_t bx = 0; bx < 3; ++bx) {
        const std::size_t k = by * 3 + bx;
        CHECK(b.lh[k] == 0.0);
        CHECK(b.hh[k] == 0.0);
        CHECK(b.hl[k] == doctest::Approx(by == 1 ? -1.0 : 0.0));
        CHECK(hf[k] == doctest::Approx(by == 1 ? -1.0 : 0.0));
      }
  }

  TEST_CASE("hf is linear") {
    const Tensor x = randn(1, {2, 8, 8}), y = randn(2, {2, 8, 8});
    const Tensor lhs = high_frequency(Tensor(1.5 * x + (-0.25) * y));
    const Tensor rhs = 1.5 * high_frequency(x) + (-0.25) * high_frequency(y);
    CHECK(max_abs_diff(lhs, rhs) < 1e-10);
  }

  TEST_CASE("hf adjoint satisfies <hf x, g> = <x, hf* g>") {
    const Tensor x = randn(3, {2, 3, 4, 6}), g = randn(4, {2, 3, 2, 3});
    const double lhs = high_frequency(x).vec().dot(g.vec());
    const double rhs = x.vec().dot(high_frequency_adjoint(g, x.shape()).vec());
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }

  TEST_CASE("float instantiation") {
    TensorGrid<float> img({1, 2, 2}, {1.f, 2.f, 3.f, 5.f});
    CHECK(high_frequency(img)[0] == doctest::Approx(4.5f));
  }
}
