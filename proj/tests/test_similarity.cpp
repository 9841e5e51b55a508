#include "support.hpp"

#include "fsdiff/similarity.hpp"
#include "fsdiff/wavelet.hpp"

#include <algorithm>
#include <cmath>

using namespace fsdiff;
using namespace testing_support;

namespace {

// Independent evaluation straight from the definitions.
double brute_force_loss(const std::vector<Tensor>& src, const std::vector<Tensor>& ada) {
  auto cos = [](const Tensor& a, const Tensor& b) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      dot += a[i] * b[i];
      na += a[i] * a[i];
      nb += b[i] * b[i];
    }
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb) + 1e-12), -1.0, 1.0);
  };
  auto dist = [&](const std::vector<Tensor>& batch, std::size_t i) {
    std::vector<double> e;
    double z = 0;
    for (std::size_t j = 0; j < batch.size(); ++j)
      if (j != i) {
        e.push_back(std::exp(cos(batch[i], batch[j])));
        z += e.back();
      }
    for (double& v : e) v /= z;
    return e;
  };
  double total = 0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const auto p = dist(ada, i), q = dist(src, i);
    for (std::size_t k = 0; k < p.size(); ++k) total += p[k] * std::log(p[k] / q[k]);
  }
  return total;
}

std::vector<Tensor> random_batch(std::uint64_t seed, std::size_t n, const Shape& shape) {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(randn(seed * 100 + i, shape));
  return out;
}

}  // namespace

TEST_SUITE("similarity") {
  TEST_CASE("cosine similarity examples") {
    const Tensor a({2}, {1, 2}), b({2}, {2, 1});
    CHECK(cosine_sim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(cosine_sim(Tensor({2}, {1, 0}), Tensor({2}, {0, 1})) == 0.0);
    CHECK(cosine_sim(a, b) == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(cosine_sim(Tensor({2}), a) == 0.0);
  }

  TEST_CASE("cosine similarity is clipped and shape checked") {
    const Tensor a = randn(1, {50});
    const double c = cosine_sim(a, a * 3.0);
    CHECK(c <= 1.0);
    CHECK(c >= -1.0);
    CHECK(cosine_sim(a, a * -2.0) >= -1.0);
    CHECK_THROWS_AS(cosine_sim(Tensor({2}), Tensor({3})), ShapeError);
  }

  TEST_CASE("N = 2 distribution is a single certain entry") {
    const auto batch = random_batch(1, 2, {5});
    const auto d = sim_distribution(batch, 0);
    REQUIRE(d.probs.size() == 1);
    CHECK(d.probs[0] == 1.0);
  }

  TEST_CASE("N = 3 with equal similarities is uniform") {
    const std::vector<Tensor> batch{Tensor({2}, {1, 0}), Tensor({2}, {0, 1}), Tensor({2}, {0, -1})};
    const auto d = sim_distribution(batch, 0);
    CHECK(d.probs[0] == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(d.probs[1] == doctest::Approx(0.5).epsilon(1e-14));
  }

  TEST_CASE("N = 3 hand softmax") {
    const std::vector<Tensor> batch{Tensor({3}, {1, 0, 0}), Tensor({3}, {0.8, 0.6, 0}),
                                    Tensor({3}, {0.2, 0, std::sqrt(0.96)})};
    const auto d = sim_distribution(batch, 0);
    const double z = std::exp(0.8) + std::exp(0.2);
    CHECK(d.probs[0] == doctest::Approx(std::exp(0.8) / z).epsilon(1e-12));
    CHECK(d.probs[1] == doctest::Approx(std::exp(0.2) / z).epsilon(1e-12));
    CHECK(d.probs[0] == doctest::Approx(0.6457).epsilon(1e-4));
  }

  TEST_CASE("distributions are normalised and positive") {
    const auto batch = random_batch(2, 6, {3, 2, 2});
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto d = sim_distribution(batch, i);
      CHECK(d.probs.size() == 5);
      double s = 0;
      for (double p : d.probs) {
        CHECK(p > 0.0);
        s += p;
      }
      CHECK(std::abs(s - 1.0) <= 1e-12);
    }
  }

  TEST_CASE("distribution errors") {
    const auto one = random_batch(3, 1, {4});
    CHECK_THROWS(sim_distribution(one, 0));
    const auto three = random_batch(3, 3, {4});
    CHECK_THROWS(sim_distribution(three, 3));
  }

  TEST_CASE("identical batches give zero loss") {
    const auto b = random_batch(4, 5, {2, 4, 4});
    CHECK(std::abs(pairwise_similarity_loss(b, b)) <= 1e-12);
    CHECK(std::abs(hf_pairwise_similarity_loss(b, b)) <= 1e-12);
  }

  TEST_CASE("N = 2 loss is zero for any content") {
    CHECK(pairwise_similarity_loss(random_batch(5, 2, {6}), random_batch(6, 2, {6})) == 0.0);
  }

  TEST_CASE("N = 3 hand case matches the brute-force oracle") {
    const std::vector<Tensor> src{Tensor({2}, {1, 0}), Tensor({2}, {1, 1}), Tensor({2}, {0, 1})};
    const std::vector<Tensor> ada{Tensor({2}, {1, 2}), Tensor({2}, {-1, 1}), Tensor({2}, {3, 1})};
    CHECK(std::abs(pairwise_similarity_loss(src, ada) - brute_force_loss(src, ada)) <= 1e-10);
  }

  TEST_CASE("random batches match the oracle and are nonnegative") {
    for (std::uint64_t seed = 10; seed < 30; ++seed) {
      const auto s = random_batch(seed, 3 + seed % 4, {2, 4, 4});
      const auto a = random_batch(seed + 1000, s.size(), {2, 4, 4});
      const double l = pairwise_similarity_loss(s, a);
      CHECK(l >= -1e-12);
      CHECK(std::abs(l - brute_force_loss(s, a)) <= 1e-10);
    }
  }

  TEST_CASE("hf loss is the loss on high-frequency maps") {
    const auto s = random_batch(7, 3, {2, 4, 4}), a = random_batch(8, 3, {2, 4, 4});
    std::vector<Tensor> hs, ha;
    for (const auto& x : s) hs.push_back(high_frequency(x));
    for (const auto& x : a) ha.push_back(high_frequency(x));
    CHECK(std::abs(hf_pairwise_similarity_loss(s, a) - brute_force_loss(hs, ha)) <= 1e-10);
  }

  TEST_CASE("constant images give zero hf loss") {
    std::vector<Tensor> s, a;
    for (int i = 0; i < 4; ++i) {
      s.push_back(Tensor({1, 4, 4}, 0.1 * i));
      a.push_back(Tensor({1, 4, 4}, -0.3 * i));
    }
    CHECK(hf_pairwise_similarity_loss(s, a) == doctest::Approx(0.0));
  }

  TEST_CASE("joint permutation leaves the loss unchanged") {
    auto s = random_batch(9, 5, {6}), a = random_batch(10, 5, {6});
    const double before = pairwise_similarity_loss(s, a);
    const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
    std::vector<Tensor> ps, pa;
    for (auto k : perm) {
      ps.push_back(s[k]);
      pa.push_back(a[k]);
    }
    CHECK(pairwise_similarity_loss(ps, pa) == doctest::Approx(before).epsilon(1e-12));
  }

  TEST_CASE("scaling one adapted item leaves the loss unchanged") {
    auto s = random_batch(11, 4, {6}), a = random_batch(12, 4, {6});
    const double before = pairwise_similarity_loss(s, a);
    a[2] *= 3.7;
    CHECK(pairwise_similarity_loss(s, a) == doctest::Approx(before).epsilon(1e-10));
  }

  TEST_CASE("loss errors") {
    CHECK_THROWS(pairwise_similarity_loss(random_batch(1, 3, {4}), random_batch(2, 4, {4})));
    CHECK_THROWS(pairwise_similarity_loss(random_batch(1, 1, {4}), random_batch(2, 1, {4})));
  }

  TEST_CASE("matrix gradients match finite differences") {
    RowMatrix src = as_rows(random_batch(13, 4, {5}));
    RowMatrix ada = as_rows(random_batch(14, 4, {5}));
    RowMatrix gs, ga;
    pairwise_similarity_kl(src, ada, &gs, &ga);
    const double h = 1e-6;
    for (int side = 0; side < 2; ++side) {
      RowMatrix& m = side ? ada : src;
      const RowMatrix& g = side ? ga : gs;
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
          const double keep = m(r, c);
          m(r, c) = keep + h;
          const double fp = pairwise_similarity_kl(src, ada, nullptr, nullptr);
          m(r, c) = keep - h;
          const double fm = pairwise_similarity_kl(src, ada, nullptr, nullptr);
          m(r, c) = keep;
          CHECK(g(r, c) == doctest::Approx((fp - fm) / (2 * h)).epsilon(1e-6).scale(1e-6));
        }
    }
  }

  TEST_CASE("zero rows get finite gradients") {
    RowMatrix src = as_rows(random_batch(15, 3, {4}));
    RowMatrix ada = RowMatrix::Zero(3, 4);
    RowMatrix gs, ga;
    const double l = pairwise_similarity_kl(src, ada, &gs, &ga);
    CHECK(std::isfinite(l));
    CHECK(gs.allFinite());
    CHECK(ga.allFinite());
  }
}
