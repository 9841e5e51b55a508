#include "support.hpp"

#include "fsdiff/autodiff.hpp"
#include "fsdiff/similarity.hpp"
#include "fsdiff/wavelet.hpp"

#include <functional>

using namespace fsdiff;
using namespace testing_support;
using ad::Tape;
using ad::Var;

namespace {

using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;

double eval(const std::vector<Tensor>& inputs, const Builder& build, const Tensor& target) {
  Tape tape(false);
  std::vector<Var> vars;
  for (const auto& x : inputs) vars.push_back(tape.constant(x));
  Var out = build(tape, vars);
  return ad::mse(out, tape.constant(target)).value()[0];
}

// Compares tape gradients of mse(build(inputs), target) with central differences.
void check_op(std::vector<Tensor> inputs, const Builder& build, std::uint64_t seed = 99) {
  Tensor target;
  {
    Tape probe(false);
    std::vector<Var> vars;
    for (const auto& x : inputs) vars.push_back(probe.constant(x));
    target = randn(seed, build(probe, vars).shape());
  }
  Tape tape;
  std::vector<Var> vars;
  for (const auto& x : inputs) vars.push_back(tape.parameter(x));
  tape.backward(ad::mse(build(tape, vars), tape.constant(target)));
  const double h = 1e-6;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor g = tape.grad(vars[k]);
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double keep = inputs[k][i];
      inputs[k][i] = keep + h;
      const double fp = eval(inputs, build, target);
      inputs[k][i] = keep - h;
      const double fm = eval(inputs, build, target);
      inputs[k][i] = keep;
      CHECK(g[i] == doctest::Approx((fp - fm) / (2 * h)).epsilon(1e-6).scale(1e-6));
    }
  }
}

}  // namespace

TEST_SUITE("autodiff") {
  TEST_CASE("elementwise ops") {
    check_op({randn(1, {2, 3}), randn(2, {2, 3})}, [](Tape&, const auto& v) { return ad::add(v[0], v[1]); });
    check_op({randn(1, {2, 3}), randn(2, {2, 3})}, [](Tape&, const auto& v) { return ad::sub(v[0], v[1]); });
    check_op({randn(3, {4})}, [](Tape&, const auto& v) { return ad::scale(v[0], -1.7); });
    check_op({randn(4, {7}) * 3.0}, [](Tape&, const auto& v) { return ad::silu(v[0]); });
    const Tensor mask = randn(6, {5});
    check_op({randn(5, {5})}, [&](Tape&, const auto& v) { return ad::mask_mul(v[0], mask); });
  }

  TEST_CASE("item_lincomb") {
    const std::vector<double> a{0.5, -1.0, 2.0}, b{1.5, 0.25, -0.5};
    check_op({randn(1, {3, 2, 2}), randn(2, {3, 2, 2})},
             [&](Tape&, const auto& v) { return ad::item_lincomb(v[0], v[1], a, b); });
  }

  TEST_CASE("linear layers") {
    check_op({randn(1, {3, 4}), randn(2, {5, 4}), randn(3, {5})},
             [](Tape&, const auto& v) { return ad::linear(v[0], v[1], v[2]); });
    check_op({randn(1, {3, 4}), randn(2, {5, 4})}, [](Tape&, const auto& v) { return ad::linear_nobias(v[0], v[1]); });
  }

  TEST_CASE("conv2d") {
    check_op({randn(1, {2, 3, 4, 5}), randn(2, {2, 3, 3, 3}), randn(3, {2})},
             [](Tape&, const auto& v) { return ad::conv2d(v[0], v[1], v[2]); });
    check_op({randn(4, {1, 2, 3, 3}), randn(5, {3, 2, 1, 1}), randn(6, {3})},
             [](Tape&, const auto& v) { return ad::conv2d(v[0], v[1], v[2]); });
  }

  TEST_CASE("conv2d against a direct loop") {
    const Tensor x = randn(1, {1, 2, 4, 4}), w = randn(2, {3, 2, 3, 3}), b = randn(3, {3});
    Tape tape(false);
    const Tensor y = ad::conv2d(tape.constant(x), tape.constant(w), tape.constant(b)).value();
    for (std::size_t o = 0; o < 3; ++o)
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
          double acc = b[o];
          for (std::size_t c = 0; c < 2; ++c)
            for (int di = -1; di <= 1; ++di)
              for (int dj = -1; dj <= 1; ++dj) {
                const int yy = i + di, xx = j + dj;
                if (yy < 0 || yy >= 4 || xx < 0 || xx >= 4) continue;
                acc += w[((o * 2 + c) * 3 + (di + 1)) * 3 + (dj + 1)] * x.at(0, c, yy, xx);
              }
          CHECK(y.at(0, o, i, j) == doctest::Approx(acc).epsilon(1e-12));
        }
  }

  TEST_CASE("conv2d shape errors") {
    Tape tape(false);
    CHECK_THROWS_AS(ad::conv2d(tape.constant(Tensor({1, 2, 4, 4})), tape.constant(Tensor({3, 3, 3, 3})),
                               tape.constant(Tensor({3}))),
                    ShapeError);
    CHECK_THROWS_AS(ad::conv2d(tape.constant(Tensor({1, 2, 4, 4})), tape.constant(Tensor({3, 2, 2, 2})),
                               tape.constant(Tensor({3}))),
                    ShapeError);
  }

  TEST_CASE("spatial ops") {
    check_op({randn(1, {2, 3, 4, 4}), randn(2, {2, 3})},
             [](Tape&, const auto& v) { return ad::add_channel_bias(v[0], v[1]); });
    check_op({randn(1, {2, 2, 4, 6})}, [](Tape&, const auto& v) { return ad::avg_pool2(v[0]); });
    check_op({randn(1, {2, 2, 2, 3})}, [](Tape&, const auto& v) { return ad::upsample2(v[0]); });
    check_op({randn(1, {2, 2, 3, 3}), randn(2, {2, 1, 3, 3})},
             [](Tape&, const auto& v) { return ad::concat_channels(v[0], v[1]); });
    check_op({randn(1, {2, 4, 2, 2})}, [](Tape&, const auto& v) { return ad::slice_channels(v[0], 1, 2); });
    check_op({randn(1, {2, 2, 4, 4})}, [](Tape&, const auto& v) { return ad::high_frequency(v[0]); });
  }

  TEST_CASE("high_frequency op matches the wavelet module") {
    const Tensor x = randn(1, {2, 3, 4, 4});
    Tape tape(false);
    CHECK(max_abs_diff(ad::high_frequency(tape.constant(x)).value(), high_frequency(x)) == 0.0);
  }

  TEST_CASE("pairwise similarity op on both sides") {
    check_op({randn(1, {4, 2, 2, 2}), randn(2, {4, 2, 2, 2})},
             [](Tape&, const auto& v) { return ad::pairwise_similarity_kl(v[0], v[1]); });
    Tape tape(false);
    const Tensor s = randn(1, {3, 5}), a = randn(2, {3, 5});
    const double op = ad::pairwise_similarity_kl(tape.constant(s), tape.constant(a)).value()[0];
    CHECK(op == doctest::Approx(pairwise_similarity_loss(unstack(s), unstack(a))).epsilon(1e-14));
  }

  TEST_CASE("weighted sum") {
    const std::vector<double> w{0.5, 2.0};
    check_op({randn(1, {3}), randn(2, {3})}, [&](Tape& t, const auto& v) {
      const Tensor target = randn(3, {3});
      std::vector<Var> parts{ad::mse(v[0], t.constant(target)), ad::mse(v[1], t.constant(target))};
      return ad::weighted_sum(parts, w);
    });
  }

  TEST_CASE("constants get no gradient and unreachable nodes get zeros") {
    Tape tape;
    Var c = tape.constant(randn(1, {3}));
    Var p = tape.parameter(randn(2, {3}));
    Var q = tape.parameter(randn(3, {3}));
    tape.backward(ad::mse(ad::add(c, p), tape.constant(Tensor({3}))));
    CHECK_FALSE(tape.requires_grad(c));
    CHECK(tape.requires_grad(p));
    CHECK(tape.grad(q) == Tensor({3}));
    CHECK(tape.grad(c) == Tensor({3}));
  }

  TEST_CASE("backward needs a scalar root") {
    Tape tape;
    Var p = tape.parameter(randn(1, {3}));
    CHECK_THROWS(tape.backward(ad::silu(p)));
  }

  TEST_CASE("reused nodes accumulate gradient") {
    check_op({randn(1, {4})}, [](Tape&, const auto& v) { return ad::add(ad::silu(v[0]), ad::scale(v[0], 2.0)); });
  }
}
