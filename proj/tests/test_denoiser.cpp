#include "support.hpp"

#include "fsdiff/gradcheck.hpp"
#include "fsdiff/similarity.hpp"

using namespace fsdiff;
using namespace testing_support;

namespace {

// 0.5 * sum eps_pred^2, with analytic gradient from the tape.
double eps_energy(const DenoiserParams& p, const DenoiserConfig& cfg, const Tensor& x, std::span<const int> t,
                  std::span<const int> conds, ParamGrads* grads) {
  ad::Tape tape(grads != nullptr);
  const BoundParams bound = bind(tape, p, grads != nullptr);
  const DenoiserGraph g = denoise_graph(tape, bound, cfg, tape.constant(x), t, conds);
  ad::Var out = g.eps;
  if (g.var_interp) out = ad::concat_channels(g.eps, *g.var_interp);
  const double n = static_cast<double>(out.value().size());
  ad::Var loss = ad::scale(ad::mse(out, tape.constant(Tensor(out.shape()))), 0.5 * n);
  if (grads) {
    tape.backward(loss);
    *grads = collect_grads(tape, bound);
  }
  return loss.value()[0];
}

}  // namespace

TEST_SUITE("denoiser") {
  TEST_CASE("parameter count of a hand-counted config") {
    DenoiserConfig cfg;
    cfg.image_size = 8;
    cfg.channels = 1;
    cfg.base_width = 4;
    cfg.depth = 2;
    cfg.time_embed_dim = 8;
    cfg.num_conditions = 0;
    cfg.variance_learning = false;
    SeededRng rng(0);
    // temb 144, conv_in 40, enc0 332, down1 296, enc1 1240, up1 292, merge1 292, dec1 332, conv_out 37
    CHECK(init_params(cfg, rng).num_scalars() == 3005);
  }

  TEST_CASE("condition embedding and variance channel add the expected parameters") {
    auto cfg = tiny_config();
    SeededRng r0(0), r1(0), r2(0);
    const std::size_t base = init_params(cfg, r0).num_scalars();
    cfg.num_conditions = 3;
    CHECK(init_params(cfg, r1).num_scalars() == base + 3 * cfg.time_embed_dim);
    cfg.num_conditions = 0;
    cfg.variance_learning = true;
    // conv_out gains C output channels: C * base_width * 9 weights + C biases.
    CHECK(init_params(cfg, r2).num_scalars() == base + cfg.channels * (cfg.base_width * 9 + 1));
  }

  TEST_CASE("initialisation is seeded, finite and non-degenerate") {
    const auto cfg = tiny_config();
    SeededRng a(5), b(5), c(6);
    const DenoiserParams pa = init_params(cfg, a), pb = init_params(cfg, b), pc = init_params(cfg, c);
    CHECK(pa == pb);
    CHECK_FALSE(pa == pc);
    CHECK(pa.all_finite());
    for (std::size_t i = 0; i < pa.count(); ++i)
      if (pa.name(i).ends_with(".w")) CHECK(pa.array(i).vec().cwiseAbs().maxCoeff() > 0.0);
  }

  TEST_CASE("invalid configs are rejected") {
    auto cfg = tiny_config();
    SeededRng rng(0);
    cfg.image_size = 5;
    CHECK_THROWS(init_params(cfg, rng));
    cfg = tiny_config();
    cfg.base_width = 3;
    CHECK_THROWS(init_params(cfg, rng));
    cfg = tiny_config();
    cfg.image_size = 6;
    cfg.depth = 3;
    CHECK_THROWS(init_params(cfg, rng));
    cfg = tiny_config();
    cfg.dropout = 1.0;
    CHECK_THROWS(init_params(cfg, rng));
  }

  TEST_CASE("clone is deep and equal") {
    SeededRng rng(1);
    const auto cfg = tiny_config();
    const DenoiserParams src = init_params(cfg, rng);
    DenoiserParams ada = clone_for_adaptation(src);
    CHECK(ada == src);
    ada.array(0)[0] += 1.0;
    CHECK_FALSE(ada == src);
    SeededRng again(1);
    CHECK(src == init_params(cfg, again));
  }

  TEST_CASE("clone produces identical outputs so the pairwise loss is zero") {
    SeededRng rng(2);
    const auto cfg = tiny_config();
    const DenoiserParams src = init_params(cfg, rng);
    const DenoiserParams ada = clone_for_adaptation(src);
    const Tensor x = randn(3, {4, 2, 4, 4});
    const std::vector<int> t{0, 3, 5, 9};
    const auto a = unstack(denoise_forward(src, cfg, x, t).eps), b = unstack(denoise_forward(ada, cfg, x, t).eps);
    CHECK(pairwise_similarity_loss(a, b) == 0.0);
  }

  TEST_CASE("output shape for a 3x16x16 input") {
    DenoiserConfig cfg;
    cfg.dropout = 0.0;
    SeededRng rng(0);
    const DenoiserParams p = init_params(cfg, rng);
    const std::vector<int> t{10};
    const ModelOutput out = denoise_forward(p, cfg, randn(1, {1, 3, 16, 16}), t);
    CHECK(out.eps.shape() == Shape{1, 3, 16, 16});
    CHECK_FALSE(out.var_interp.has_value());
    CHECK(out.eps.all_finite());
  }

  TEST_CASE("variance channel is split off") {
    const auto cfg = tiny_config(true);
    SeededRng rng(0);
    const DenoiserParams p = init_params(cfg, rng);
    const std::vector<int> t{1, 2};
    const ModelOutput out = denoise_forward(p, cfg, randn(1, {2, 2, 4, 4}), t);
    CHECK(out.eps.shape() == Shape{2, 2, 4, 4});
    REQUIRE(out.var_interp.has_value());
    CHECK(out.var_interp->shape() == Shape{2, 2, 4, 4});
  }

  TEST_CASE("different timesteps give different outputs") {
    const auto cfg = tiny_config();
    SeededRng rng(0);
    const DenoiserParams p = init_params(cfg, rng);
    const Tensor x = randn(1, {1, 2, 4, 4});
    const std::vector<int> t0{0}, t1{7};
    CHECK(max_abs_diff(denoise_forward(p, cfg, x, t0).eps, denoise_forward(p, cfg, x, t1).eps) > 1e-6);
  }

  TEST_CASE("forward pass is pure") {
    const auto cfg = tiny_config();
    SeededRng rng(0);
    const DenoiserParams p = init_params(cfg, rng);
    const Tensor x = randn(1, {2, 2, 4, 4});
    const std::vector<int> t{3, 4};
    CHECK(denoise_forward(p, cfg, x, t).eps == denoise_forward(p, cfg, x, t).eps);
  }

  TEST_CASE("batch items are independent") {
    const auto cfg = tiny_config();
    SeededRng rng(0);
    const DenoiserParams p = init_params(cfg, rng);
    const Tensor x = randn(1, {3, 2, 4, 4});
    const std::vector<int> t{3, 4, 8};
    const Tensor full = denoise_forward(p, cfg, x, t).eps;
    const std::vector<int> t1{4};
    const Tensor one = denoise_forward(p, cfg, stack(std::vector<Tensor>{x.item(1)}), t1).eps;
    CHECK(max_abs_diff(full.item(1), one.item(0)) < 1e-13);
  }

  TEST_CASE("condition tokens") {
    const auto cfg = tiny_config(false, 2);
    SeededRng rng(0);
    const DenoiserParams p = init_params(cfg, rng);
    const Tensor x = randn(1, {2, 2, 4, 4});
    const std::vector<int> t{3, 4}, c0{0}, c1{1}, c01{0, 1};
    const Tensor y0 = denoise_forward(p, cfg, x, t, c0).eps, y1 = denoise_forward(p, cfg, x, t, c1).eps;
    CHECK(max_abs_diff(y0, y1) > 1e-6);
    const Tensor mixed = denoise_forward(p, cfg, x, t, c01).eps;
    CHECK(max_abs_diff(mixed.item(0), y0.item(0)) < 1e-13);
    CHECK(max_abs_diff(mixed.item(1), y1.item(1)) < 1e-13);
    const std::vector<int> bad{2};
    CHECK_THROWS_AS(denoise_forward(p, cfg, x, t, bad), std::out_of_range);
  }

  TEST_CASE("input validation") {
    const auto cfg = tiny_config();
    SeededRng rng(0);
    const DenoiserParams p = init_params(cfg, rng);
    const std::vector<int> t{1};
    CHECK_THROWS_AS(denoise_forward(p, cfg, randn(1, {1, 3, 4, 4}), t), ShapeError);
    CHECK_THROWS_AS(denoise_forward(p, cfg, randn(1, {2, 2, 4, 4}), t), ShapeError);
    const std::vector<int> c{0};
    CHECK_THROWS(denoise_forward(p, cfg, randn(1, {1, 2, 4, 4}), t, c));
  }

  TEST_CASE("params_match_config") {
    const auto cfg = tiny_config();
    SeededRng rng(0);
    const DenoiserParams p = init_params(cfg, rng);
    CHECK(params_match_config(p, cfg));
    auto other = cfg;
    other.base_width = 8;
    CHECK_FALSE(params_match_config(p, other));
    other = cfg;
    other.num_conditions = 2;
    CHECK_FALSE(params_match_config(p, other));
  }

  TEST_CASE("dropout only acts when a stream is given") {
    auto cfg = tiny_config();
    cfg.dropout = 0.5;
    SeededRng rng(0);
    const DenoiserParams p = init_params(cfg, rng);
    const Tensor x = randn(1, {1, 2, 4, 4});
    const std::vector<int> t{2};
    ad::Tape tape(false);
    const BoundParams b = bind(tape, p, false);
    SeededRng drop(3);
    const Tensor plain = denoise_graph(tape, b, cfg, tape.constant(x), t, {}).eps.value();
    const Tensor dropped = denoise_graph(tape, b, cfg, tape.constant(x), t, {}, &drop).eps.value();
    CHECK(plain == denoise_forward(p, cfg, x, t).eps);
    CHECK(max_abs_diff(plain, dropped) > 1e-9);
  }

  TEST_CASE("gradient of the output energy matches finite differences for every parameter") {
    for (bool variance : {false, true}) {
      CAPTURE(variance);
      const auto cfg = tiny_config(variance, 2);
      SeededRng rng(4);
      const DenoiserParams p = init_params(cfg, rng);
      const Tensor x = randn(5, {2, 2, 4, 4});
      const std::vector<int> t{2, 7}, c{0, 1};
      ParamGrads g;
      eps_energy(p, cfg, x, t, c, &g);
      const auto fd = finite_difference_grad(
          [&](const DenoiserParams& q) { return eps_energy(q, cfg, x, t, c, nullptr); }, p, 1e-5);
      CHECK(fd.coords.size() == p.num_scalars());
      CHECK(max_relative_error(g, fd, 1e-6) < 1e-5);
    }
  }
}
