#include "support.hpp"

#include "fsdiff/trainer.hpp"

#include <cmath>
#include <numeric>

using namespace fsdiff;
using namespace testing_support;

namespace {

RunConfig tiny_run(std::size_t conds = 0) {
  RunConfig c;
  c.schedule = {10, 0.01, 0.3};
  c.model = tiny_config(false, conds);
  c.train.iterations = 20;
  c.train.batch_size = 4;
  c.train.learning_rate = 1e-3;
  c.train.seed = 5;
  c.train.log_interval = 5;
  c.train.probe_count = 3;
  c.train.prior_pool_size = 6;
  return c;
}

Tensor tiny_data(std::size_t n, std::uint64_t seed = 3) { return randn(seed, {n, 2, 4, 4}) * 0.5; }

double mean_simple(const std::vector<LossReport>& h, std::size_t from, std::size_t to) {
  double s = 0;
  for (std::size_t i = from; i < to; ++i) s += h[i].simple;
  return s / static_cast<double>(to - from);
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("zero iterations returns the seeded initialization") {
    RunConfig c = tiny_run();
    c.train.iterations = 0;
    const TrainResult r = pretrain(tiny_data(4), c);
    SeededRng rng = SeededRng(c.train.seed).child("init");
    CHECK(r.params == init_params(c.model, rng));
    CHECK(r.iterations_done == 0);
    CHECK(r.history.empty());
  }

  TEST_CASE("pretraining is deterministic for a fixed seed") {
    const RunConfig c = tiny_run();
    const Tensor data = tiny_data(6);
    const TrainResult a = pretrain(data, c), b = pretrain(data, c);
    CHECK(a.params == b.params);
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) CHECK(a.history[i].total == b.history[i].total);
    RunConfig other = c;
    other.train.seed = 6;
    CHECK_FALSE(pretrain(data, other).params == a.params);
  }

  TEST_CASE("training loss decreases on a single repeated image") {
    RunConfig c = tiny_run();
    c.model.image_size = 16;
    c.train.iterations = 200;
    c.train.flip_augment = false;
    const Tensor one = randn(3, {1, 2, 16, 16}) * 0.5;
    std::vector<Tensor> copies(16, one.item(0));
    const TrainResult r = pretrain(stack(copies), c);
    REQUIRE(r.history.size() == 200);
    CHECK(mean_simple(r.history, 180, 200) < mean_simple(r.history, 0, 20));
  }

  TEST_CASE("logging and checkpoint hooks") {
    RunConfig c = tiny_run();
    c.train.checkpoint_interval = 7;
    std::vector<int> logged, saved;
    TrainHooks hooks;
    hooks.on_log = [&](const LogRecord& r) { logged.push_back(r.iteration); };
    hooks.on_checkpoint = [&](int it, const DenoiserParams&) { saved.push_back(it); };
    pretrain(tiny_data(4), c, std::nullopt, hooks);
    CHECK(logged == std::vector<int>{5, 10, 15, 20});
    CHECK(saved == std::vector<int>{7, 14, 20});
  }

  TEST_CASE("adapt leaves the source untouched") {
    RunConfig c = tiny_run();
    c.train.weights.lambda2 = 0.5;
    c.train.weights.lambda3 = 0.5;
    c.train.weights.lambda4 = 0.05;
    SeededRng rng(1);
    const DenoiserParams source = init_params(c.model, rng);
    const DenoiserParams copy = source;
    const TrainResult r = adapt(source, tiny_data(5), c);
    CHECK(source == copy);
    CHECK_FALSE(r.params == source);
  }

  TEST_CASE("adapt with zero weights matches pretraining from the loaded weights") {
    RunConfig c = tiny_run();
    c.train.probe_count = 0;
    SeededRng rng(2);
    const DenoiserParams source = init_params(c.model, rng);
    const Tensor data = tiny_data(5);
    const TrainResult a = adapt(source, data, c);
    const TrainResult p = pretrain(data, c, source);
    CHECK(a.params == p.params);
    REQUIRE(a.history.size() == p.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) CHECK(a.history[i].simple == p.history[i].simple);
  }

  TEST_CASE("probe records are deterministic with monotone iterations") {
    RunConfig c = tiny_run();
    c.train.probe_interval = 6;
    SeededRng rng(3);
    const DenoiserParams source = init_params(c.model, rng);
    const TrainResult r = adapt(source, tiny_data(5), c);
    std::vector<int> its;
    for (const auto& p : r.probes) its.push_back(p.iteration);
    CHECK(its == std::vector<int>{0, 6, 12, 18, 20});
    for (const auto& p : r.probes) {
      CHECK(p.pair_similarity.size() == 3);
      CHECK(p.mean_similarity == doctest::Approx(std::accumulate(p.pair_similarity.begin(), p.pair_similarity.end(), 0.0) / 3));
    }
    const NoiseSchedule s = c.schedule.build();
    const Tensor noise = make_probe_noise(c);
    CHECK(noise == make_probe_noise(c));
    const ProbeRecord x = probe_fixed_noise(r.params, c, s, noise, 1), y = probe_fixed_noise(r.params, c, s, noise, 1);
    CHECK(x.pair_similarity == y.pair_similarity);
    CHECK(r.probes.back().pair_similarity == probe_fixed_noise(r.params, c, s, noise, 20).pair_similarity);
  }

  TEST_CASE("batch size two warns when pairwise terms are active") {
    RunConfig c = tiny_run();
    c.train.iterations = 2;
    c.train.batch_size = 2;
    c.train.weights.lambda2 = 1.0;
    SeededRng rng(4);
    const DenoiserParams source = init_params(c.model, rng);
    std::vector<std::string> seen;
    TrainHooks hooks;
    hooks.on_warning = [&](const std::string& w) { seen.push_back(w); };
    const TrainResult r = adapt(source, tiny_data(3), c, hooks);
    REQUIRE(r.warnings.size() == 1);
    CHECK(seen == r.warnings);
    c.train.batch_size = 1;
    CHECK_THROWS_AS(adapt(source, tiny_data(3), c), std::invalid_argument);
  }

  TEST_CASE("adapt input validation") {
    RunConfig c = tiny_run();
    SeededRng rng(5);
    const DenoiserParams source = init_params(c.model, rng);
    CHECK_THROWS_AS(adapt(source, randn(1, {3, 3, 4, 4}), c), std::invalid_argument);
    RunConfig cond = c;
    cond.train.weights.mode = AdaptationMode::Conditional;
    CHECK_THROWS_AS(adapt(source, tiny_data(3), cond), std::invalid_argument);
    RunConfig wider = c;
    wider.model.base_width = 6;
    CHECK_THROWS_AS(adapt(source, tiny_data(3), wider), std::invalid_argument);
    RunConfig bad = c;
    bad.train.learning_rate = 0;
    CHECK_THROWS_AS(pretrain(tiny_data(3), bad), std::invalid_argument);
  }

  TEST_CASE("adam first step moves each coordinate by the learning rate") {
    RunConfig c = tiny_run();
    SeededRng rng(6);
    DenoiserParams p = init_params(c.model, rng);
    const DenoiserParams before = p;
    ParamGrads g = zeros_like(p);
    for (std::size_t k = 0; k < g.num_scalars(); ++k) g.set_flat(k, (k % 3 == 0) ? 2.0 : (k % 3 == 1 ? -0.5 : 0.0));
    AdamOptimizer opt(p, 0.01, 0.9, 0.999, 1e-8);
    opt.step(p, g);
    CHECK(opt.steps() == 1);
    for (std::size_t k = 0; k < p.num_scalars(); ++k) {
      const double want = k % 3 == 0 ? -0.01 : (k % 3 == 1 ? 0.01 : 0.0);
      CHECK(p.get_flat(k) - before.get_flat(k) == doctest::Approx(want).epsilon(1e-6).scale(1e-9));
    }
  }

  TEST_CASE("conditional adaptation trains the target token and keeps the source token") {
    RunConfig c = tiny_run(2);
    c.train.weights = {1.0, 0.5, 0.5, 0.05, AdaptationMode::Conditional};
    SeededRng rng(7);
    const DenoiserParams source = init_params(c.model, rng);
    const TrainResult r = adapt(source, tiny_data(4), c);
    const Tensor& before = source.at("cond.embed");
    const Tensor& after = r.params.at("cond.embed");
    double moved1 = 0, moved0 = 0;
    for (std::size_t row = 0; row < c.model.time_embed_dim; ++row) {
      moved0 += std::abs(after[row * 2] - before[row * 2]);
      moved1 += std::abs(after[row * 2 + 1] - before[row * 2 + 1]);
    }
    CHECK(moved1 > 0.0);
    CHECK(moved0 > 0.0);  // L_pr and the pairwise terms reach the source token
    for (const auto& h : r.history) CHECK(std::isfinite(h.pr));
  }

  TEST_CASE("sample_images is reproducible") {
    const RunConfig c = tiny_run();
    SeededRng rng(8);
    const DenoiserParams p = init_params(c.model, rng);
    CHECK(sample_images(p, c, 3, 11) == sample_images(p, c, 3, 11));
    CHECK_FALSE(sample_images(p, c, 3, 11) == sample_images(p, c, 3, 12));
    CHECK(sample_images(p, c, 3, 11).shape() == Shape{3, 2, 4, 4});
  }
}
