#include "fsdiff/trainer.hpp"

#include "fsdiff/similarity.hpp"

#include <cmath>

namespace fsdiff {

void TrainConfig::validate() const {
  if (iterations < 0) throw std::invalid_argument("train: iterations must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("train: learning_rate must be positive");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw std::invalid_argument("train: adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw std::invalid_argument("train: adam_eps must be positive");
  if (log_interval < 1) throw std::invalid_argument("train: log_interval must be >= 1");
  if (checkpoint_interval < 0 || probe_interval < 0 || regenerate_prior_every < 0)
    throw std::invalid_argument("train: intervals must be >= 0");
  weights.validate();
}

AdamOptimizer::AdamOptimizer(const DenoiserParams& like, double lr, double beta1, double beta2, double eps)
    : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
  for (std::size_t i = 0; i < like.count(); ++i) {
    m_.push_back(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(like.array(i).size())));
    v_.push_back(m_.back());
  }
}

void AdamOptimizer::step(DenoiserParams& params, const ParamGrads& grads) {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.count(); ++i) {
    const auto& g = grads.array(i).vec();
    m_[i] = b1_ * m_[i] + (1.0 - b1_) * g;
    v_[i] = b2_ * v_[i] + (1.0 - b2_) * g.cwiseAbs2();
    params.array(i).vec().array() -=
        lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

BatchSampler::BatchSampler(const Tensor& data, const TrainConfig& cfg, int T)
    : data_(data),
      batch_size_(cfg.batch_size),
      flip_(cfg.flip_augment),
      shared_t_(cfg.shared_t),
      T_(T),
      order_rng_(SeededRng(cfg.seed).child("order")),
      flip_rng_(SeededRng(cfg.seed).child("flip")),
      step_rng_(SeededRng(cfg.seed).child("timestep")),
      noise_(SeededRng(cfg.seed).child("noise")),
      dropout_(SeededRng(cfg.seed).child("dropout")) {
  if (data.rank() != 4 || data.dim(0) == 0) throw ShapeError("BatchSampler: dataset must be a nonempty (N,C,H,W) batch");
  reshuffle();
}

void BatchSampler::reshuffle() {
  order_.resize(data_.dim(0));
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[order_rng_.uniform_index(i)]);
  cursor_ = 0;
}

std::vector<int> BatchSampler::draw_timesteps(std::size_t n) {
  std::vector<int> t(n);
  if (shared_t_) {
    std::fill(t.begin(), t.end(), static_cast<int>(step_rng_.uniform_index(static_cast<std::size_t>(T_))));
  } else {
    for (auto& ti : t) ti = static_cast<int>(step_rng_.uniform_index(static_cast<std::size_t>(T_)));
  }
  return t;
}

DenoisingBatch BatchSampler::next() {
  Shape shape = data_.shape();
  shape[0] = batch_size_;
  DenoisingBatch b;
  b.x0 = Tensor(shape);
  for (std::size_t i = 0; i < batch_size_; ++i) {
    if (cursor_ == order_.size()) reshuffle();
    Tensor img = data_.item(order_[cursor_++]);
    if (flip_ && flip_rng_.uniform01() < 0.5) img = flip_horizontal(img);
    b.x0.set_item(i, img);
  }
  b.t = draw_timesteps(batch_size_);
  b.eps = noise_.gaussian(shape);
  return b;
}

namespace {

void check_dataset(const Tensor& data, const DenoiserConfig& m, const char* what) {
  if (data.rank() != 4 || data.dim(0) == 0)
    throw std::invalid_argument(std::string(what) + ": dataset must be a nonempty image batch");
  if (Shape(data.shape().begin() + 1, data.shape().end()) != m.image_shape())
    throw std::invalid_argument(std::string(what) + ": images " + shape_str(data.shape()) +
                                " do not match the model image shape " + shape_str(m.image_shape()));
}

SamplerOptions sampler_options(const RunConfig& cfg) {
  return {cfg.model.variance_learning ? VarianceMode::Learned : VarianceMode::FixedPosterior, cfg.train.clip_x0};
}

void emit_log(TrainResult& r, const TrainHooks& hooks, LogRecord rec) {
  if (hooks.on_log) hooks.on_log(rec);
  r.log.push_back(std::move(rec));
}

void warn(TrainResult& r, const TrainHooks& hooks, std::string msg) {
  if (hooks.on_warning) hooks.on_warning(msg);
  r.warnings.push_back(std::move(msg));
}

template <typename Step>
LossReport guarded_step(int it, Step&& step) {
  try {
    return step();
  } catch (const std::runtime_error& e) {
    throw TrainingError(it, "iteration " + std::to_string(it) + ": " + e.what());
  }
}

}  // namespace

TrainResult pretrain(const Tensor& dataset, const RunConfig& cfg, const std::optional<DenoiserParams>& init,
                     const TrainHooks& hooks) {
  cfg.model.validate();
  cfg.train.validate();
  check_dataset(dataset, cfg.model, "pretrain");
  const NoiseSchedule s = cfg.schedule.build();

  TrainResult r;
  if (init) {
    r.params = *init;
  } else {
    SeededRng init_rng = SeededRng(cfg.train.seed).child("init");
    r.params = init_params(cfg.model, init_rng);
  }
  AdamOptimizer opt(r.params, cfg.train.learning_rate, cfg.train.adam_beta1, cfg.train.adam_beta2, cfg.train.adam_eps);
  BatchSampler sampler(dataset, cfg.train, s.T);
  LossWeights w;
  w.lambda1 = cfg.train.weights.lambda1;
  std::optional<int> cond;
  if (cfg.model.num_conditions > 0) cond = cfg.train.source_condition;

  for (int it = 1; it <= cfg.train.iterations; ++it) {
    DenoisingBatch batch = sampler.next();
    batch.cond = cond;
    const LossReport rep = guarded_step(it, [&] {
      LossResult res = total_unconditional_loss(batch, nullptr, r.params, cfg.model, s, w,
                                                {true, &sampler.dropout_rng(), false});
      opt.step(r.params, *res.grads);
      if (!r.params.all_finite()) throw std::runtime_error("parameters became non-finite");
      return res.report;
    });
    r.history.push_back(rep);
    r.iterations_done = it;
    if (it % cfg.train.log_interval == 0 || it == cfg.train.iterations) emit_log(r, hooks, {it, rep, std::nullopt});
    if (hooks.on_checkpoint && cfg.train.checkpoint_interval > 0 && it % cfg.train.checkpoint_interval == 0 &&
        it != cfg.train.iterations)
      hooks.on_checkpoint(it, r.params);
  }
  if (hooks.on_checkpoint) hooks.on_checkpoint(r.iterations_done, r.params);
  return r;
}

Tensor make_probe_noise(const RunConfig& cfg) {
  Shape shape = cfg.model.image_shape();
  shape.insert(shape.begin(), cfg.train.probe_count);
  SeededRng rng = SeededRng(cfg.train.probe_seed).child("probe-noise");
  return rng.gaussian(shape);
}

ProbeRecord probe_fixed_noise(const DenoiserParams& params, const RunConfig& cfg, const NoiseSchedule& s,
                              const Tensor& fixed_noise, int iteration, std::optional<int> cond) {
  SeededRng chain = SeededRng(cfg.train.probe_seed).child("probe-chain");
  const Tensor samples =
      ancestral_sample_from(make_denoise_fn(params, cfg.model), cond, s, chain, fixed_noise, sampler_options(cfg));
  ProbeRecord rec;
  rec.iteration = iteration;
  const std::size_t n = samples.dim(0);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      rec.pair_similarity.push_back(cosine_sim(samples.item(i), samples.item(j)));
      sum += rec.pair_similarity.back();
    }
  rec.mean_similarity = rec.pair_similarity.empty() ? 1.0 : sum / static_cast<double>(rec.pair_similarity.size());
  return rec;
}

Tensor sample_images(const DenoiserParams& params, const RunConfig& cfg, std::size_t n, std::uint64_t seed,
                     std::optional<int> cond) {
  cfg.model.validate();
  const NoiseSchedule s = cfg.schedule.build();
  SeededRng rng(seed);
  return ancestral_sample(make_denoise_fn(params, cfg.model), cond, s, rng, n, cfg.model.image_shape(),
                          sampler_options(cfg));
}

namespace {

Tensor generate_prior_pool(const DenoiserParams& source, const RunConfig& cfg, const NoiseSchedule& s,
                           SeededRng& rng) {
  Shape shape = cfg.model.image_shape();
  shape.insert(shape.begin(), cfg.train.prior_pool_size);
  return ancestral_sample(make_denoise_fn(source, cfg.model), cfg.train.source_condition, s, rng,
                          cfg.train.prior_pool_size, cfg.model.image_shape(), sampler_options(cfg));
}

}  // namespace

TrainResult adapt(const DenoiserParams& source, const Tensor& target, const RunConfig& cfg, const TrainHooks& hooks) {
  cfg.model.validate();
  cfg.train.validate();
  check_dataset(target, cfg.model, "adapt");
  const LossWeights& w = cfg.train.weights;
  const bool conditional = w.mode == AdaptationMode::Conditional;
  if (conditional && cfg.model.num_conditions < 2)
    throw std::invalid_argument("adapt: conditional mode needs a model with >= 2 condition tokens");
  if (!conditional && w.lambda1 > 0.0 && !cfg.model.variance_learning)
    throw std::invalid_argument("adapt: lambda1 > 0 needs a variance-learning model");
  if (w.pairwise_active() && cfg.train.batch_size < 2)
    throw std::invalid_argument("adapt: pairwise similarity terms need batch_size >= 2");
  if (!params_match_config(source, cfg.model))
    throw std::invalid_argument("adapt: source parameters do not match the model configuration");

  const NoiseSchedule s = cfg.schedule.build();
  TrainResult r;
  if (w.pairwise_active() && cfg.train.batch_size == 2)
    warn(r, hooks, "batch_size = 2 makes the pairwise similarity losses identically zero");

  r.params = clone_for_adaptation(source);
  AdamOptimizer opt(r.params, cfg.train.learning_rate, cfg.train.adam_beta1, cfg.train.adam_beta2, cfg.train.adam_eps);
  BatchSampler sampler(target, cfg.train, s.T);

  // A conditional model adapted in unconditional mode keeps its source token throughout.
  std::optional<int> uncond_token;
  if (!conditional && cfg.model.num_conditions > 0) uncond_token = cfg.train.source_condition;
  const std::optional<int> probe_cond = conditional ? std::optional<int>(cfg.train.target_condition) : uncond_token;

  SeededRng prior_rng = SeededRng(cfg.train.seed).child("prior");
  Tensor prior_pool;
  if (conditional && (w.lambda1 > 0.0 || w.pairwise_active())) prior_pool = generate_prior_pool(source, cfg, s, prior_rng);

  const Tensor probe_noise = make_probe_noise(cfg);
  const int probe_every = cfg.train.probe_interval > 0 ? cfg.train.probe_interval
                                                       : std::max(1, cfg.train.iterations / 10);
  const bool probing = cfg.train.probe_count >= 2;
  if (probing) r.probes.push_back(probe_fixed_noise(r.params, cfg, s, probe_noise, 0, probe_cond));

  for (int it = 1; it <= cfg.train.iterations; ++it) {
    DenoisingBatch batch = sampler.next();
    const LossReport rep = guarded_step(it, [&] {
      LossResult res;
      if (!conditional) {
        batch.cond = uncond_token;
        res = total_unconditional_loss(batch, &source, r.params, cfg.model, s, w,
                                       {true, &sampler.dropout_rng(), false});
      } else {
        if (cfg.train.regenerate_prior_every > 0 && it > 1 && (it - 1) % cfg.train.regenerate_prior_every == 0 &&
            !prior_pool.empty())
          prior_pool = generate_prior_pool(source, cfg, s, prior_rng);
        ConditionalBatch cb;
        cb.x0 = std::move(batch.x0);
        cb.eps = std::move(batch.eps);
        cb.t = std::move(batch.t);
        cb.target_cond = cfg.train.target_condition;
        cb.source_cond = cfg.train.source_condition;
        if (!prior_pool.empty()) {
          Shape shape = prior_pool.shape();
          shape[0] = cfg.train.batch_size;
          cb.prior_x0 = Tensor(shape);
          for (std::size_t i = 0; i < cfg.train.batch_size; ++i)
            cb.prior_x0.set_item(i, prior_pool.item(prior_rng.uniform_index(prior_pool.dim(0))));
          cb.prior_eps = prior_rng.gaussian(shape);
          cb.prior_t = sampler.draw_timesteps(cfg.train.batch_size);
        }
        res = total_conditional_loss(cb, source, r.params, cfg.model, s, w, {true, &sampler.dropout_rng(), false});
      }
      opt.step(r.params, *res.grads);
      if (!r.params.all_finite()) throw std::runtime_error("parameters became non-finite");
      return res.report;
    });
    r.history.push_back(rep);
    r.iterations_done = it;

    std::optional<ProbeRecord> probe;
    if (probing && (it % probe_every == 0 || it == cfg.train.iterations)) {
      probe = probe_fixed_noise(r.params, cfg, s, probe_noise, it, probe_cond);
      r.probes.push_back(*probe);
    }
    if (it % cfg.train.log_interval == 0 || it == cfg.train.iterations || probe) emit_log(r, hooks, {it, rep, probe});
    if (hooks.on_checkpoint && cfg.train.checkpoint_interval > 0 && it % cfg.train.checkpoint_interval == 0 &&
        it != cfg.train.iterations)
      hooks.on_checkpoint(it, r.params);
  }
  if (hooks.on_checkpoint) hooks.on_checkpoint(r.iterations_done, r.params);
  return r;
}

}  // namespace fsdiff
