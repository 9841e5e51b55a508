#pragma once

#include "fsdiff/denoiser.hpp"
#include "fsdiff/diffusion.hpp"
#include "fsdiff/losses.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace fsdiff {

struct ScheduleConfig {
  int T = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;

  NoiseSchedule build() const { return make_linear_schedule(T, beta_start, beta_end); }
  bool operator==(const ScheduleConfig&) const = default;
};

struct TrainConfig {
  int iterations = 1000;
  std::size_t batch_size = 8;
  double learning_rate = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  int log_interval = 50;
  int checkpoint_interval = 0;  // 0: only the final checkpoint
  bool flip_augment = true;
  bool shared_t = false;
  LossWeights weights;

  // Fixed-noise probe (adaptation only). probe_interval 0 = every 10% of iterations.
  int probe_interval = 0;
  std::size_t probe_count = 8;
  std::uint64_t probe_seed = 1234;

  bool clip_x0 = true;  // sampler x0 clamping

  // Conditional mode.
  int source_condition = 0;
  int target_condition = 1;
  std::size_t prior_pool_size = 200;
  int regenerate_prior_every = 0;  // 0: one fixed pool generated up front

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct RunConfig {
  ScheduleConfig schedule;
  DenoiserConfig model;
  TrainConfig train;
  bool operator==(const RunConfig&) const = default;
};

struct ProbeRecord {
  int iteration = 0;
  double mean_similarity = 0.0;
  std::vector<double> pair_similarity;  // unordered pairs (i < j), row-major
};

struct LogRecord {
  int iteration = 0;
  LossReport report;
  std::optional<ProbeRecord> probe;
};

class TrainingError : public std::runtime_error {
 public:
  TrainingError(int iteration, const std::string& what) : std::runtime_error(what), iteration_(iteration) {}
  int iteration() const { return iteration_; }

 private:
  int iteration_;
};

// Optional observers; all are called on the training thread.
struct TrainHooks {
  std::function<void(const LogRecord&)> on_log;
  std::function<void(int iteration, const DenoiserParams&)> on_checkpoint;
  std::function<void(const std::string&)> on_warning;
};

struct TrainResult {
  DenoiserParams params;
  int iterations_done = 0;
  std::vector<LossReport> history;  // one entry per optimisation step
  std::vector<LogRecord> log;
  std::vector<ProbeRecord> probes;
  std::vector<std::string> warnings;
};

class AdamOptimizer {
 public:
  AdamOptimizer(const DenoiserParams& like, double lr, double beta1, double beta2, double eps);
  void step(DenoiserParams& params, const ParamGrads& grads);
  long steps() const { return t_; }

 private:
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
  std::vector<Eigen::VectorXd> m_, v_;
};

// Draws training batches: epoch-shuffled data order, optional horizontal
// flips, per-item (or shared) timesteps and Gaussian noise. Every stream is a
// named child of the run seed, so pretraining and adaptation draw identical
// batches from identical seeds and data.
class BatchSampler {
 public:
  BatchSampler(const Tensor& data, const TrainConfig& cfg, int T);
  DenoisingBatch next();
  SeededRng& dropout_rng() { return dropout_; }

  std::vector<int> draw_timesteps(std::size_t n);
  Tensor draw_noise(const Shape& shape) { return noise_.gaussian(shape); }

 private:
  const Tensor& data_;
  std::size_t batch_size_;
  bool flip_, shared_t_;
  int T_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  SeededRng order_rng_, flip_rng_, step_rng_, noise_, dropout_;
  void reshuffle();
};

// Trains L_simple (+ lambda1 L_vlb) from scratch, or from `init` when given.
TrainResult pretrain(const Tensor& dataset, const RunConfig& cfg, const std::optional<DenoiserParams>& init = {},
                     const TrainHooks& hooks = {});

// Adapts a clone of `source` to the target images; source stays frozen.
TrainResult adapt(const DenoiserParams& source, const Tensor& target, const RunConfig& cfg,
                  const TrainHooks& hooks = {});

// Fixed noise set for probing: (count, C, H, W) drawn from the probe seed.
Tensor make_probe_noise(const RunConfig& cfg);

// Samples every fixed noise through the full reverse chain (the per-step noise
// stream is re-seeded from probe_seed each call) and records pairwise cosine
// similarity of the flattened samples.
ProbeRecord probe_fixed_noise(const DenoiserParams& params, const RunConfig& cfg, const NoiseSchedule& s,
                              const Tensor& fixed_noise, int iteration, std::optional<int> cond = {});

// Samples n images with the given seed.
Tensor sample_images(const DenoiserParams& params, const RunConfig& cfg, std::size_t n, std::uint64_t seed,
                     std::optional<int> cond = {});

}  // namespace fsdiff
