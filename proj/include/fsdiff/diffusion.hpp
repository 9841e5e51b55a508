#pragma once

#include "fsdiff/rng.hpp"
#include "fsdiff/tensor.hpp"

#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace fsdiff {

// Step tables for T diffusion steps. Index t here is 0-based: t = 0 is the
// first (least noisy) step, i.e. step t+1 in the usual 1-based notation.
struct NoiseSchedule {
  int T = 0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;

  double alpha_bar_prev(int t) const { return t == 0 ? 1.0 : alpha_bar.at(static_cast<std::size_t>(t - 1)); }
  // beta_tilde_t = beta_t (1 - abar_{t-1}) / (1 - abar_t); zero at t = 0.
  double posterior_variance(int t) const;
  // log of posterior variance, with the t = 0 entry replaced by the t = 1 value.
  double posterior_log_variance_clipped(int t) const;
  // Posterior mean coefficients: mu = c0 * x0 + ct * x_t.
  double posterior_coef_x0(int t) const;
  double posterior_coef_xt(int t) const;

  void check_step(int t) const {
    if (t < 0 || t >= T)
      throw std::out_of_range("timestep " + std::to_string(t) + " outside [0, " + std::to_string(T) + ")");
  }
};

NoiseSchedule make_linear_schedule(int T, double beta_start = 1e-4, double beta_end = 0.02);

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
Tensor forward_noise(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& s);

// x0~ = x_t / sqrt(abar_t) - sqrt(1 - abar_t) / sqrt(abar_t) * eps_pred
Tensor predict_x0(const Tensor& x_t, const Tensor& eps_pred, int t, const NoiseSchedule& s);

// Per-item versions for batches (N, ...) with one timestep per item.
Tensor forward_noise_batch(const Tensor& x0, std::span<const int> t, const Tensor& eps,
                           const NoiseSchedule& s);
Tensor predict_x0_batch(const Tensor& x_t, const Tensor& eps_pred, std::span<const int> t,
                        const NoiseSchedule& s);

enum class VarianceMode { FixedPosterior, Learned };

struct ModelOutput {
  Tensor eps;
  // Raw interpolation channel v in [-1, 1] nominally; present in Learned mode.
  std::optional<Tensor> var_interp;
};

// Model callback: (x_t batch, per-item timesteps, optional condition) -> prediction.
using DenoiseFn = std::function<ModelOutput(const Tensor&, std::span<const int>, std::optional<int>)>;

struct SamplerOptions {
  VarianceMode variance = VarianceMode::FixedPosterior;
  bool clip_x0 = true;
};

class SamplingError : public std::runtime_error {
 public:
  SamplingError(int step, const std::string& what) : std::runtime_error(what), step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

// Log variance of the reverse step: frac = (v + 1) / 2 interpolates between
// log beta_t and log beta_tilde_t.
double learned_log_variance(const NoiseSchedule& s, int t, double v);

// Full T-step reverse chain from x_T ~ N(0, I). image_shape is (C, H, W).
Tensor ancestral_sample(const DenoiseFn& model, std::optional<int> cond, const NoiseSchedule& s,
                        SeededRng& rng, std::size_t n, const Shape& image_shape,
                        const SamplerOptions& opts = {});

// Same chain starting from a given x_T batch.
Tensor ancestral_sample_from(const DenoiseFn& model, std::optional<int> cond, const NoiseSchedule& s,
                             SeededRng& rng, Tensor x, const SamplerOptions& opts = {});

// Gaussian KL(N(m1, exp(lv1)) || N(m2, exp(lv2))), elementwise sum.
double gaussian_kl(double mean1, double logvar1, double mean2, double logvar2);

// log P(x in bin) under a discretised Gaussian with 256 bins over [-1, 1].
double discretized_gaussian_log_likelihood(double x, double mean, double log_scale_var);
// d/d(logvar) of the above.
double discretized_gaussian_log_likelihood_dlogvar(double x, double mean, double logvar);

// Variational-bound term for one item at step t, in bits per dimension.
// t > 0: KL(q(x_{t-1}|x_t,x0) || p(x_{t-1}|x_t)); t == 0: -log p(x0|x1).
// The model mean is derived from eps_pred and treated as constant; only the
// variance channel receives gradient (written into grad_var_interp if given).
double vlb_term(const Tensor& x0, const Tensor& x_t, int t, const Tensor& eps_pred,
                const Tensor& var_interp, const NoiseSchedule& s, Tensor* grad_var_interp = nullptr);

}  // namespace fsdiff
