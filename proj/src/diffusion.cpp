#include "fsdiff/diffusion.hpp"

#include <cmath>
#include <numbers>

namespace fsdiff {

double NoiseSchedule::posterior_variance(int t) const {
  check_step(t);
  const auto i = static_cast<std::size_t>(t);
  return beta[i] * (1.0 - alpha_bar_prev(t)) / (1.0 - alpha_bar[i]);
}

double NoiseSchedule::posterior_log_variance_clipped(int t) const {
  check_step(t);
  if (t == 0) return T > 1 ? std::log(posterior_variance(1)) : std::log(beta[0]);
  return std::log(posterior_variance(t));
}

double NoiseSchedule::posterior_coef_x0(int t) const {
  check_step(t);
  const auto i = static_cast<std::size_t>(t);
  return beta[i] * std::sqrt(alpha_bar_prev(t)) / (1.0 - alpha_bar[i]);
}

double NoiseSchedule::posterior_coef_xt(int t) const {
  check_step(t);
  const auto i = static_cast<std::size_t>(t);
  return (1.0 - alpha_bar_prev(t)) * std::sqrt(alpha[i]) / (1.0 - alpha_bar[i]);
}

NoiseSchedule make_linear_schedule(int T, double beta_start, double beta_end) {
  if (T < 1) throw std::invalid_argument("make_linear_schedule: T must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    throw std::invalid_argument("make_linear_schedule: need 0 < beta_start <= beta_end < 1");
  NoiseSchedule s;
  s.T = T;
  s.beta.resize(static_cast<std::size_t>(T));
  s.alpha.resize(s.beta.size());
  s.alpha_bar.resize(s.beta.size());
  double prod = 1.0;
  for (int t = 0; t < T; ++t) {
    const auto i = static_cast<std::size_t>(t);
    s.beta[i] = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * t / (T - 1);
    s.alpha[i] = 1.0 - s.beta[i];
    prod *= s.alpha[i];
    s.alpha_bar[i] = prod;
  }
  return s;
}

Tensor forward_noise(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& s) {
  x0.check_same(eps, "forward_noise");
  s.check_step(t);
  const double ab = s.alpha_bar[static_cast<std::size_t>(t)];
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

Tensor predict_x0(const Tensor& x_t, const Tensor& eps_pred, int t, const NoiseSchedule& s) {
  x_t.check_same(eps_pred, "predict_x0");
  s.check_step(t);
  const double ab = s.alpha_bar[static_cast<std::size_t>(t)];
  if (!(ab > 0.0)) throw std::domain_error("predict_x0: alpha_bar must be positive");
  const double r = std::sqrt(ab);
  return x_t * (1.0 / r) - eps_pred * (std::sqrt(1.0 - ab) / r);
}

namespace {
template <typename F>
Tensor per_item(const Tensor& a, const Tensor& b, std::span<const int> t, F&& f) {
  a.check_same(b, "per-item diffusion op");
  if (a.rank() < 1 || a.dim(0) != t.size())
    throw ShapeError("per-item diffusion op: " + std::to_string(t.size()) + " timesteps for batch " +
                     shape_str(a.shape()));
  Tensor out(a.shape());
  for (std::size_t i = 0; i < t.size(); ++i) out.set_item(i, f(a.item(i), b.item(i), t[i]));
  return out;
}
}  // namespace

Tensor forward_noise_batch(const Tensor& x0, std::span<const int> t, const Tensor& eps,
                           const NoiseSchedule& s) {
  return per_item(x0, eps, t, [&](const Tensor& a, const Tensor& e, int ti) { return forward_noise(a, ti, e, s); });
}

Tensor predict_x0_batch(const Tensor& x_t, const Tensor& eps_pred, std::span<const int> t,
                        const NoiseSchedule& s) {
  return per_item(x_t, eps_pred, t, [&](const Tensor& a, const Tensor& e, int ti) { return predict_x0(a, e, ti, s); });
}

double learned_log_variance(const NoiseSchedule& s, int t, double v) {
  const double frac = 0.5 * (v + 1.0);
  const double max_log = std::log(s.beta[static_cast<std::size_t>(t)]);
  const double min_log = s.posterior_log_variance_clipped(t);
  return frac * max_log + (1.0 - frac) * min_log;
}

Tensor ancestral_sample_from(const DenoiseFn& model, std::optional<int> cond, const NoiseSchedule& s,
                             SeededRng& rng, Tensor x, const SamplerOptions& opts) {
  const std::size_t n = x.dim(0);
  std::vector<int> steps(n);
  for (int t = s.T - 1; t >= 0; --t) {
    std::fill(steps.begin(), steps.end(), t);
    const ModelOutput out = model(x, steps, cond);
    if (opts.variance == VarianceMode::Learned && !out.var_interp)
      throw SamplingError(t, "ancestral_sample: learned variance requested but model has no variance channel");
    Tensor x0 = predict_x0(x, out.eps, t, s);
    if (opts.clip_x0) x0.vec() = x0.vec().cwiseMax(-1.0).cwiseMin(1.0);
    Tensor mean = s.posterior_coef_x0(t) * x0 + s.posterior_coef_xt(t) * x;
    if (t > 0) {
      const Tensor z = rng.gaussian(x.shape());
      if (opts.variance == VarianceMode::FixedPosterior) {
        mean += std::sqrt(s.posterior_variance(t)) * z;
      } else {
        for (std::size_t i = 0; i < mean.size(); ++i)
          mean[i] += std::exp(0.5 * learned_log_variance(s, t, (*out.var_interp)[i])) * z[i];
      }
    }
    if (!mean.all_finite())
      throw SamplingError(t, "ancestral_sample: non-finite values at step t=" + std::to_string(t));
    x = std::move(mean);
  }
  return x;
}

Tensor ancestral_sample(const DenoiseFn& model, std::optional<int> cond, const NoiseSchedule& s,
                        SeededRng& rng, std::size_t n, const Shape& image_shape,
                        const SamplerOptions& opts) {
  Shape shape = image_shape;
  shape.insert(shape.begin(), n);
  Tensor x = rng.gaussian(shape);
  return ancestral_sample_from(model, cond, s, rng, std::move(x), opts);
}

double gaussian_kl(double mean1, double logvar1, double mean2, double logvar2) {
  return 0.5 * (-1.0 + logvar2 - logvar1 + std::exp(logvar1 - logvar2) +
                (mean1 - mean2) * (mean1 - mean2) * std::exp(-logvar2));
}

namespace {
constexpr double kBin = 1.0 / 255.0;
constexpr double kFloor = 1e-12;
double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }
double upper_cdf(double z) { return 0.5 * std::erfc(z / std::numbers::sqrt2); }
double lower_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }
}  // namespace

double discretized_gaussian_log_likelihood(double x, double mean, double logvar) {
  const double inv_std = std::exp(-0.5 * logvar);
  const double c = x - mean;
  const double plus = inv_std * (c + kBin), minus = inv_std * (c - kBin);
  if (x < -0.999) return std::log(std::max(lower_cdf(plus), kFloor));
  if (x > 0.999) return std::log(std::max(upper_cdf(minus), kFloor));
  return std::log(std::max(lower_cdf(plus) - lower_cdf(minus), kFloor));
}

double discretized_gaussian_log_likelihood_dlogvar(double x, double mean, double logvar) {
  const double inv_std = std::exp(-0.5 * logvar);
  const double c = x - mean;
  const double plus = inv_std * (c + kBin), minus = inv_std * (c - kBin);
  // d(plus)/d(logvar) = -plus/2, likewise for minus.
  const double dplus = normal_pdf(plus) * (-0.5 * plus);
  const double dminus = normal_pdf(minus) * (-0.5 * minus);
  if (x < -0.999) {
    const double p = lower_cdf(plus);
    return p > kFloor ? dplus / p : 0.0;
  }
  if (x > 0.999) {
    const double p = upper_cdf(minus);
    return p > kFloor ? -dminus / p : 0.0;
  }
  const double p = lower_cdf(plus) - lower_cdf(minus);
  return p > kFloor ? (dplus - dminus) / p : 0.0;
}

double vlb_term(const Tensor& x0, const Tensor& x_t, int t, const Tensor& eps_pred,
                const Tensor& var_interp, const NoiseSchedule& s, Tensor* grad_var_interp) {
  x0.check_same(x_t, "vlb_term");
  x0.check_same(eps_pred, "vlb_term");
  x0.check_same(var_interp, "vlb_term");
  s.check_step(t);
  const Tensor x0_pred = predict_x0(x_t, eps_pred, t, s);
  const double c0 = s.posterior_coef_x0(t), ct = s.posterior_coef_xt(t);
  const double dlv_dv = 0.5 * (std::log(s.beta[static_cast<std::size_t>(t)]) - s.posterior_log_variance_clipped(t));
  const double norm = 1.0 / (static_cast<double>(x0.size()) * std::numbers::ln2);
  if (grad_var_interp) *grad_var_interp = Tensor(x0.shape());

  double total = 0.0;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    const double model_mean = c0 * x0_pred[i] + ct * x_t[i];
    const double lv = learned_log_variance(s, t, var_interp[i]);
    double term, dterm;
    if (t > 0) {
      const double true_mean = c0 * x0[i] + ct * x_t[i];
      const double true_lv = s.posterior_log_variance_clipped(t);
      term = gaussian_kl(true_mean, true_lv, model_mean, lv);
      const double dm = true_mean - model_mean;
      dterm = 0.5 * (1.0 - std::exp(true_lv - lv) - dm * dm * std::exp(-lv));
    } else {
      term = -discretized_gaussian_log_likelihood(x0[i], model_mean, lv);
      dterm = -discretized_gaussian_log_likelihood_dlogvar(x0[i], model_mean, lv);
    }
    total += term;
    if (grad_var_interp) (*grad_var_interp)[i] = dterm * dlv_dv * norm;
  }
  return total * norm;
}

}  // namespace fsdiff
