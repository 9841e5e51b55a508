#include "fsdiff/losses.hpp"

#include "fsdiff/similarity.hpp"
#include "fsdiff/wavelet.hpp"

#include <cmath>
#include <stdexcept>

namespace fsdiff {

std::string to_string(AdaptationMode m) {
  return m == AdaptationMode::Unconditional ? "unconditional" : "conditional";
}

AdaptationMode adaptation_mode_from_string(const std::string& s) {
  if (s == "unconditional") return AdaptationMode::Unconditional;
  if (s == "conditional") return AdaptationMode::Conditional;
  throw std::invalid_argument("unknown adaptation mode '" + s + "'");
}

void LossWeights::validate() const {
  for (double l : {lambda1, lambda2, lambda3, lambda4})
    if (!(l >= 0.0) || !std::isfinite(l)) throw std::invalid_argument("loss weights must be finite and >= 0");
}

double LossReport::weighted_total(const LossWeights& w) const {
  const double first = w.mode == AdaptationMode::Unconditional ? vlb : pr;
  return simple + w.lambda1 * first + w.lambda2 * img + w.lambda3 * hf + w.lambda4 * hfmse;
}

double l_simple(const Tensor& eps_pred, const Tensor& eps) {
  eps_pred.check_same(eps, "l_simple");
  return (eps_pred.vec() - eps.vec()).squaredNorm() / static_cast<double>(eps.size());
}

double l_hfmse(const Tensor& x0_pred_adapted, const Tensor& x0_train) {
  x0_pred_adapted.check_same(x0_train, "l_hfmse");
  return l_simple(high_frequency(x0_pred_adapted), high_frequency(x0_train));
}

double prior_preservation_loss(const Tensor& eps_sou_out, const Tensor& eps_ada_out) {
  eps_sou_out.check_same(eps_ada_out, "prior_preservation_loss");
  return l_simple(eps_ada_out, eps_sou_out);
}

namespace {

struct X0Coefs {
  std::vector<double> inv_sqrt_ab, neg_ratio;
};

X0Coefs x0_coefs(std::span<const int> t, const NoiseSchedule& s) {
  X0Coefs c;
  for (int ti : t) {
    s.check_step(ti);
    const double ab = s.alpha_bar[static_cast<std::size_t>(ti)];
    c.inv_sqrt_ab.push_back(1.0 / std::sqrt(ab));
    c.neg_ratio.push_back(-std::sqrt(1.0 - ab) / std::sqrt(ab));
  }
  return c;
}

ad::Var x0_prediction(ad::Var x_t, ad::Var eps, std::span<const int> t, const NoiseSchedule& s) {
  const X0Coefs c = x0_coefs(t, s);
  return ad::item_lincomb(x_t, eps, c.inv_sqrt_ab, c.neg_ratio);
}

void check_batch(const Tensor& x0, const Tensor& eps, std::span<const int> t, const DenoiserConfig& cfg,
                 const char* what) {
  x0.check_same(eps, what);
  if (x0.rank() != 4 || x0.dim(0) != t.size())
    throw ShapeError(std::string(what) + ": batch " + shape_str(x0.shape()) + " with " +
                     std::to_string(t.size()) + " timesteps");
  if (Shape(x0.shape().begin() + 1, x0.shape().end()) != cfg.image_shape())
    throw ShapeError(std::string(what) + ": images do not match the model configuration");
}

// Averaged vlb over items as a tape node feeding gradient into the variance channel.
ad::Var vlb_node(ad::Tape& tape, const Tensor& x0, const Tensor& x_t, std::span<const int> t, ad::Var eps,
                 ad::Var var_interp, const NoiseSchedule& s) {
  const std::size_t n = t.size();
  Tensor grad(var_interp.shape());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor gi;
    total += vlb_term(x0.item(i), x_t.item(i), t[i], eps.value().item(i), var_interp.value().item(i), s, &gi);
    grad.set_item(i, gi * (1.0 / static_cast<double>(n)));
  }
  return tape.push(Tensor({1}, {total / static_cast<double>(n)}), {var_interp},
                   [&tape, var_interp, grad](const Tensor& g) { tape.accumulate(var_interp, grad * g[0]); });
}

LossResult finish(ad::Tape& tape, const std::vector<ad::Var>& terms, const std::vector<double>& weights,
                  const BoundParams& adapted, LossReport report, bool compute_grad) {
  const ad::Var total = ad::weighted_sum(terms, weights);
  report.total = total.value()[0];
  LossResult r{report, std::nullopt};
  if (!std::isfinite(report.total)) throw std::runtime_error("loss is not finite");
  if (compute_grad) {
    tape.backward(total);
    r.grads = collect_grads(tape, adapted);
  }
  return r;
}

}  // namespace

LossResult total_unconditional_loss(const DenoisingBatch& batch, const DenoiserParams* source,
                                    const DenoiserParams& adapted, const DenoiserConfig& cfg,
                                    const NoiseSchedule& s, const LossWeights& w, const LossOptions& opts) {
  w.validate();
  check_batch(batch.x0, batch.eps, batch.t, cfg, "total_unconditional_loss");
  const bool want_vlb = w.lambda1 > 0.0;
  if (want_vlb && !cfg.variance_learning)
    throw std::invalid_argument("total_unconditional_loss: lambda1 > 0 needs a variance-learning model");
  const bool need_x0 = w.lambda2 > 0.0 || w.lambda3 > 0.0 || w.lambda4 > 0.0 || opts.report_all_components;
  const bool need_source = w.lambda2 > 0.0 || w.lambda3 > 0.0 || opts.report_all_components;
  if (need_source && !source) throw std::invalid_argument("total_unconditional_loss: source model required");
  if (w.pairwise_active() && batch.t.size() < 2)
    throw std::invalid_argument("total_unconditional_loss: pairwise terms need a batch of at least 2");

  ad::Tape tape(opts.compute_grad);
  const BoundParams ada = bind(tape, adapted, true);
  const Tensor x_t_val = forward_noise_batch(batch.x0, batch.t, batch.eps, s);
  const ad::Var x_t = tape.constant(x_t_val);
  std::span<const int> conds;
  if (batch.cond) conds = std::span<const int>(&*batch.cond, 1);
  const DenoiserGraph g = denoise_graph(tape, ada, cfg, x_t, batch.t, conds, opts.dropout_rng);

  LossReport report;
  std::vector<ad::Var> terms;
  std::vector<double> weights;

  const ad::Var simple = ad::mse(g.eps, tape.constant(batch.eps));
  report.simple = simple.value()[0];
  terms.push_back(simple);
  weights.push_back(1.0);

  if (want_vlb) {
    if (!g.var_interp) throw std::logic_error("variance channel missing");
    const ad::Var vlb = vlb_node(tape, batch.x0, x_t_val, batch.t, g.eps, *g.var_interp, s);
    report.vlb = vlb.value()[0];
    terms.push_back(vlb);
    weights.push_back(w.lambda1);
  }

  if (need_x0) {
    const ad::Var x0_ada = x0_prediction(x_t, g.eps, batch.t, s);
    const ad::Var hf_ada = ad::high_frequency(x0_ada);
    if (need_source && batch.t.size() >= 2) {
      const ModelOutput src = denoise_forward(*source, cfg, x_t_val, batch.t, conds);
      const ad::Var x0_sou = tape.constant(predict_x0_batch(x_t_val, src.eps, batch.t, s));
      const ad::Var img = ad::pairwise_similarity_kl(x0_sou, x0_ada);
      const ad::Var hf = ad::pairwise_similarity_kl(ad::high_frequency(x0_sou), hf_ada);
      report.img = img.value()[0];
      report.hf = hf.value()[0];
      if (w.lambda2 > 0.0) {
        terms.push_back(img);
        weights.push_back(w.lambda2);
      }
      if (w.lambda3 > 0.0) {
        terms.push_back(hf);
        weights.push_back(w.lambda3);
      }
    }
    const ad::Var hfmse = ad::mse(hf_ada, tape.constant(high_frequency(batch.x0)));
    report.hfmse = hfmse.value()[0];
    if (w.lambda4 > 0.0) {
      terms.push_back(hfmse);
      weights.push_back(w.lambda4);
    }
  }
  return finish(tape, terms, weights, ada, report, opts.compute_grad);
}

LossResult total_conditional_loss(const ConditionalBatch& batch, const DenoiserParams& source,
                                  const DenoiserParams& adapted, const DenoiserConfig& cfg,
                                  const NoiseSchedule& s, const LossWeights& w, const LossOptions& opts) {
  w.validate();
  if (cfg.num_conditions < 2)
    throw std::invalid_argument("total_conditional_loss: model needs at least 2 condition tokens");
  check_batch(batch.x0, batch.eps, batch.t, cfg, "total_conditional_loss (target)");
  const bool need_prior = w.lambda1 > 0.0 || w.pairwise_active() || opts.report_all_components;
  if (need_prior) check_batch(batch.prior_x0, batch.prior_eps, batch.prior_t, cfg, "total_conditional_loss (prior)");
  if (w.pairwise_active() && (batch.t.size() < 2 || batch.prior_t.size() != batch.t.size()))
    throw std::invalid_argument("total_conditional_loss: pairwise terms need equal target/prior batches of >= 2");

  ad::Tape tape(opts.compute_grad);
  const BoundParams ada = bind(tape, adapted, true);
  const Tensor x_t_val = forward_noise_batch(batch.x0, batch.t, batch.eps, s);
  const ad::Var x_t = tape.constant(x_t_val);
  const int tgt = batch.target_cond, src_c = batch.source_cond;
  const DenoiserGraph g = denoise_graph(tape, ada, cfg, x_t, batch.t, std::span<const int>(&tgt, 1), opts.dropout_rng);

  LossReport report;
  std::vector<ad::Var> terms;
  std::vector<double> weights;

  const ad::Var simple = ad::mse(g.eps, tape.constant(batch.eps));
  report.simple = simple.value()[0];
  terms.push_back(simple);
  weights.push_back(1.0);

  const ad::Var x0_tgt = x0_prediction(x_t, g.eps, batch.t, s);
  const ad::Var hf_tgt = ad::high_frequency(x0_tgt);

  if (need_prior) {
    const Tensor xp_val = forward_noise_batch(batch.prior_x0, batch.prior_t, batch.prior_eps, s);
    const ad::Var xp = tape.constant(xp_val);
    const DenoiserGraph gp =
        denoise_graph(tape, ada, cfg, xp, batch.prior_t, std::span<const int>(&src_c, 1), opts.dropout_rng);
    const ModelOutput sou = denoise_forward(source, cfg, xp_val, batch.prior_t, std::span<const int>(&src_c, 1));
    const ad::Var pr = ad::mse(gp.eps, tape.constant(sou.eps));
    report.pr = pr.value()[0];
    if (w.lambda1 > 0.0) {
      terms.push_back(pr);
      weights.push_back(w.lambda1);
    }
    if (batch.prior_t.size() == batch.t.size() && batch.t.size() >= 2) {
      const ad::Var x0_pr = x0_prediction(xp, gp.eps, batch.prior_t, s);
      const ad::Var img = ad::pairwise_similarity_kl(x0_pr, x0_tgt);
      const ad::Var hf = ad::pairwise_similarity_kl(ad::high_frequency(x0_pr), hf_tgt);
      report.img = img.value()[0];
      report.hf = hf.value()[0];
      if (w.lambda2 > 0.0) {
        terms.push_back(img);
        weights.push_back(w.lambda2);
      }
      if (w.lambda3 > 0.0) {
        terms.push_back(hf);
        weights.push_back(w.lambda3);
      }
    }
  }

  const ad::Var hfmse = ad::mse(hf_tgt, tape.constant(high_frequency(batch.x0)));
  report.hfmse = hfmse.value()[0];
  if (w.lambda4 > 0.0) {
    terms.push_back(hfmse);
    weights.push_back(w.lambda4);
  }
  return finish(tape, terms, weights, ada, report, opts.compute_grad);
}

}  // namespace fsdiff
