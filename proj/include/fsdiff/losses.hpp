#pragma once

#include "fsdiff/denoiser.hpp"
#include "fsdiff/diffusion.hpp"

#include <optional>
#include <string>
#include <vector>

namespace fsdiff {

enum class AdaptationMode { Unconditional, Conditional };

std::string to_string(AdaptationMode m);
AdaptationMode adaptation_mode_from_string(const std::string& s);

// Unconditional: L_simple + l1 L_vlb + l2 L_img + l3 L_hf + l4 L_hfmse
// Conditional:   L_simple + l1 L_pr  + l2 L_img + l3 L_hf + l4 L_hfmse
struct LossWeights {
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  double lambda3 = 0.0;
  double lambda4 = 0.0;
  AdaptationMode mode = AdaptationMode::Unconditional;

  void validate() const;
  bool pairwise_active() const { return lambda2 > 0.0 || lambda3 > 0.0; }
  bool operator==(const LossWeights&) const = default;
};

struct LossReport {
  double total = 0.0;
  double simple = 0.0;
  double vlb = 0.0;
  double img = 0.0;
  double hf = 0.0;
  double hfmse = 0.0;
  double pr = 0.0;

  // Weighted sum of the components under w (uses vlb or pr depending on mode).
  double weighted_total(const LossWeights& w) const;
};

double l_simple(const Tensor& eps_pred, const Tensor& eps);
double l_hfmse(const Tensor& x0_pred_adapted, const Tensor& x0_train);
double prior_preservation_loss(const Tensor& eps_sou_out, const Tensor& eps_ada_out);

// One denoising batch: clean images, noises and per-item steps. In the
// unconditional objective source and adapted models denoise the same x_t, so
// items correspond 1:1. `cond` is set only when a conditional model is trained
// on a single-token dataset (pretraining the source domain).
struct DenoisingBatch {
  Tensor x0;
  Tensor eps;
  std::vector<int> t;
  std::optional<int> cond;
};

// Target-condition batch plus a batch drawn from the source-condition prior
// pool. Items of the two halves do not correspond to each other.
struct ConditionalBatch {
  Tensor x0;
  Tensor eps;
  std::vector<int> t;
  int target_cond = 1;

  Tensor prior_x0;
  Tensor prior_eps;
  std::vector<int> prior_t;
  int source_cond = 0;
};

struct LossOptions {
  bool compute_grad = true;
  // Dropout masks for the adapted model's forward passes; null disables dropout.
  SeededRng* dropout_rng = nullptr;
  // Also evaluate zero-weighted components for the report (off-tape).
  bool report_all_components = false;
};

struct LossResult {
  LossReport report;
  std::optional<ParamGrads> grads;  // w.r.t. the adapted (trainable) params only
};

// Source may be null when no source-dependent term is active (pretraining).
LossResult total_unconditional_loss(const DenoisingBatch& batch, const DenoiserParams* source,
                                    const DenoiserParams& adapted, const DenoiserConfig& cfg,
                                    const NoiseSchedule& s, const LossWeights& w,
                                    const LossOptions& opts = {});

LossResult total_conditional_loss(const ConditionalBatch& batch, const DenoiserParams& source,
                                  const DenoiserParams& adapted, const DenoiserConfig& cfg,
                                  const NoiseSchedule& s, const LossWeights& w,
                                  const LossOptions& opts = {});

}  // namespace fsdiff
