#pragma once

#include "fsdiff/autodiff.hpp"
#include "fsdiff/diffusion.hpp"
#include "fsdiff/rng.hpp"
#include "fsdiff/tensor.hpp"

#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace fsdiff {

// Small encoder-decoder eps-prediction network.
//
//   temb = silu(W2 silu(W1 sinusoid(t) + b1) + b2) [+ E onehot(cond)]
//   h    = conv_in(x)
//   level l = 0..depth-1 (width base*2^l): [pool, conv] for l > 0, then a
//            residual block x + conv2(drop(silu(conv1(silu(x)) + P temb)))
//   decoder mirrors the encoder: upsample, conv, concat skip, merge conv, block
//   out  = conv_out(silu(h)) -> C channels (2C with a variance channel)
struct DenoiserConfig {
  std::size_t image_size = 16;
  std::size_t channels = 3;
  std::size_t base_width = 16;
  std::size_t depth = 2;
  std::size_t time_embed_dim = 32;
  std::size_t num_conditions = 0;
  bool variance_learning = false;
  double dropout = 0.1;

  std::size_t out_channels() const { return variance_learning ? 2 * channels : channels; }
  Shape image_shape() const { return {channels, image_size, image_size}; }
  void validate() const;
  bool operator==(const DenoiserConfig&) const = default;
};

class DenoiserParams {
 public:
  void add(std::string name, Tensor value);

  std::size_t count() const { return arrays_.size(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  const Tensor& array(std::size_t i) const { return arrays_.at(i); }
  Tensor& array(std::size_t i) { return arrays_.at(i); }
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t index_of(const std::string& name) const;

  // Total scalar parameter count.
  std::size_t num_scalars() const;
  bool all_finite() const;

  // Flat views across all arrays in declaration order.
  double get_flat(std::size_t k) const;
  void set_flat(std::size_t k, double v);

  bool operator==(const DenoiserParams& o) const { return names_ == o.names_ && arrays_ == o.arrays_; }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> arrays_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Gradients share the layout of the params they belong to.
using ParamGrads = DenoiserParams;
ParamGrads zeros_like(const DenoiserParams& p);

DenoiserParams init_params(const DenoiserConfig& cfg, SeededRng& rng);

// True when names and shapes equal those init_params(cfg) would produce.
bool params_match_config(const DenoiserParams& p, const DenoiserConfig& cfg);

// Deep copy; the returned params are independent of src.
DenoiserParams clone_for_adaptation(const DenoiserParams& src);

// Params bound onto a tape, either as trainable leaves or as constants.
struct BoundParams {
  const DenoiserParams* params = nullptr;
  std::vector<ad::Var> vars;
  ad::Var get(const std::string& name) const { return vars.at(params->index_of(name)); }
};

BoundParams bind(ad::Tape& tape, const DenoiserParams& p, bool trainable);
ParamGrads collect_grads(const ad::Tape& tape, const BoundParams& bound);

struct DenoiserGraph {
  ad::Var eps;
  std::optional<ad::Var> var_interp;
};

// Dropout is applied only when dropout_rng is non-null and cfg.dropout > 0.
// conds: empty (no condition), one token for the whole batch, or one per item.
DenoiserGraph denoise_graph(ad::Tape& tape, const BoundParams& p, const DenoiserConfig& cfg, ad::Var x_t,
                            std::span<const int> t, std::span<const int> conds,
                            SeededRng* dropout_rng = nullptr);

// Inference-mode forward pass (no dropout, no gradients).
ModelOutput denoise_forward(const DenoiserParams& p, const DenoiserConfig& cfg, const Tensor& x_t,
                            std::span<const int> t, std::span<const int> conds = {});

// Adapter for the sampler.
DenoiseFn make_denoise_fn(const DenoiserParams& p, const DenoiserConfig& cfg);

Tensor timestep_embedding(std::span<const int> t, std::size_t dim);

}  // namespace fsdiff
