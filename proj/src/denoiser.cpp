#include "fsdiff/denoiser.hpp"

#include <cmath>
#include <stdexcept>

namespace fsdiff {

void DenoiserConfig::validate() const {
  if (image_size == 0 || image_size % 2 != 0) throw std::invalid_argument("denoiser: image_size must be even");
  if (channels == 0) throw std::invalid_argument("denoiser: channels must be positive");
  if (base_width < 4) throw std::invalid_argument("denoiser: base_width must be >= 4");
  if (depth < 1) throw std::invalid_argument("denoiser: depth must be >= 1");
  if (image_size % (std::size_t{1} << (depth - 1)) != 0)
    throw std::invalid_argument("denoiser: image_size must be divisible by 2^(depth-1)");
  if (time_embed_dim < 2 || time_embed_dim % 2 != 0)
    throw std::invalid_argument("denoiser: time_embed_dim must be even and >= 2");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("denoiser: dropout must lie in [0, 1)");
}

void DenoiserParams::add(std::string name, Tensor value) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name " + name);
  index_.emplace(name, arrays_.size());
  names_.push_back(std::move(name));
  arrays_.push_back(std::move(value));
}

std::size_t DenoiserParams::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
  return it->second;
}

const Tensor& DenoiserParams::at(const std::string& name) const { return arrays_[index_of(name)]; }
Tensor& DenoiserParams::at(const std::string& name) { return arrays_[index_of(name)]; }

std::size_t DenoiserParams::num_scalars() const {
  std::size_t n = 0;
  for (const auto& a : arrays_) n += a.size();
  return n;
}

bool DenoiserParams::all_finite() const {
  for (const auto& a : arrays_)
    if (!a.all_finite()) return false;
  return true;
}

double DenoiserParams::get_flat(std::size_t k) const {
  for (const auto& a : arrays_) {
    if (k < a.size()) return a[k];
    k -= a.size();
  }
  throw std::out_of_range("flat parameter index out of range");
}

void DenoiserParams::set_flat(std::size_t k, double v) {
  for (auto& a : arrays_) {
    if (k < a.size()) {
      a[k] = v;
      return;
    }
    k -= a.size();
  }
  throw std::out_of_range("flat parameter index out of range");
}

ParamGrads zeros_like(const DenoiserParams& p) {
  ParamGrads g;
  for (std::size_t i = 0; i < p.count(); ++i) g.add(p.name(i), Tensor(p.array(i).shape()));
  return g;
}

namespace {

std::size_t level_width(const DenoiserConfig& c, std::size_t l) { return c.base_width << l; }

void add_random(DenoiserParams& p, SeededRng& rng, const std::string& name, Shape shape, std::size_t fan_in) {
  Tensor w = rng.gaussian(shape);
  w *= 1.0 / std::sqrt(static_cast<double>(fan_in));
  p.add(name, std::move(w));
}

void add_conv(DenoiserParams& p, SeededRng& rng, const std::string& name, std::size_t cout, std::size_t cin) {
  add_random(p, rng, name + ".w", {cout, cin, 3, 3}, cin * 9);
  p.add(name + ".b", Tensor({cout}));
}

void add_linear(DenoiserParams& p, SeededRng& rng, const std::string& name, std::size_t out, std::size_t in) {
  add_random(p, rng, name + ".w", {out, in}, in);
  p.add(name + ".b", Tensor({out}));
}

void add_block(DenoiserParams& p, SeededRng& rng, const std::string& name, std::size_t width, std::size_t te) {
  add_conv(p, rng, name + ".conv1", width, width);
  add_linear(p, rng, name + ".temb", width, te);
  add_conv(p, rng, name + ".conv2", width, width);
}

}  // namespace

DenoiserParams init_params(const DenoiserConfig& cfg, SeededRng& rng) {
  cfg.validate();
  DenoiserParams p;
  const std::size_t te = cfg.time_embed_dim;
  add_linear(p, rng, "temb.l1", te, te);
  add_linear(p, rng, "temb.l2", te, te);
  // Condition embedding is stored as (te, num_conditions) so a one-hot row selects a column.
  if (cfg.num_conditions > 0) add_random(p, rng, "cond.embed", {te, cfg.num_conditions}, te);
  add_conv(p, rng, "conv_in", cfg.base_width, cfg.channels);
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    const std::string tag = std::to_string(l);
    if (l > 0) add_conv(p, rng, "down" + tag, level_width(cfg, l), level_width(cfg, l - 1));
    add_block(p, rng, "enc" + tag, level_width(cfg, l), te);
  }
  for (std::size_t l = cfg.depth - 1; l >= 1; --l) {
    const std::string tag = std::to_string(l);
    const std::size_t w = level_width(cfg, l - 1);
    add_conv(p, rng, "up" + tag, w, level_width(cfg, l));
    add_conv(p, rng, "merge" + tag, w, 2 * w);
    add_block(p, rng, "dec" + tag, w, te);
  }
  add_conv(p, rng, "conv_out", cfg.out_channels(), cfg.base_width);
  return p;
}

bool params_match_config(const DenoiserParams& p, const DenoiserConfig& cfg) {
  SeededRng rng(0);
  const DenoiserParams ref = init_params(cfg, rng);
  if (ref.count() != p.count()) return false;
  for (std::size_t i = 0; i < ref.count(); ++i)
    if (ref.name(i) != p.name(i) || ref.array(i).shape() != p.array(i).shape()) return false;
  return true;
}

DenoiserParams clone_for_adaptation(const DenoiserParams& src) { return src; }

BoundParams bind(ad::Tape& tape, const DenoiserParams& p, bool trainable) {
  BoundParams b;
  b.params = &p;
  b.vars.reserve(p.count());
  for (std::size_t i = 0; i < p.count(); ++i)
    b.vars.push_back(trainable ? tape.parameter(p.array(i)) : tape.constant(p.array(i)));
  return b;
}

ParamGrads collect_grads(const ad::Tape& tape, const BoundParams& bound) {
  ParamGrads g;
  for (std::size_t i = 0; i < bound.vars.size(); ++i) g.add(bound.params->name(i), tape.grad(bound.vars[i]));
  return g;
}

Tensor timestep_embedding(std::span<const int> t, std::size_t dim) {
  const std::size_t half = dim / 2;
  Tensor out({t.size(), dim});
  for (std::size_t n = 0; n < t.size(); ++n)
    for (std::size_t k = 0; k < half; ++k) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
      const double arg = static_cast<double>(t[n]) * freq;
      out[n * dim + k] = std::sin(arg);
      out[n * dim + half + k] = std::cos(arg);
    }
  return out;
}

namespace {

struct Ctx {
  ad::Tape& tape;
  const BoundParams& p;
  const DenoiserConfig& cfg;
  SeededRng* rng;
};

ad::Var conv(Ctx& c, const std::string& name, ad::Var x) {
  return ad::conv2d(x, c.p.get(name + ".w"), c.p.get(name + ".b"));
}

ad::Var dropout(Ctx& c, ad::Var x) {
  if (!c.rng || c.cfg.dropout <= 0.0) return x;
  const double keep = 1.0 - c.cfg.dropout;
  Tensor mask(x.shape());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = c.rng->uniform01() < keep ? 1.0 / keep : 0.0;
  return ad::mask_mul(x, mask);
}

ad::Var block(Ctx& c, const std::string& name, ad::Var x, ad::Var temb) {
  ad::Var h = conv(c, name + ".conv1", ad::silu(x));
  ad::Var proj = ad::linear(temb, c.p.get(name + ".temb.w"), c.p.get(name + ".temb.b"));
  h = ad::add_channel_bias(h, proj);
  h = conv(c, name + ".conv2", dropout(c, ad::silu(h)));
  return ad::add(x, h);
}

}  // namespace

DenoiserGraph denoise_graph(ad::Tape& tape, const BoundParams& p, const DenoiserConfig& cfg, ad::Var x_t,
                            std::span<const int> t, std::span<const int> conds, SeededRng* dropout_rng) {
  const Shape& xs = x_t.shape();
  if (xs.size() != 4 || xs[1] != cfg.channels || xs[2] != cfg.image_size || xs[3] != cfg.image_size)
    throw ShapeError("denoiser: input " + shape_str(xs) + " does not match configured image " +
                     shape_str(cfg.image_shape()));
  const std::size_t n = xs[0];
  if (t.size() != n) throw ShapeError("denoiser: need one timestep per batch item");
  if (!conds.empty()) {
    if (cfg.num_conditions == 0) throw std::invalid_argument("denoiser: condition given to an unconditional model");
    if (conds.size() != 1 && conds.size() != n)
      throw ShapeError("denoiser: conditions must be one token or one per item");
    for (int c : conds)
      if (c < 0 || static_cast<std::size_t>(c) >= cfg.num_conditions)
        throw std::out_of_range("denoiser: condition token " + std::to_string(c) + " out of range");
  }
  Ctx c{tape, p, cfg, dropout_rng};

  ad::Var temb = tape.constant(timestep_embedding(t, cfg.time_embed_dim));
  temb = ad::silu(ad::linear(temb, p.get("temb.l1.w"), p.get("temb.l1.b")));
  temb = ad::silu(ad::linear(temb, p.get("temb.l2.w"), p.get("temb.l2.b")));
  if (!conds.empty()) {
    Tensor onehot({n, cfg.num_conditions});
    for (std::size_t i = 0; i < n; ++i)
      onehot[i * cfg.num_conditions + static_cast<std::size_t>(conds.size() == 1 ? conds[0] : conds[i])] = 1.0;
    temb = ad::add(temb, ad::linear_nobias(tape.constant(std::move(onehot)), p.get("cond.embed")));
  }

  ad::Var h = conv(c, "conv_in", x_t);
  std::vector<ad::Var> skips;
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    const std::string tag = std::to_string(l);
    if (l > 0) h = conv(c, "down" + tag, ad::avg_pool2(h));
    h = block(c, "enc" + tag, h, temb);
    skips.push_back(h);
  }
  for (std::size_t l = cfg.depth - 1; l >= 1; --l) {
    const std::string tag = std::to_string(l);
    h = conv(c, "up" + tag, ad::upsample2(h));
    h = conv(c, "merge" + tag, ad::concat_channels(h, skips[l - 1]));
    h = block(c, "dec" + tag, h, temb);
  }
  ad::Var out = conv(c, "conv_out", ad::silu(h));
  if (!cfg.variance_learning) return {out, std::nullopt};
  return {ad::slice_channels(out, 0, cfg.channels), ad::slice_channels(out, cfg.channels, cfg.channels)};
}

ModelOutput denoise_forward(const DenoiserParams& p, const DenoiserConfig& cfg, const Tensor& x_t,
                            std::span<const int> t, std::span<const int> conds) {
  ad::Tape tape(false);
  const BoundParams bound = bind(tape, p, false);
  const DenoiserGraph g = denoise_graph(tape, bound, cfg, tape.constant(x_t), t, conds, nullptr);
  ModelOutput out{g.eps.value(), std::nullopt};
  if (g.var_interp) out.var_interp = g.var_interp->value();
  return out;
}

DenoiseFn make_denoise_fn(const DenoiserParams& p, const DenoiserConfig& cfg) {
  return [&p, cfg](const Tensor& x, std::span<const int> t, std::optional<int> cond) {
    if (cond) {
      const int c = *cond;
      return denoise_forward(p, cfg, x, t, std::span<const int>(&c, 1));
    }
    return denoise_forward(p, cfg, x, t);
  };
}

}  // namespace fsdiff
