#pragma once

#include "fsdiff/denoiser.hpp"
#include "fsdiff/diffusion.hpp"
#include "fsdiff/rng.hpp"
#include "fsdiff/tensor.hpp"

#include <doctest.h>

namespace ds = fsdiff;

namespace testing_support {

// Small enough for exhaustive finite differences.
inline ds::DenoiserConfig tiny_config(bool variance = false, std::size_t num_conditions = 0) {
  ds::DenoiserConfig c;
  c.image_size = 4;
  c.channels = 2;
  c.base_width = 4;
  c.depth = 2;
  c.time_embed_dim = 4;
  c.num_conditions = num_conditions;
  c.variance_learning = variance;
  c.dropout = 0.0;
  return c;
}

inline ds::NoiseSchedule tiny_schedule() { return ds::make_linear_schedule(10, 0.01, 0.3); }

inline ds::Tensor randn(std::uint64_t seed, const ds::Shape& shape) {
  ds::SeededRng rng(seed);
  return rng.gaussian(shape);
}

inline double max_abs_diff(const ds::Tensor& a, const ds::Tensor& b) {
  a.check_same(b, "max_abs_diff");
  return (a.vec() - b.vec()).cwiseAbs().maxCoeff();
}

}  // namespace testing_support
