#pragma once

#include "fsdiff/denoiser.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

namespace fsdiff {

struct FiniteDifferenceGrad {
  std::vector<std::size_t> coords;  // flat parameter indices
  std::vector<double> values;       // matching central-difference estimates
};

struct CoordinateSubset {
  std::size_t count;
  std::uint64_t seed;
};

class NonFiniteLossError : public std::runtime_error {
 public:
  NonFiniteLossError(std::size_t coord, const std::string& what) : std::runtime_error(what), coord_(coord) {}
  std::size_t coordinate() const { return coord_; }

 private:
  std::size_t coord_;
};

using ParamLossFn = std::function<double(const DenoiserParams&)>;

// Central differences (f(p + e) - f(p - e)) / 2e per coordinate, over all
// coordinates or a seeded random subset (sampled without replacement, sorted).
FiniteDifferenceGrad finite_difference_grad(const ParamLossFn& loss_fn, const DenoiserParams& params,
                                            double epsilon, std::optional<CoordinateSubset> subset = {});

// max_k |a_k - n_k| / max(|a_k|, |n_k|, floor) over the coordinates of fd.
double max_relative_error(const ParamGrads& analytic, const FiniteDifferenceGrad& fd, double floor = 1e-8);

}  // namespace fsdiff
