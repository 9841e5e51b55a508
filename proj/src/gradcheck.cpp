#include "fsdiff/gradcheck.hpp"

#include "fsdiff/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fsdiff {

FiniteDifferenceGrad finite_difference_grad(const ParamLossFn& loss_fn, const DenoiserParams& params,
                                            double epsilon, std::optional<CoordinateSubset> subset) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("finite_difference_grad: epsilon must be positive");
  const std::size_t total = params.num_scalars();
  FiniteDifferenceGrad out;
  if (subset && subset->count < total) {
    // Partial Fisher-Yates over the index range.
    std::vector<std::size_t> idx(total);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    SeededRng rng(subset->seed);
    for (std::size_t i = 0; i < subset->count; ++i) std::swap(idx[i], idx[i + rng.uniform_index(total - i)]);
    out.coords.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(subset->count));
    std::sort(out.coords.begin(), out.coords.end());
  } else {
    out.coords.resize(total);
    std::iota(out.coords.begin(), out.coords.end(), std::size_t{0});
  }

  DenoiserParams probe = params;
  out.values.reserve(out.coords.size());
  for (std::size_t k : out.coords) {
    const double orig = params.get_flat(k);
    probe.set_flat(k, orig + epsilon);
    const double fp = loss_fn(probe);
    probe.set_flat(k, orig - epsilon);
    const double fm = loss_fn(probe);
    probe.set_flat(k, orig);
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NonFiniteLossError(k, "finite_difference_grad: non-finite loss at coordinate " + std::to_string(k));
    out.values.push_back((fp - fm) / (2.0 * epsilon));
  }
  return out;
}

double max_relative_error(const ParamGrads& analytic, const FiniteDifferenceGrad& fd, double floor) {
  double worst = 0.0;
  for (std::size_t i = 0; i < fd.coords.size(); ++i) {
    const double a = analytic.get_flat(fd.coords[i]);
    const double n = fd.values[i];
    const double denom = std::max({std::abs(a), std::abs(n), floor});
    worst = std::max(worst, std::abs(a - n) / denom);
  }
  return worst;
}

}  // namespace fsdiff
