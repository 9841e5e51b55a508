#pragma once

#include "fsdiff/tensor.hpp"

#include <cstdint>
#include <random>
#include <string_view>

namespace fsdiff {

// Seeded generator built on std::mt19937_64, whose output sequence is fixed by
// the C++ standard. Distributions are implemented here rather than taken from
// <random>, since the standard leaves their algorithms unspecified:
//   uniform01: top 53 bits of one engine word scaled by 2^-53
//   normal:    Box-Muller on two uniforms, both outputs used in order
// Child streams hash (seed, label) through splitmix64.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  SeededRng child(std::string_view label) const;
  SeededRng child(std::uint64_t index) const;

  std::uint64_t next_u64() {
    ++counter_;
    return engine_();
  }
  double uniform01();
  // Integer in [0, n).
  std::size_t uniform_index(std::size_t n);
  double normal();

  Tensor gaussian(const Shape& shape);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

// i.i.d. standard normal tensor drawn from rng.
Tensor gaussian_noise(SeededRng& rng, const Shape& shape);

}  // namespace fsdiff
