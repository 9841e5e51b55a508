#include "fsdiff/rng.hpp"

#include <cmath>
#include <numbers>

namespace fsdiff {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

namespace {
std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}
}  // namespace

SeededRng SeededRng::child(std::string_view label) const {
  return SeededRng(splitmix64(splitmix64(seed_) ^ fnv1a(label)));
}

SeededRng SeededRng::child(std::uint64_t index) const {
  return SeededRng(splitmix64(splitmix64(seed_ + 0x632be59bd9b4e019ULL) ^ splitmix64(index)));
}

double SeededRng::uniform01() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::size_t SeededRng::uniform_index(std::size_t n) {
  if (n == 0) throw std::invalid_argument("uniform_index: n must be positive");
  // Rejection sampling keeps the result unbiased.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return static_cast<std::size_t>(x % n);
}

double SeededRng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform01();
  while (u1 <= 0.0) u1 = uniform01();
  const double u2 = uniform01();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

Tensor SeededRng::gaussian(const Shape& shape) {
  if (shape.empty()) throw ShapeError("gaussian_noise: shape must be nonempty");
  Tensor out(shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = normal();
  return out;
}

Tensor gaussian_noise(SeededRng& rng, const Shape& shape) { return rng.gaussian(shape); }

}  // namespace fsdiff
