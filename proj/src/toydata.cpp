#include "fsdiff/toydata.hpp"

#include "fsdiff/rng.hpp"

#include <array>
#include <cmath>

namespace fsdiff {

std::array<double, 3> toy_color(int hue, double saturation, double value) {
  const double h = 6.0 * static_cast<double>(((hue % kToyHues) + kToyHues) % kToyHues) / kToyHues;
  const int sector = static_cast<int>(h);
  const double f = h - sector;
  const double p = value * (1 - saturation), q = value * (1 - saturation * f), t = value * (1 - saturation * (1 - f));
  std::array<double, 3> rgb;
  switch (sector) {
    case 0: rgb = {value, t, p}; break;
    case 1: rgb = {q, value, p}; break;
    case 2: rgb = {p, value, t}; break;
    case 3: rgb = {p, q, value}; break;
    case 4: rgb = {t, p, value}; break;
    default: rgb = {value, p, q}; break;
  }
  for (double& c : rgb) c = 2.0 * c - 1.0;
  return rgb;
}

ToyShape random_toy_shape(SeededRng& rng, std::size_t size) {
  const double s = static_cast<double>(size);
  ToyShape sh;
  sh.kind = static_cast<ToyShapeKind>(rng.uniform_index(4));
  sh.radius = s * (0.2 + 0.12 * rng.uniform01());
  sh.cx = sh.radius + (s - 2 * sh.radius) * rng.uniform01();
  sh.cy = sh.radius + (s - 2 * sh.radius) * rng.uniform01();
  sh.fg_hue = static_cast<int>(rng.uniform_index(kToyHues));
  sh.bg_hue = (sh.fg_hue + 1 + static_cast<int>(rng.uniform_index(kToyHues - 1))) % kToyHues;
  return sh;
}

namespace {

bool inside(const ToyShape& s, double x, double y) {
  const double dx = x - s.cx, dy = y - s.cy, r = s.radius;
  switch (s.kind) {
    case ToyShapeKind::Disc: return dx * dx + dy * dy <= r * r;
    case ToyShapeKind::Square: return std::abs(dx) <= 0.8 * r && std::abs(dy) <= 0.8 * r;
    case ToyShapeKind::Triangle: return dy <= r && dy >= -r && std::abs(dx) <= 0.5 * (dy + r);
    case ToyShapeKind::Cross: return (std::abs(dx) <= 0.35 * r && std::abs(dy) <= r) || (std::abs(dy) <= 0.35 * r && std::abs(dx) <= r);
  }
  return false;
}

}  // namespace

Tensor render_toy_shape(const ToyShape& s, std::size_t size, bool textured) {
  const auto fg = toy_color(s.fg_hue, 0.85, 0.95);
  const auto bg = toy_color(s.bg_hue, 0.6, 0.45);
  Tensor img({3, size, size});
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const bool in = inside(s, static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5);
      double mod = 1.0;
      if (textured) mod = in ? (((x + y) / 2) % 2 ? 0.35 : 1.0) : (((x ^ y) & 1) ? 0.6 : 1.0);
      const auto& col = in ? fg : bg;
      for (std::size_t c = 0; c < 3; ++c) img[(c * size + y) * size + x] = mod * (col[c] + 1.0) - 1.0;
    }
  return img;
}

Tensor make_toy_source(std::size_t n, std::size_t size, std::uint64_t seed) {
  SeededRng rng = SeededRng(seed).child("toy-source");
  std::vector<Tensor> items;
  for (std::size_t i = 0; i < n; ++i) {
    ToyShape s = random_toy_shape(rng, size);
    s.fg_hue = static_cast<int>(i % kToyHues);
    if (s.bg_hue == s.fg_hue) s.bg_hue = (s.bg_hue + kToyHues / 2) % kToyHues;
    items.push_back(render_toy_shape(s, size, false));
  }
  return stack(items);
}

Tensor make_toy_target(std::size_t n, std::size_t size, std::uint64_t seed) {
  SeededRng rng = SeededRng(seed).child("toy-target");
  std::vector<Tensor> items;
  for (std::size_t i = 0; i < n; ++i) items.push_back(render_toy_shape(random_toy_shape(rng, size), size, true));
  return stack(items);
}

}  // namespace fsdiff
