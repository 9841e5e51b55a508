#pragma once

#include "fsdiff/rng.hpp"
#include "fsdiff/tensor.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace fsdiff {

enum class ToyShapeKind { Disc, Square, Triangle, Cross };

// One procedurally drawn image: a foreground shape on a flat background.
struct ToyShape {
  ToyShapeKind kind = ToyShapeKind::Disc;
  double cx = 8.0, cy = 8.0;  // centre in pixels
  double radius = 4.0;
  int fg_hue = 0;  // index into the hue wheel
  int bg_hue = 4;
};

inline constexpr int kToyHues = 8;

// RGB in [-1, 1] for hue index h (evenly spaced on the HSV wheel).
std::array<double, 3> toy_color(int hue, double saturation, double value);

// Random shape parameters; fg and bg hues always differ.
ToyShape random_toy_shape(SeededRng& rng, std::size_t size);

// Renders to (3, size, size). With `textured`, the foreground is modulated by
// a fixed diagonal stripe pattern and the background by a fine checkerboard.
Tensor render_toy_shape(const ToyShape& s, std::size_t size, bool textured);

// Source domain: n plain two-colour shapes. Hues cycle so every hue is used
// as a foreground when n >= kToyHues.
Tensor make_toy_source(std::size_t n, std::size_t size, std::uint64_t seed);

// Target domain: n shapes drawn from the same distribution and rendered textured.
Tensor make_toy_target(std::size_t n, std::size_t size, std::uint64_t seed);

}  // namespace fsdiff
