#pragma once

#include "fsdiff/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace fsdiff {

// Single-level orthonormal Haar transform over the last two axes (height,
// width); any leading axes are treated as independent planes.
//
// Filters: L = [1, 1]/sqrt2 (low), H = [-1, 1]/sqrt2 (high). Band "XY" applies
// X along height and Y along width, so for a 2x2 block [[a, b], [c, d]]
// (rows = height):
//   LL = ( a + b + c + d) / 2
//   LH = (-a + b - c + d) / 2   high along width
//   HL = (-a - b + c + d) / 2   high along height
//   HH = ( a - b - c + d) / 2
template <typename Scalar>
struct FrequencyBands {
  TensorGrid<Scalar> ll, lh, hl, hh;
};

namespace wavelet_detail {

inline void check_even(const Shape& s) {
  if (s.size() < 2) throw ShapeError("haar: input needs at least 2 dimensions");
  const std::size_t h = s[s.size() - 2], w = s[s.size() - 1];
  if (h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0)
    throw ShapeError("haar: height and width must be even and nonzero, got " + shape_str(s));
}

inline Shape half_shape(Shape s) {
  s[s.size() - 2] /= 2;
  s[s.size() - 1] /= 2;
  return s;
}

// Calls f(plane, y, x, a, b, c, d offsets) for each 2x2 block.
template <typename F>
void for_each_block(const Shape& full, F&& f) {
  const std::size_t h = full[full.size() - 2], w = full[full.size() - 1];
  const std::size_t planes = shape_numel(full) / (h * w);
  const std::size_t hh = h / 2, hw = w / 2;
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < hh; ++y)
      for (std::size_t x = 0; x < hw; ++x) {
        const std::size_t a = p * h * w + (2 * y) * w + 2 * x;
        f(p * hh * hw + y * hw + x, a, a + 1, a + w, a + w + 1);
      }
}

}  // namespace wavelet_detail

template <typename Scalar>
FrequencyBands<Scalar> haar_decompose(const TensorGrid<Scalar>& img) {
  using namespace wavelet_detail;
  check_even(img.shape());
  const Shape hs = half_shape(img.shape());
  FrequencyBands<Scalar> out{TensorGrid<Scalar>(hs), TensorGrid<Scalar>(hs), TensorGrid<Scalar>(hs),
                             TensorGrid<Scalar>(hs)};
  const Scalar half(0.5);
  for_each_block(img.shape(), [&](std::size_t o, std::size_t ia, std::size_t ib, std::size_t ic,
                                  std::size_t id) {
    const Scalar a = img[ia], b = img[ib], c = img[ic], d = img[id];
    out.ll[o] = half * (a + b + c + d);
    out.lh[o] = half * (-a + b - c + d);
    out.hl[o] = half * (-a - b + c + d);
    out.hh[o] = half * (a - b - c + d);
  });
  return out;
}

template <typename Scalar>
TensorGrid<Scalar> haar_reconstruct(const FrequencyBands<Scalar>& bands) {
  using namespace wavelet_detail;
  const Shape& hs = bands.ll.shape();
  if (bands.lh.shape() != hs || bands.hl.shape() != hs || bands.hh.shape() != hs)
    throw ShapeError("haar_reconstruct: bands must share one shape");
  if (hs.size() < 2) throw ShapeError("haar_reconstruct: bands need at least 2 dimensions");
  Shape full = hs;
  full[full.size() - 2] *= 2;
  full[full.size() - 1] *= 2;
  TensorGrid<Scalar> img(full);
  const Scalar half(0.5);
  for_each_block(full, [&](std::size_t o, std::size_t ia, std::size_t ib, std::size_t ic,
                           std::size_t id) {
    const Scalar ll = bands.ll[o], lh = bands.lh[o], hl = bands.hl[o], hh = bands.hh[o];
    img[ia] = half * (ll - lh - hl + hh);
    img[ib] = half * (ll + lh - hl - hh);
    img[ic] = half * (ll - lh + hl - hh);
    img[id] = half * (ll + lh + hl + hh);
  });
  return img;
}

// hf = LH + HL + HH, i.e. (-a - b - c + 3d) / 2 per block.
template <typename Scalar>
TensorGrid<Scalar> high_frequency(const TensorGrid<Scalar>& img) {
  using namespace wavelet_detail;
  check_even(img.shape());
  TensorGrid<Scalar> out(half_shape(img.shape()));
  const Scalar half(0.5), three(3);
  for_each_block(img.shape(), [&](std::size_t o, std::size_t ia, std::size_t ib, std::size_t ic,
                                  std::size_t id) {
    out[o] = half * (three * img[id] - img[ia] - img[ib] - img[ic]);
  });
  return out;
}

// Adjoint of high_frequency: maps a gradient on the hf grid back to the image grid.
template <typename Scalar>
TensorGrid<Scalar> high_frequency_adjoint(const TensorGrid<Scalar>& g, const Shape& image_shape) {
  using namespace wavelet_detail;
  check_even(image_shape);
  if (half_shape(image_shape) != g.shape())
    throw ShapeError("high_frequency_adjoint: gradient shape " + shape_str(g.shape()) +
                     " does not match image " + shape_str(image_shape));
  TensorGrid<Scalar> out(image_shape);
  const Scalar half(0.5), three_half(1.5);
  for_each_block(image_shape, [&](std::size_t o, std::size_t ia, std::size_t ib, std::size_t ic,
                                  std::size_t id) {
    out[ia] = -half * g[o];
    out[ib] = -half * g[o];
    out[ic] = -half * g[o];
    out[id] = three_half * g[o];
  });
  return out;
}

}  // namespace fsdiff
