#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fsdiff {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// Dense row-major n-d array. Arithmetic is shape-checked: there is no implicit
// broadcasting, mismatched operands throw ShapeError.
template <typename Scalar>
class TensorGrid {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  TensorGrid() = default;
  explicit TensorGrid(Shape shape) : shape_(std::move(shape)) {
    data_.setZero(static_cast<Eigen::Index>(shape_numel(shape_)));
  }
  TensorGrid(Shape shape, Scalar fill) : shape_(std::move(shape)) {
    data_.setConstant(static_cast<Eigen::Index>(shape_numel(shape_)), fill);
  }
  TensorGrid(Shape shape, Vector data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<std::size_t>(data_.size()) != shape_numel(shape_))
      throw ShapeError("TensorGrid: data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
  }
  TensorGrid(Shape shape, std::initializer_list<Scalar> values)
      : TensorGrid(std::move(shape), Vector(Eigen::Map<const Vector>(
                                         values.begin(), static_cast<Eigen::Index>(values.size())))) {}

  static TensorGrid zeros(Shape shape) { return TensorGrid(std::move(shape)); }
  static TensorGrid constant(Shape shape, Scalar v) { return TensorGrid(std::move(shape), v); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return static_cast<std::size_t>(data_.size()); }
  bool empty() const { return data_.size() == 0; }

  Vector& vec() { return data_; }
  const Vector& vec() const { return data_; }
  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  Scalar& operator[](std::size_t i) { return data_[static_cast<Eigen::Index>(i)]; }
  Scalar operator[](std::size_t i) const { return data_[static_cast<Eigen::Index>(i)]; }

  // (n, c, h, w) accessor for rank-4 image batches.
  Scalar& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[static_cast<Eigen::Index>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  Scalar at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[static_cast<Eigen::Index>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }

  TensorGrid reshaped(Shape shape) const {
    if (shape_numel(shape) != size())
      throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(shape));
    return TensorGrid(std::move(shape), data_);
  }

  // Leading-axis item i as a tensor of the remaining shape.
  TensorGrid item(std::size_t i) const {
    if (shape_.empty() || i >= shape_[0]) throw ShapeError("item index out of range");
    Shape sub(shape_.begin() + 1, shape_.end());
    const auto n = static_cast<Eigen::Index>(shape_numel(sub));
    return TensorGrid(std::move(sub), Vector(data_.segment(static_cast<Eigen::Index>(i) * n, n)));
  }
  void set_item(std::size_t i, const TensorGrid& v) {
    Shape sub(shape_.begin() + 1, shape_.end());
    if (sub != v.shape()) throw ShapeError("set_item: " + shape_str(v.shape()) + " into " + shape_str(shape_));
    const auto n = static_cast<Eigen::Index>(v.size());
    data_.segment(static_cast<Eigen::Index>(i) * n, n) = v.vec();
  }

  bool all_finite() const { return data_.allFinite(); }

  TensorGrid& operator+=(const TensorGrid& o) { check_same(o, "+="); data_ += o.data_; return *this; }
  TensorGrid& operator-=(const TensorGrid& o) { check_same(o, "-="); data_ -= o.data_; return *this; }
  TensorGrid& operator*=(Scalar s) { data_ *= s; return *this; }

  friend TensorGrid operator+(TensorGrid a, const TensorGrid& b) { return a += b; }
  friend TensorGrid operator-(TensorGrid a, const TensorGrid& b) { return a -= b; }
  friend TensorGrid operator*(TensorGrid a, Scalar s) { return a *= s; }
  friend TensorGrid operator*(Scalar s, TensorGrid a) { return a *= s; }

  friend bool operator==(const TensorGrid& a, const TensorGrid& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

  void check_same(const TensorGrid& o, const char* what) const {
    if (shape_ != o.shape_)
      throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(shape_) + " vs " +
                       shape_str(o.shape_));
  }

 private:
  Shape shape_;
  Vector data_;
};

using Tensor = TensorGrid<double>;

template <typename Scalar>
TensorGrid<Scalar> hadamard(const TensorGrid<Scalar>& a, const TensorGrid<Scalar>& b) {
  a.check_same(b, "hadamard");
  return TensorGrid<Scalar>(a.shape(), a.vec().cwiseProduct(b.vec()));
}

// Stacks equally shaped tensors along a new leading axis.
template <typename Scalar>
TensorGrid<Scalar> stack(const std::vector<TensorGrid<Scalar>>& items) {
  if (items.empty()) throw ShapeError("stack of empty list");
  Shape shape = items.front().shape();
  shape.insert(shape.begin(), items.size());
  TensorGrid<Scalar> out(shape);
  for (std::size_t i = 0; i < items.size(); ++i) out.set_item(i, items[i]);
  return out;
}

template <typename Scalar>
std::vector<TensorGrid<Scalar>> unstack(const TensorGrid<Scalar>& batch) {
  std::vector<TensorGrid<Scalar>> out;
  out.reserve(batch.dim(0));
  for (std::size_t i = 0; i < batch.dim(0); ++i) out.push_back(batch.item(i));
  return out;
}

// Mirror along the width axis (last dimension).
template <typename Scalar>
TensorGrid<Scalar> flip_horizontal(const TensorGrid<Scalar>& img) {
  if (img.rank() < 1) throw ShapeError("flip_horizontal needs rank >= 1");
  TensorGrid<Scalar> out(img.shape());
  const std::size_t w = img.shape().back();
  const std::size_t rows = img.size() / w;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t x = 0; x < w; ++x) out[r * w + x] = img[r * w + (w - 1 - x)];
  return out;
}

}  // namespace fsdiff
