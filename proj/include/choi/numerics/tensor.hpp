#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace choi {

using Vector = Eigen::VectorXd;
/// Column-major; in batched layers each column is one sample.
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

/// Dense row-major array of doubles. Rank-3 tensors of shape (C, H, W) double
/// as feature grids.
class Tensor {
 public:
  // Full SIMD alignment keeps Eigen's reduction order, and so every result
  // bit, independent of where the allocator happens to place the buffer.
  using Storage = std::vector<double, Eigen::aligned_allocator<double>>;

  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), values_(shape_numel(shape_), fill) {}
  Tensor(Shape shape, const std::vector<double>& values)
      : shape_(std::move(shape)), values_(values.begin(), values.end()) {
    if (shape_numel(shape_) != values_.size())
      throw ShapeError("tensor " + shape_str(shape_) + " given " + std::to_string(values_.size()) + " values");
  }

  static Tensor grid(std::size_t c, std::size_t h, std::size_t w, double fill = 0.0) {
    return Tensor({c, h, w}, fill);
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  Storage& values() { return values_; }
  const Storage& values() const { return values_; }
  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  // (c, y, x) access for rank-3 grids.
  double& at(std::size_t c, std::size_t y, std::size_t x) {
    return values_[(c * shape_[1] + y) * shape_[2] + x];
  }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return values_[(c * shape_[1] + y) * shape_[2] + x];
  }

  std::size_t channels() const { return shape_.at(0); }
  std::size_t height() const { return shape_.at(1); }
  std::size_t width() const { return shape_.at(2); }

  Eigen::Map<Vector> flat() { return {values_.data(), static_cast<Eigen::Index>(values_.size())}; }
  Eigen::Map<const Vector> flat() const {
    return {values_.data(), static_cast<Eigen::Index>(values_.size())};
  }

  /// View a rank-2 tensor, or a rank-3 grid as C x (H*W), as a row-major matrix.
  Eigen::Map<RowMatrix> matrix() {
    auto [r, c] = matrix_dims();
    return {values_.data(), r, c};
  }
  Eigen::Map<const RowMatrix> matrix() const {
    auto [r, c] = matrix_dims();
    return {values_.data(), r, c};
  }

  Tensor reshaped(Shape s) const {
    if (shape_numel(s) != values_.size())
      throw ShapeError("reshape " + shape_str(shape_) + " to " + shape_str(s));
    Tensor t;
    t.shape_ = std::move(s);
    t.values_ = values_;
    return t;
  }

  void fill(double v) { std::fill(values_.begin(), values_.end(), v); }
  bool all_finite() const {
    for (double v : values_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool operator==(const Tensor&) const = default;

 private:
  std::pair<Eigen::Index, Eigen::Index> matrix_dims() const {
    if (shape_.size() == 2) return {static_cast<Eigen::Index>(shape_[0]), static_cast<Eigen::Index>(shape_[1])};
    if (shape_.size() == 3)
      return {static_cast<Eigen::Index>(shape_[0]), static_cast<Eigen::Index>(shape_[1] * shape_[2])};
    throw ShapeError("matrix view needs rank 2 or 3, got " + shape_str(shape_));
  }

  Shape shape_;
  Storage values_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

inline Tensor from_vector(const Vector& v, Shape shape) {
  return Tensor(std::move(shape), std::vector<double>(v.data(), v.data() + v.size()));
}

inline Vector to_vector(const Tensor& t) { return t.flat(); }

/// Stack rank-3 grids along the channel axis.
inline Tensor concat_channels(const std::vector<const Tensor*>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const std::size_t h = parts[0]->height(), w = parts[0]->width();
  std::size_t c = 0;
  for (const Tensor* p : parts) {
    if (p->rank() != 3 || p->height() != h || p->width() != w)
      throw ShapeError("concat_channels: mismatched grid " + shape_str(p->shape()));
    c += p->channels();
  }
  Tensor out = Tensor::grid(c, h, w);
  std::size_t off = 0;
  for (const Tensor* p : parts) {
    std::copy(p->values().begin(), p->values().end(), out.values().begin() + static_cast<std::ptrdiff_t>(off));
    off += p->size();
  }
  return out;
}

/// Channels [begin, begin + count) of a grid.
inline Tensor slice_channels(const Tensor& g, std::size_t begin, std::size_t count) {
  if (g.rank() != 3 || begin + count > g.channels())
    throw ShapeError("slice_channels out of range on " + shape_str(g.shape()));
  const std::size_t plane = g.height() * g.width();
  Tensor out = Tensor::grid(count, g.height(), g.width());
  std::copy_n(g.values().begin() + static_cast<std::ptrdiff_t>(begin * plane), count * plane, out.values().begin());
  return out;
}

}  // namespace choi
