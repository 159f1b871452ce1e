#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rgbt {

/// Shape of a rank-4 array in N x C x H x W order. Matrices use H = W = 1.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t count() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t per_sample() const {
    return static_cast<std::size_t>(c) * h * w;
  }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

inline std::string Shape::str() const {
  return "[" + std::to_string(n) + "," + std::to_string(c) + "," +
         std::to_string(h) + "," + std::to_string(w) + "]";
}

/// Dense row-major NCHW array. Owns its storage; copies are deep.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(shape), data_(shape.count(), fill) {}
  Tensor(int n, int c, int h, int w, T fill = T(0))
      : Tensor(Shape{n, c, h, w}, fill) {}

  const Shape& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }

  std::span<T> sample(int i) {
    return {data_.data() + i * shape_.per_sample(), shape_.per_sample()};
  }
  std::span<const T> sample(int i) const {
    return {data_.data() + i * shape_.per_sample(), shape_.per_sample()};
  }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(int n, int c, int y, int x) { return data_[index(n, c, y, x)]; }
  const T& at(int n, int c, int y, int x) const {
    return data_[index(n, c, y, x)];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void zero() { fill(T(0)); }

  /// Reinterprets the storage under a new shape with the same element count.
  void reshape(Shape s) {
    if (s.count() != data_.size()) {
      throw std::logic_error("reshape " + shape_.str() + " -> " + s.str());
    }
    shape_ = s;
  }

  Tensor& operator+=(const Tensor& o) {
    check_same(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](T v) { return std::isfinite(v); });
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) {
      out[i] = static_cast<U>(data_[i]);
    }
    return out;
  }

  void check_same(const Tensor& o, const char* what) const {
    if (!(shape_ == o.shape_)) {
      throw std::logic_error(std::string("shape mismatch in ") + what + ": " +
                             shape_.str() + " vs " + o.shape_.str());
    }
  }

 private:
  std::size_t index(int n, int c, int y, int x) const {
    assert(n >= 0 && n < shape_.n && c >= 0 && c < shape_.c && y >= 0 &&
           y < shape_.h && x >= 0 && x < shape_.w);
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) *
               shape_.w +
           x;
  }

  Shape shape_{};
  std::vector<T> data_;
};

}  // namespace rgbt
