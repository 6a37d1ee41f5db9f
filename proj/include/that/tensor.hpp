#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "that/error.hpp"

namespace that {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape) noexcept;

// Dense row-major array. Rank-2 views (rows x cols) are what most kernels
// operate on; higher ranks fold everything after the first axis into cols.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<T> data);

  static Tensor filled(Shape shape, T value);
  static Tensor matrix(std::size_t rows, std::size_t cols) {
    return Tensor(Shape{rows, cols});
  }
  static Tensor vector(std::vector<T> data) {
    Shape s{data.size()};
    return Tensor(std::move(s), std::move(data));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t rows() const noexcept { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const noexcept {
    return rows() == 0 ? 0 : data_.size() / rows();
  }

  std::span<const T> data() const noexcept { return data_; }
  std::span<T> data() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T operator[](std::size_t i) const noexcept { return data_[i]; }
  T& operator[](std::size_t i) noexcept { return data_[i]; }
  T at(std::size_t r, std::size_t c) const noexcept {
    return data_[r * cols() + c];
  }
  T& at(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }

  std::span<const T> row(std::size_t r) const noexcept {
    return std::span<const T>(data_).subspan(r * cols(), cols());
  }
  std::span<T> row(std::size_t r) noexcept {
    return std::span<T>(data_).subspan(r * cols(), cols());
  }

  // Rows [begin, end) as a new tensor with the same trailing shape.
  Tensor slice_rows(std::size_t begin, std::size_t end) const;
  Tensor reshaped(Shape shape) const;

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  bool all_finite() const noexcept;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

// ZeroNorm threshold for l2 normalisation at each precision.
template <typename T>
constexpr T zero_norm_tolerance() noexcept;
template <>
constexpr float zero_norm_tolerance<float>() noexcept { return 1e-8F; }
template <>
constexpr double zero_norm_tolerance<double>() noexcept { return 1e-12; }

// Unit-norm copy of x (per row for rank >= 2). Throws ErrorCode::zero_norm
// when a norm is <= zero_norm_tolerance<T>().
template <typename T>
std::vector<T> l2_normalize(std::span<const T> x);
template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& x);

// Max-subtracted softmax over a vector (per row for rank >= 2).
template <typename T>
std::vector<T> stable_softmax(std::span<const T> x);
template <typename T>
Tensor<T> stable_softmax(const Tensor<T>& x);

template <typename T>
T dot(std::span<const T> a, std::span<const T> b) noexcept;

template <typename T>
T l2_norm(std::span<const T> a) noexcept;

}  // namespace that
