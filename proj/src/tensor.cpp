#include "that/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "that/rng.hpp"

namespace that {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::ok: return "ok";
    case ErrorCode::invalid_argument: return "invalid argument";
    case ErrorCode::shape_mismatch: return "shape mismatch";
    case ErrorCode::zero_norm: return "zero norm";
    case ErrorCode::unsupported_primitive: return "unsupported primitive";
    case ErrorCode::invalid_label: return "invalid label";
    case ErrorCode::empty_negatives: return "empty negatives";
    case ErrorCode::not_a_distribution: return "not a distribution";
    case ErrorCode::zero_divergence: return "zero divergence";
    case ErrorCode::dim_mismatch: return "dimension mismatch";
    case ErrorCode::empty_gallery: return "empty gallery";
    case ErrorCode::invalid_k: return "invalid k";
    case ErrorCode::bad_magic: return "bad magic";
    case ErrorCode::truncated_file: return "truncated file";
    case ErrorCode::count_mismatch: return "count mismatch";
    case ErrorCode::io: return "i/o error";
    case ErrorCode::config: return "configuration error";
    case ErrorCode::internal: return "internal error";
    case ErrorCode::format: return "malformed file";
  }
  return "unknown";
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // Box-Muller on (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * 3.14159265358979323846 * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

std::size_t shape_size(const Shape& shape) noexcept {
  if (shape.empty()) return 0;
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

template <typename T>
Tensor<T>::Tensor(Shape shape)
    : shape_(std::move(shape)), data_(shape_size(shape_), T(0)) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    fail(ErrorCode::shape_mismatch,
         "tensor data length " + std::to_string(data_.size()) +
             " does not match shape product " +
             std::to_string(shape_size(shape_)));
  }
  for (std::size_t d : shape_) {
    require(d > 0, ErrorCode::shape_mismatch, "tensor dims must be positive");
  }
}

template <typename T>
Tensor<T> Tensor<T>::filled(Shape shape, T value) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), value);
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::slice_rows(std::size_t begin, std::size_t end) const {
  require(begin < end && end <= rows(), ErrorCode::invalid_argument,
          "slice_rows: bad row range");
  Shape s = shape_;
  s[0] = end - begin;
  const std::size_t c = cols();
  std::vector<T> d(data_.begin() + static_cast<std::ptrdiff_t>(begin * c),
                   data_.begin() + static_cast<std::ptrdiff_t>(end * c));
  return Tensor(std::move(s), std::move(d));
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  return Tensor(std::move(shape), data_);
}

template <typename T>
bool Tensor<T>::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(),
                     [](T v) { return std::isfinite(v); });
}

template <typename T>
T dot(std::span<const T> a, std::span<const T> b) noexcept {
  T s = T(0);
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

template <typename T>
T l2_norm(std::span<const T> a) noexcept {
  return std::sqrt(dot(a, a));
}

template <typename T>
std::vector<T> l2_normalize(std::span<const T> x) {
  const T n = l2_norm(x);
  if (!(n > zero_norm_tolerance<T>())) {
    fail(ErrorCode::zero_norm, "l2_normalize: norm below tolerance");
  }
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] / n;
  return out;
}

template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& x) {
  if (x.rank() <= 1) return Tensor<T>(x.shape(), l2_normalize<T>(x.data()));
  Tensor<T> out(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto v = l2_normalize<T>(x.row(r));
    std::copy(v.begin(), v.end(), out.row(r).begin());
  }
  return out;
}

template <typename T>
std::vector<T> stable_softmax(std::span<const T> x) {
  std::vector<T> out(x.size());
  if (x.empty()) return out;
  const T m = *std::max_element(x.begin(), x.end());
  T z = T(0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x[i] - m);
    z += out[i];
  }
  for (T& v : out) v /= z;
  return out;
}

template <typename T>
Tensor<T> stable_softmax(const Tensor<T>& x) {
  if (x.rank() <= 1) return Tensor<T>(x.shape(), stable_softmax<T>(x.data()));
  Tensor<T> out(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto v = stable_softmax<T>(x.row(r));
    std::copy(v.begin(), v.end(), out.row(r).begin());
  }
  return out;
}

#define THAT_INSTANTIATE(T)                                              \
  template class Tensor<T>;                                              \
  template T dot<T>(std::span<const T>, std::span<const T>) noexcept;    \
  template T l2_norm<T>(std::span<const T>) noexcept;                    \
  template std::vector<T> l2_normalize<T>(std::span<const T>);           \
  template Tensor<T> l2_normalize<T>(const Tensor<T>&);                  \
  template std::vector<T> stable_softmax<T>(std::span<const T>);         \
  template Tensor<T> stable_softmax<T>(const Tensor<T>&);

THAT_INSTANTIATE(float)
THAT_INSTANTIATE(double)
#undef THAT_INSTANTIATE

}  // namespace that
