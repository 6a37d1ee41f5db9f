#include "that/membank.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "that/graph.hpp"

namespace that {

namespace {

bool is_power_of_two(std::size_t n) noexcept { return n && !(n & (n - 1)); }

}  // namespace

MemoryBank::MemoryBank(std::size_t capacity, std::size_t dim, Rng& rng) {
  require(is_power_of_two(capacity), ErrorCode::config,
          "memory bank capacity must be a power of two");
  require(dim >= 1, ErrorCode::config, "memory bank dim must be positive");
  entries_ = Tensor<float>(Shape{capacity, dim});
  std::vector<double> v(dim);
  for (std::size_t r = 0; r < capacity; ++r) {
    double norm = 0.0;
    do {
      norm = 0.0;
      for (auto& x : v) {
        x = rng.normal();
        norm += x * x;
      }
      norm = std::sqrt(norm);
    } while (norm < 1e-12);
    auto row = entries_.row(r);
    for (std::size_t c = 0; c < dim; ++c)
      row[c] = static_cast<float>(v[c] / norm);
  }
  fill_ = capacity;
}

MemoryBank MemoryBank::from_state(Tensor<float> entries, std::size_t cursor,
                                  std::size_t fill) {
  require(entries.rank() == 2 && is_power_of_two(entries.rows()),
          ErrorCode::format, "memory bank state: bad entry matrix");
  require(cursor < entries.rows() && fill <= entries.rows() && fill > 0,
          ErrorCode::format, "memory bank state: bad cursor or fill");
  for (std::size_t r = 0; r < entries.rows(); ++r) {
    if (std::abs(l2_norm(std::as_const(entries).row(r)) - 1.0F) > 1e-4F)
      fail(ErrorCode::format, "memory bank state: entry is not unit norm");
  }
  MemoryBank bank;
  bank.entries_ = std::move(entries);
  bank.cursor_ = cursor;
  bank.fill_ = fill;
  return bank;
}

void MemoryBank::push_batch(const Tensor<float>& features) {
  if (features.rank() != 2 || features.cols() != dim()) {
    fail(ErrorCode::dim_mismatch, "push_batch: feature dimension mismatch");
  }
  for (std::size_t r = 0; r < features.rows(); ++r) {
    const auto unit = l2_normalize<float>(features.row(r));
    std::copy(unit.begin(), unit.end(), entries_.row(cursor_).begin());
    cursor_ = (cursor_ + 1) % capacity();
    fill_ = std::min(fill_ + 1, capacity());
  }
}

Tensor<float> MemoryBank::negatives() const {
  if (fill_ == capacity()) return entries_;
  return entries_.slice_rows(0, fill_);
}

Tensor<float> MemoryBank::negatives_transposed() const {
  return kernels::transpose(negatives());
}

}  // namespace that
