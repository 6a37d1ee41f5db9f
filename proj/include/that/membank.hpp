#pragma once

#include "that/rng.hpp"
#include "that/tensor.hpp"

namespace that {

// Fixed-capacity FIFO ring of unit-norm clean features; the negative set for
// the contrastive loss. Single writer; readers take copies.
class MemoryBank {
 public:
  // Fills every slot with a vector drawn uniformly from the unit sphere.
  // capacity must be a power of two.
  MemoryBank(std::size_t capacity, std::size_t dim, Rng& rng);

  // Restores a serialised state as is; rows must already be unit norm.
  static MemoryBank from_state(Tensor<float> entries, std::size_t cursor,
                               std::size_t fill);

  // Overwrites the oldest entries with the rows of features [n, dim], each
  // re-normalised to unit length.
  void push_batch(const Tensor<float>& features);

  // Snapshot of all current entries, [fill, dim].
  Tensor<float> negatives() const;
  // Same snapshot transposed to [dim, fill], the layout the loss consumes.
  Tensor<float> negatives_transposed() const;

  const Tensor<float>& entries() const noexcept { return entries_; }
  std::size_t capacity() const noexcept { return entries_.rows(); }
  std::size_t dim() const noexcept { return entries_.cols(); }
  std::size_t cursor() const noexcept { return cursor_; }
  std::size_t fill() const noexcept { return fill_; }

 private:
  MemoryBank() = default;

  Tensor<float> entries_;
  std::size_t cursor_ = 0;
  std::size_t fill_ = 0;
};

}  // namespace that
