#pragma once

#include <cstddef>
#include <functional>

namespace that {

// Rows per work item. Fixed independently of the thread count so that a
// reduction over chunks always sees the same partial sums.
inline constexpr std::size_t kChunkRows = 16;

inline std::size_t chunk_count(std::size_t rows) noexcept {
  return (rows + kChunkRows - 1) / kChunkRows;
}

// Runs independent tasks on up to `threads` workers. Tasks must only write
// to their own output slot; callers reduce the slots in index order.
class Executor {
 public:
  explicit Executor(std::size_t threads = 1) : threads_(threads ? threads : 1) {}

  std::size_t threads() const noexcept { return threads_; }

  // Calls task(i) for every i in [0, n). If tasks throw, the exception of the
  // lowest failing index is rethrown after all workers finish.
  void run(std::size_t n, const std::function<void(std::size_t)>& task) const;

 private:
  std::size_t threads_;
};

}  // namespace that
