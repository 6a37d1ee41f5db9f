#pragma once

#include <functional>
#include <span>
#include <vector>

#include "that/graph.hpp"

namespace that {

// Objective under test: records a scalar computation over the given leaves.
using GradObjective =
    std::function<Var(Graph<double>&, std::span<const Var> params)>;

struct GradCheckEntry {
  std::size_t param = 0;
  std::size_t checked = 0;
  // Coordinates whose +-h probes land on a different relu/pool branch than
  // the base point; central differences are meaningless there.
  std::size_t excluded = 0;
  double max_rel_err = 0.0;
  bool pass = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> params;

  bool pass() const noexcept;
  double max_rel_err() const noexcept;
  std::size_t excluded() const noexcept;
};

struct GradCheckOptions {
  double h = 1e-5;
  double tol = 1e-4;
  // Relative error is |a - n| / max(|a|, |n|, scale_floor).
  double scale_floor = 1e-5;
};

// Compares Graph::grad against central differences (f(p+h) - f(p-h)) / 2h,
// coordinate by coordinate.
GradCheckReport finite_diff_check(const GradObjective& f,
                                  std::vector<Tensor<double>> params,
                                  const GradCheckOptions& options = {});

}  // namespace that
