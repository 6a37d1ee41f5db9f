#include "that/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace that {

bool GradCheckReport::pass() const noexcept {
  return std::all_of(params.begin(), params.end(),
                     [](const GradCheckEntry& e) { return e.pass; });
}

double GradCheckReport::max_rel_err() const noexcept {
  double m = 0.0;
  for (const auto& e : params) m = std::max(m, e.max_rel_err);
  return m;
}

std::size_t GradCheckReport::excluded() const noexcept {
  std::size_t n = 0;
  for (const auto& e : params) n += e.excluded;
  return n;
}

namespace {

struct Evaluation {
  double value;
  std::vector<std::uint32_t> signature;
};

Evaluation evaluate(const GradObjective& f,
                    const std::vector<Tensor<double>>& params) {
  Graph<double> g;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const auto& p : params) leaves.push_back(g.leaf(p, false));
  const Var out = f(g, leaves);
  return {g.value(out)[0], g.kink_signature()};
}

}  // namespace

GradCheckReport finite_diff_check(const GradObjective& f,
                                  std::vector<Tensor<double>> params,
                                  const GradCheckOptions& options) {
  require(options.h > 0.0, ErrorCode::invalid_argument,
          "finite_diff_check: h must be positive");

  std::vector<Tensor<double>> analytic;
  std::vector<std::uint32_t> base_sig;
  {
    Graph<double> g;
    std::vector<Var> leaves;
    for (const auto& p : params) leaves.push_back(g.leaf(p, true));
    const Var out = f(g, leaves);
    analytic = g.grad(out, leaves);
    base_sig = g.kink_signature();
  }

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    GradCheckEntry entry;
    entry.param = pi;
    for (std::size_t i = 0; i < params[pi].size(); ++i) {
      const double saved = params[pi][i];
      params[pi][i] = saved + options.h;
      const Evaluation plus = evaluate(f, params);
      params[pi][i] = saved - options.h;
      const Evaluation minus = evaluate(f, params);
      params[pi][i] = saved;
      if (plus.signature != base_sig || minus.signature != base_sig) {
        ++entry.excluded;
        continue;
      }
      const double numeric = (plus.value - minus.value) / (2.0 * options.h);
      const double a = analytic[pi][i];
      const double denom =
          std::max({std::abs(a), std::abs(numeric), options.scale_floor});
      const double rel = std::abs(a - numeric) / denom;
      entry.max_rel_err = std::max(entry.max_rel_err, rel);
      ++entry.checked;
      if (!(rel < options.tol)) entry.pass = false;
    }
    report.params.push_back(entry);
  }
  return report;
}

}  // namespace that
