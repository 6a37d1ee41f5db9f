#include "that/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "that/rng.hpp"

namespace that {

namespace {

constexpr double kUnitTolerance = 1e-4;
constexpr double kDistributionTolerance = 1e-6;
constexpr double kProbabilityFloor = 1e-12;

template <typename T>
void require_unit(std::span<const T> x, const char* what) {
  const double n = static_cast<double>(l2_norm(x));
  if (std::abs(n - 1.0) > kUnitTolerance) {
    fail(ErrorCode::invalid_argument,
         std::string(what) + " must have unit norm");
  }
}

void require_distribution(std::span<const double> p, const char* what) {
  double s = 0.0;
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      fail(ErrorCode::not_a_distribution,
           std::string(what) + " has a negative or non-finite entry");
    }
    s += v;
  }
  if (std::abs(s - 1.0) > kDistributionTolerance) {
    fail(ErrorCode::not_a_distribution,
         std::string(what) + " does not sum to 1");
  }
}

}  // namespace

void LossConfig::validate() const {
  require(tau > 0.0, ErrorCode::config, "loss: tau must be positive");
  require(eta_init > 0.0, ErrorCode::config, "loss: eta_init must be positive");
  require(kl_weight >= 0.0, ErrorCode::config,
          "loss: kl_weight must be non-negative");
}

template <typename T>
Var contrastive_rows(Graph<T>& g, Var u, Var v, Var negatives_t, T tau,
                     Var mask) {
  const T inv_tau = T(1) / tau;
  const Var pos = g.scale(g.row_sum(g.mul(u, v)), inv_tau);
  Var neg = g.scale(g.matmul(u, negatives_t), inv_tau);
  if (mask.valid()) neg = g.add(neg, mask);
  const Var logp = g.log_softmax_rows(g.concat_cols(pos, neg));
  const std::vector<int> first(g.value(u).rows(), 0);
  return g.scale(g.pick(logp, first), T(-1));
}

template <typename T>
Var nce_rows(Graph<T>& g, Var z, Var class_weights, std::span<const int> y,
             Var log_eta) {
  const Var cos =
      g.matmul(g.l2_normalize_rows(z), g.l2_normalize_cols(class_weights));
  const Var scaled = g.mul(cos, g.exp(g.scale(log_eta, T(-1))));
  return cross_entropy_rows(g, scaled, y);
}

template <typename T>
Var cross_entropy_rows(Graph<T>& g, Var logits, std::span<const int> y) {
  return g.scale(g.pick(g.log_softmax_rows(logits), y), T(-1));
}

template <typename T>
Var kl_rows(Graph<T>& g, Var p_logits, Var q_logits) {
  const Var logp = g.log_softmax_rows(p_logits);
  const Var logq = g.log_softmax_rows(q_logits);
  const Var p = g.softmax_rows(p_logits);
  return g.row_sum(g.mul(p, g.sub(logp, logq)));
}

template <typename T>
T contrastive_loss(std::span<const T> u, std::span<const T> v,
                   const Tensor<T>& negatives, T tau) {
  if (negatives.empty() || negatives.rows() == 0) {
    fail(ErrorCode::empty_negatives, "contrastive_loss: no negatives");
  }
  require(tau > T(0), ErrorCode::invalid_argument,
          "contrastive_loss: tau must be positive");
  require(u.size() == v.size() && negatives.cols() == u.size(),
          ErrorCode::dim_mismatch, "contrastive_loss: dimension mismatch");
  require_unit(u, "u");
  require_unit(v, "v");
  for (std::size_t r = 0; r < negatives.rows(); ++r)
    require_unit(negatives.row(r), "negative");
  Graph<T> g;
  const std::size_t d = u.size();
  const Var uv = g.constant(Tensor<T>(Shape{1, d}, {u.begin(), u.end()}));
  const Var vv = g.constant(Tensor<T>(Shape{1, d}, {v.begin(), v.end()}));
  const Var nt = g.constant(kernels::transpose(negatives));
  return g.value(contrastive_rows(g, uv, vv, nt, tau))[0];
}

template <typename T>
T nce_loss(std::span<const T> z, const Tensor<T>& class_weights, int y, T eta) {
  require(class_weights.rank() == 2 && class_weights.rows() == z.size(),
          ErrorCode::dim_mismatch, "nce_loss: class weights must be [dim, C]");
  if (y < 0 || static_cast<std::size_t>(y) >= class_weights.cols()) {
    fail(ErrorCode::invalid_label, "nce_loss: label out of range");
  }
  require(eta > T(0), ErrorCode::invalid_argument,
          "nce_loss: eta must be positive");
  Graph<T> g;
  const Var zv =
      g.constant(Tensor<T>(Shape{1, z.size()}, {z.begin(), z.end()}));
  const Var w = g.constant(class_weights);
  const Var le = g.constant(Tensor<T>(Shape{1}, {std::log(eta)}));
  const int labels[] = {y};
  return g.value(nce_rows(g, zv, w, std::span<const int>(labels), le))[0];
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  require(p.size() == q.size() && !p.empty(), ErrorCode::dim_mismatch,
          "kl_divergence: length mismatch");
  require_distribution(p, "p");
  require_distribution(q, "q");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    kl += p[i] * std::log(p[i] / std::max(q[i], kProbabilityFloor));
  }
  return kl;
}

double kl_tail_share(std::span<const double> p, std::span<const double> q,
                     std::size_t top_m) {
  require(p.size() == q.size() && !p.empty(), ErrorCode::dim_mismatch,
          "kl_tail_share: length mismatch");
  require_distribution(p, "p");
  require_distribution(q, "q");
  std::vector<std::size_t> order(p.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });
  double total = 0.0, tail = 0.0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    const std::size_t i = order[rank];
    if (p[i] == 0.0) continue;
    const double term =
        std::abs(p[i] * std::log(p[i] / std::max(q[i], kProbabilityFloor)));
    total += term;
    if (rank >= top_m) tail += term;
  }
  if (!(total > 0.0)) {
    fail(ErrorCode::zero_divergence, "kl_tail_share: divergence is zero");
  }
  return tail / total;
}

LongTailPair long_tail_pair(std::size_t classes, std::size_t head, double lift,
                            double tail_divisor, std::uint64_t seed) {
  require(classes >= 2 && head < classes && tail_divisor > 0.0,
          ErrorCode::invalid_argument, "long_tail_pair: bad parameters");
  Rng rng(seed);
  auto draw = [&] {
    std::vector<double> logits(classes);
    for (std::size_t i = 0; i < classes; ++i)
      logits[i] = rng.normal() + (i < head ? lift : 0.0);
    return stable_softmax<double>(logits);
  };
  LongTailPair out;
  out.p = draw();
  out.q = draw();
  double total = 0.0;
  for (std::size_t i = 0; i < classes; ++i) {
    if (i >= head) out.q[i] /= tail_divisor;
    total += out.q[i];
  }
  for (double& v : out.q) v /= total;
  return out;
}

#define THAT_INSTANTIATE(T)                                                   \
  template Var contrastive_rows<T>(Graph<T>&, Var, Var, Var, T, Var);         \
  template Var nce_rows<T>(Graph<T>&, Var, Var, std::span<const int>, Var);   \
  template Var cross_entropy_rows<T>(Graph<T>&, Var, std::span<const int>);   \
  template Var kl_rows<T>(Graph<T>&, Var, Var);                               \
  template T contrastive_loss<T>(std::span<const T>, std::span<const T>,      \
                                 const Tensor<T>&, T);                        \
  template T nce_loss<T>(std::span<const T>, const Tensor<T>&, int, T);

THAT_INSTANTIATE(float)
THAT_INSTANTIATE(double)
#undef THAT_INSTANTIATE

}  // namespace that
