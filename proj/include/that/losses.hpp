#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "that/graph.hpp"

namespace that {

struct LossConfig {
  double tau = 0.2;             // contrastive temperature
  double eta_init = 1.0 / 30.0;  // initial nce sharpness; log(eta) is trained
  double kl_weight = 1.0;       // lambda of the "AT + KL" comparison arm
  // Drop bank entries identical to the current positive from the negative
  // sum. Off by default: the bank is used as-is.
  bool exclude_positive = false;

  void validate() const;
};

// Graph losses. Each returns per-row values with shape [rows, 1].

// -log( e^{u.v/tau} / (e^{u.v/tau} + sum_j e^{u.n_j/tau}) ) with negatives
// given transposed as [dim, N]. `mask`, when valid, is added to the negative
// logits ([rows, N], 0 to keep, a large negative value to drop).
template <typename T>
Var contrastive_rows(Graph<T>& g, Var u, Var v, Var negatives_t, T tau,
                     Var mask = {});

// Normalised cross entropy: softmax over cos(z, w_i) / eta where w_i are the
// columns of class_weights [dim, C] and eta = exp(log_eta).
template <typename T>
Var nce_rows(Graph<T>& g, Var z, Var class_weights, std::span<const int> y,
             Var log_eta);

template <typename T>
Var cross_entropy_rows(Graph<T>& g, Var logits, std::span<const int> y);

// KL(softmax(p_logits) || softmax(q_logits)) per row.
template <typename T>
Var kl_rows(Graph<T>& g, Var p_logits, Var q_logits);

// Single-instance forms with precondition checks.

// u, v and every row of negatives [N, dim] must be unit norm within 1e-4.
template <typename T>
T contrastive_loss(std::span<const T> u, std::span<const T> v,
                   const Tensor<T>& negatives, T tau);

template <typename T>
T nce_loss(std::span<const T> z, const Tensor<T>& class_weights, int y, T eta);

// sum_i p_i log(p_i / q_i), 0 log 0 = 0, q_i clamped below at 1e-12.
double kl_divergence(std::span<const double> p, std::span<const double> q);

// Share of the divergence's absolute per-class terms contributed by classes
// outside p's top_m most probable ones.
double kl_tail_share(std::span<const double> p, std::span<const double> q,
                     std::size_t top_m);

// Long-tail instance for the tail-share fixture: p and q are softmaxes of
// independent N(0, 1) logits over `classes` entries whose first `head`
// entries are lifted by `lift`; q's tail entries are then divided by
// `tail_divisor` and q is renormalised.
struct LongTailPair {
  std::vector<double> p;
  std::vector<double> q;
};
LongTailPair long_tail_pair(std::size_t classes = 1000, std::size_t head = 5,
                            double lift = 6.0, double tail_divisor = 10.0,
                            std::uint64_t seed = 0);

}  // namespace that
