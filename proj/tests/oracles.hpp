#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "that/defense.hpp"
#include "that/rng.hpp"
#include "that/tensor.hpp"

// Independent reference implementations shared by the unit and acceptance
// suites.
namespace testing {

using that::GalleryIndex;
using that::Rng;
using that::Tensor;

// Direct summation oracles: plain exp and log, no max subtraction.
inline double oracle_contrastive(std::span<const double> u, std::span<const double> v,
                                 const Tensor<double>& neg, double tau) {
  auto dotp = [](std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  };
  const double pos = std::exp(dotp(u, v) / tau);
  double den = pos;
  for (std::size_t r = 0; r < neg.rows(); ++r) den += std::exp(dotp(u, neg.row(r)) / tau);
  return -std::log(pos / den);
}

inline double oracle_nce(std::span<const double> z, const Tensor<double>& w, int y, double eta) {
  double zn = 0.0;
  for (double v : z) zn += v * v;
  zn = std::sqrt(zn);
  std::vector<double> s(w.cols());
  for (std::size_t c = 0; c < w.cols(); ++c) {
    double wn = 0.0, d = 0.0;
    for (std::size_t k = 0; k < w.rows(); ++k) {
      wn += w.at(k, c) * w.at(k, c);
      d += z[k] * w.at(k, c);
    }
    s[c] = std::exp(d / (zn * std::sqrt(wn)) / eta);
  }
  double den = 0.0;
  for (double v : s) den += v;
  return -std::log(s[static_cast<std::size_t>(y)] / den);
}

inline double oracle_kl(const std::vector<double>& p, const std::vector<double>& q) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) s += p[i] * std::log(p[i] / q[i]);
  return s;
}

inline double oracle_tail_share(const std::vector<double>& p, const std::vector<double>& q,
                                std::size_t top_m) {
  std::vector<std::size_t> idx(p.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return p[a] > p[b]; });
  double all = 0.0, tail = 0.0;
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const std::size_t i = idx[r];
    if (p[i] == 0.0) continue;
    const double t = std::abs(p[i] * std::log(p[i] / q[i]));
    all += t;
    if (r >= top_m) tail += t;
  }
  return tail / all;
}

inline std::vector<double> random_distribution(Rng& rng, std::size_t n) {
  std::vector<double> p(n);
  double s = 0.0;
  for (double& v : p) s += (v = rng.uniform() + 1e-3);
  for (double& v : p) v /= s;
  return p;
}


// Exhaustive scan: score every row, fully sort, take k, sum per class.
inline std::vector<double> oracle_knn(std::span<const float> q, const GalleryIndex& g, std::size_t k) {
  std::vector<std::pair<double, std::size_t>> scored;
  for (std::size_t i = 0; i < g.size(); ++i) {
    double s = 0.0;
    for (std::size_t d = 0; d < q.size(); ++d)
      s += static_cast<double>(q[d]) * static_cast<double>(g.features.at(i, d));
    scored.emplace_back(s, i);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  std::vector<double> conf(g.classes, 0.0);
  for (std::size_t r = 0; r < std::min(k, scored.size()); ++r)
    conf[static_cast<std::size_t>(g.labels[scored[r].second])] += scored[r].first;
  return conf;
}


}  // namespace testing
