#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "that/model.hpp"
#include "that/rng.hpp"
#include "that/tensor.hpp"

namespace testing {

template <typename T = double>
that::Tensor<T> random_tensor(that::Rng& rng, that::Shape shape, double lo = -1.0,
                              double hi = 1.0) {
  that::Tensor<T> t(std::move(shape));
  for (T& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

template <typename T = double>
that::Tensor<T> random_unit_rows(that::Rng& rng, std::size_t rows, std::size_t dim) {
  that::Tensor<T> t(that::Shape{rows, dim});
  for (T& v : t.data()) v = static_cast<T>(rng.normal());
  return that::l2_normalize(t);
}

inline that::ArchitectureConfig tiny_mlp(std::size_t dim = 6, std::size_t classes = 3) {
  that::ArchitectureConfig a;
  a.width = dim;
  a.widths = {5, 4};
  a.feature_hidden = 4;
  a.feature_dim = 3;
  a.classes = classes;
  return a;
}

inline that::ArchitectureConfig tiny_conv() {
  that::ArchitectureConfig a;
  a.channels = 2;
  a.height = 4;
  a.width = 4;
  a.trunk = that::TrunkKind::conv;
  a.widths = {3};
  a.dense_width = 5;
  a.feature_hidden = 4;
  a.feature_dim = 3;
  a.classes = 3;
  return a;
}

// Fills every tensor with uniform draws in [-s, s]. Fresh inits have zero
// biases and a nearly degenerate feature head, which makes central
// differences inaccurate; this keeps the instances well conditioned.
template <typename T>
void randomize(that::NetParams<T>& net, that::Rng& rng, double s = 1.0) {
  net.visit([&](const std::string&, that::Tensor<T>& t) {
    for (T& v : t.data()) v = static_cast<T>(rng.uniform(-s, s));
  });
}

// NetVars whose handles are `vars`, taken in NetParams::visit order. Lets a
// gradient checker own the parameter leaves.
template <typename T>
that::NetVars vars_from(const that::NetParams<T>& net, std::span<const that::Var> vars) {
  that::NetVars out;
  std::size_t i = 0;
  auto next = [&] { return vars[i++]; };
  out.convs.resize(net.convs.size());
  for (auto& l : out.convs) { l.weight = next(); l.bias = next(); }
  out.trunk.resize(net.trunk.size());
  for (auto& l : out.trunk) { l.weight = next(); l.bias = next(); }
  out.feature_hidden.weight = next();
  out.feature_hidden.bias = next();
  out.feature_out.weight = next();
  out.feature_out.bias = next();
  out.classifier = next();
  return out;
}

template <typename T>
std::vector<that::Tensor<T>> tensors_of(const that::NetParams<T>& net) {
  std::vector<that::Tensor<T>> out;
  net.visit([&](const std::string&, const that::Tensor<T>& t) { out.push_back(t); });
  return out;
}

inline std::vector<int> cyclic_labels(std::size_t n, std::size_t classes) {
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<int>(i % classes);
  return y;
}

}  // namespace testing
