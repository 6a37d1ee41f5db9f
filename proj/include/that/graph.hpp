#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "that/tensor.hpp"

namespace that {

// Handle to a node recorded in a Graph.
struct Var {
  std::uint32_t id = UINT32_MAX;
  bool valid() const noexcept { return id != UINT32_MAX; }
};

// 3x3 convolution, stride 1, zero "same" padding, over CHW-flattened rows.
struct ConvGeometry {
  std::size_t in_channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t out_channels = 1;
};

// 2x2 max pooling, stride 2 (odd trailing row/column dropped).
struct PoolGeometry {
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;
};

enum class Op : std::uint8_t {
  leaf,
  matmul,
  add,
  sub,
  mul,
  scale,
  relu,
  exp,
  log,
  sum,
  mean,
  row_sum,
  l2_normalize_rows,
  l2_normalize_cols,
  softmax_rows,
  log_softmax_rows,
  concat_cols,
  pick,
  transpose,
  conv2d,
  maxpool2,
  sign,  // recorded for convenience; has no gradient rule
};

const char* op_name(Op op) noexcept;

// Dynamically recorded computation with reverse-mode differentiation.
//
// Every op evaluates eagerly and appends a node; grad() walks the nodes
// backwards. A Graph is a single-threaded context: build one per thread.
//
// Broadcasting is limited to what the encoders need: the second operand of
// add/sub/mul may be a [1, cols] row (broadcast over rows) or a single
// element (broadcast everywhere).
template <typename T>
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) noexcept = default;
  Graph& operator=(Graph&&) noexcept = default;

  Var leaf(Tensor<T> value, bool requires_grad = true);
  Var constant(Tensor<T> value) { return leaf(std::move(value), false); }

  const Tensor<T>& value(Var v) const;
  bool requires_grad(Var v) const;
  std::size_t size() const noexcept { return nodes_.size(); }

  Var matmul(Var a, Var b);  // [m,k] x [k,n]
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, T s);
  Var relu(Var a);  // subgradient 0 at exactly 0
  Var exp(Var a);
  Var log(Var a);
  Var sum(Var a);   // -> [1]
  Var mean(Var a);  // -> [1]
  Var row_sum(Var a);  // [r,c] -> [r,1]
  Var l2_normalize_rows(Var a);
  Var l2_normalize_cols(Var a);
  Var softmax_rows(Var a);
  Var log_softmax_rows(Var a);
  Var concat_cols(Var a, Var b);
  // [r,c] -> [r,1], picking column index[r] from each row.
  Var pick(Var a, std::span<const int> index);
  Var transpose(Var a);
  // x: [batch, in_channels*h*w]; weight: [in_channels*9, out_channels];
  // bias: [1, out_channels]. Output: [batch, out_channels*h*w].
  Var conv2d(Var x, Var weight, Var bias, const ConvGeometry& geom);
  Var maxpool2(Var x, const PoolGeometry& geom);
  Var sign(Var a);

  // d(loss)/d(v) for each v in wrt. loss must hold a single element.
  // Throws ErrorCode::unsupported_primitive when gradient has to flow
  // through a node without a gradient rule.
  std::vector<Tensor<T>> grad(Var loss, std::span<const Var> wrt);

  // Branch pattern of every piecewise op (relu masks, pooling winners).
  // Two evaluations with equal signatures lie on the same smooth piece.
  std::vector<std::uint32_t> kink_signature() const;

  // Smallest |input| seen by any relu, or +inf when there is none.
  T min_relu_margin() const;

 private:
  struct Node {
    Op op = Op::leaf;
    bool needs_grad = false;
    std::uint32_t in[3] = {UINT32_MAX, UINT32_MAX, UINT32_MAX};
    Tensor<T> value;
    Tensor<T> grad;
    T scalar = T(0);
    std::vector<std::uint32_t> index;
    std::vector<T> aux;
    ConvGeometry conv;
    PoolGeometry pool;
  };

  const Node& node(Var v) const;
  Var push(Node node);
  Tensor<T>& grad_buffer(std::uint32_t id);
  void backward(const Node& n);

  std::vector<Node> nodes_;
};

extern template class Graph<float>;
extern template class Graph<double>;

// Row-major kernels shared by the graph and by plain inference code.
namespace kernels {

// c[m,n] += a[m,k] * b[k,n]
template <typename T>
void gemm_acc(std::size_t m, std::size_t k, std::size_t n, const T* a,
              const T* b, T* c) noexcept;

// c[k,n] += a[m,k]^T * b[m,n]
template <typename T>
void gemm_tn_acc(std::size_t m, std::size_t k, std::size_t n, const T* a,
                 const T* b, T* c) noexcept;

template <typename T>
Tensor<T> transpose(const Tensor<T>& a);

}  // namespace kernels

}  // namespace that
