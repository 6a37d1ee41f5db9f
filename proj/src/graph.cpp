#include "that/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace that {

const char* op_name(Op op) noexcept {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::matmul: return "matmul";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::scale: return "scale";
    case Op::relu: return "relu";
    case Op::exp: return "exp";
    case Op::log: return "log";
    case Op::sum: return "sum";
    case Op::mean: return "mean";
    case Op::row_sum: return "row_sum";
    case Op::l2_normalize_rows: return "l2_normalize_rows";
    case Op::l2_normalize_cols: return "l2_normalize_cols";
    case Op::softmax_rows: return "softmax_rows";
    case Op::log_softmax_rows: return "log_softmax_rows";
    case Op::concat_cols: return "concat_cols";
    case Op::pick: return "pick";
    case Op::transpose: return "transpose";
    case Op::conv2d: return "conv2d";
    case Op::maxpool2: return "maxpool2";
    case Op::sign: return "sign";
  }
  return "?";
}

namespace kernels {

template <typename T>
void gemm_acc(std::size_t m, std::size_t k, std::size_t n, const T* a,
              const T* b, T* c) noexcept {
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = c + i * n;
    const T* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ai[p];
      if (av == T(0)) continue;
      const T* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

template <typename T>
void gemm_tn_acc(std::size_t m, std::size_t k, std::size_t n, const T* a,
                 const T* b, T* c) noexcept {
  for (std::size_t i = 0; i < m; ++i) {
    const T* ai = a + i * k;
    const T* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ai[p];
      if (av == T(0)) continue;
      T* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  const std::size_t r = a.rows(), c = a.cols();
  Tensor<T> out(Shape{c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
  return out;
}

template void gemm_acc<float>(std::size_t, std::size_t, std::size_t,
                              const float*, const float*, float*) noexcept;
template void gemm_acc<double>(std::size_t, std::size_t, std::size_t,
                               const double*, const double*, double*) noexcept;
template void gemm_tn_acc<float>(std::size_t, std::size_t, std::size_t,
                                 const float*, const float*, float*) noexcept;
template void gemm_tn_acc<double>(std::size_t, std::size_t, std::size_t,
                                  const double*, const double*,
                                  double*) noexcept;
template Tensor<float> transpose<float>(const Tensor<float>&);
template Tensor<double> transpose<double>(const Tensor<double>&);

}  // namespace kernels

namespace {

enum class Broadcast { same, row, scalar };

template <typename T>
Broadcast broadcast_kind(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() == b.shape()) return Broadcast::same;
  if (b.size() == 1) return Broadcast::scalar;
  if (a.rank() == 2 && b.rank() == 2 && b.rows() == 1 && b.cols() == a.cols())
    return Broadcast::row;
  fail(ErrorCode::shape_mismatch, "operands are not broadcast-compatible");
}

template <typename T>
void require_matrix(const Tensor<T>& t, const char* op) {
  if (t.rank() != 2) {
    fail(ErrorCode::shape_mismatch,
         std::string(op) + ": expected a rank-2 tensor");
  }
}

// Element of b aligned with flat index i of a.
template <typename T>
inline T bget(const Tensor<T>& b, Broadcast kind, std::size_t i,
              std::size_t cols) {
  switch (kind) {
    case Broadcast::same: return b[i];
    case Broadcast::row: return b[i % cols];
    case Broadcast::scalar: return b[0];
  }
  return T(0);
}

template <typename T>
inline void badd(Tensor<T>& gb, Broadcast kind, std::size_t i,
                 std::size_t cols, T v) {
  switch (kind) {
    case Broadcast::same: gb[i] += v; break;
    case Broadcast::row: gb[i % cols] += v; break;
    case Broadcast::scalar: gb[0] += v; break;
  }
}

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  const std::size_t hw = g.height * g.width;
  const std::size_t k = g.in_channels * 9;
  const auto H = static_cast<std::ptrdiff_t>(g.height);
  const auto W = static_cast<std::ptrdiff_t>(g.width);
  for (std::ptrdiff_t y = 0; y < H; ++y) {
    for (std::ptrdiff_t xx = 0; xx < W; ++xx) {
      T* row = col + static_cast<std::size_t>(y * W + xx) * k;
      for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
        const T* plane = x + ci * hw;
        for (std::ptrdiff_t ky = 0; ky < 3; ++ky) {
          for (std::ptrdiff_t kx = 0; kx < 3; ++kx) {
            const std::ptrdiff_t iy = y + ky - 1, ix = xx + kx - 1;
            const bool inside = iy >= 0 && iy < H && ix >= 0 && ix < W;
            row[ci * 9 + static_cast<std::size_t>(ky * 3 + kx)] =
                inside ? plane[iy * W + ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* dx) {
  const std::size_t hw = g.height * g.width;
  const std::size_t k = g.in_channels * 9;
  const auto H = static_cast<std::ptrdiff_t>(g.height);
  const auto W = static_cast<std::ptrdiff_t>(g.width);
  for (std::ptrdiff_t y = 0; y < H; ++y) {
    for (std::ptrdiff_t xx = 0; xx < W; ++xx) {
      const T* row = col + static_cast<std::size_t>(y * W + xx) * k;
      for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
        T* plane = dx + ci * hw;
        for (std::ptrdiff_t ky = 0; ky < 3; ++ky) {
          for (std::ptrdiff_t kx = 0; kx < 3; ++kx) {
            const std::ptrdiff_t iy = y + ky - 1, ix = xx + kx - 1;
            if (iy >= 0 && iy < H && ix >= 0 && ix < W)
              plane[iy * W + ix] +=
                  row[ci * 9 + static_cast<std::size_t>(ky * 3 + kx)];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
const typename Graph<T>::Node& Graph<T>::node(Var v) const {
  if (!v.valid() || v.id >= nodes_.size()) {
    fail(ErrorCode::invalid_argument, "variable does not belong to graph");
  }
  return nodes_[v.id];
}

template <typename T>
Var Graph<T>::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
Var Graph<T>::leaf(Tensor<T> value, bool requires_grad) {
  Node n;
  n.op = Op::leaf;
  n.needs_grad = requires_grad;
  n.value = std::move(value);
  return push(std::move(n));
}

template <typename T>
const Tensor<T>& Graph<T>::value(Var v) const {
  return node(v).value;
}

template <typename T>
bool Graph<T>::requires_grad(Var v) const {
  return node(v).needs_grad;
}

template <typename T>
Var Graph<T>::matmul(Var a, Var b) {
  const auto& A = node(a).value;
  const auto& B = node(b).value;
  require_matrix(A, "matmul");
  require_matrix(B, "matmul");
  if (A.cols() != B.rows()) {
    fail(ErrorCode::shape_mismatch,
         "matmul: inner dimensions " + std::to_string(A.cols()) + " and " +
             std::to_string(B.rows()) + " differ");
  }
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Node out;
  out.op = Op::matmul;
  out.in[0] = a.id;
  out.in[1] = b.id;
  out.needs_grad = node(a).needs_grad || node(b).needs_grad;
  out.value = Tensor<T>(Shape{m, n});
  kernels::gemm_acc(m, k, n, A.data().data(), B.data().data(),
                    out.value.data().data());
  return push(std::move(out));
}

template <typename T>
Var Graph<T>::add(Var a, Var b) {
  const auto& A = node(a).value;
  const auto& B = node(b).value;
  const Broadcast kind = broadcast_kind(A, B);
  Node out;
  out.op = Op::add;
  out.in[0] = a.id;
  out.in[1] = b.id;
  out.needs_grad = node(a).needs_grad || node(b).needs_grad;
  out.value = Tensor<T>(A.shape());
  const std::size_t c = A.cols();
  for (std::size_t i = 0; i < A.size(); ++i)
    out.value[i] = A[i] + bget(B, kind, i, c);
  return push(std::move(out));
}

template <typename T>
Var Graph<T>::sub(Var a, Var b) {
  const auto& A = node(a).value;
  const auto& B = node(b).value;
  const Broadcast kind = broadcast_kind(A, B);
  Node out;
  out.op = Op::sub;
  out.in[0] = a.id;
  out.in[1] = b.id;
  out.needs_grad = node(a).needs_grad || node(b).needs_grad;
  out.value = Tensor<T>(A.shape());
  const std::size_t c = A.cols();
  for (std::size_t i = 0; i < A.size(); ++i)
    out.value[i] = A[i] - bget(B, kind, i, c);
  return push(std::move(out));
}

template <typename T>
Var Graph<T>::mul(Var a, Var b) {
  const auto& A = node(a).value;
  const auto& B = node(b).value;
  const Broadcast kind = broadcast_kind(A, B);
  Node out;
  out.op = Op::mul;
  out.in[0] = a.id;
  out.in[1] = b.id;
  out.needs_grad = node(a).needs_grad || node(b).needs_grad;
  out.value = Tensor<T>(A.shape());
  const std::size_t c = A.cols();
  for (std::size_t i = 0; i < A.size(); ++i)
    out.value[i] = A[i] * bget(B, kind, i, c);
  return push(std::move(out));
}

template <typename T>
Var Graph<T>::scale(Var a, T s) {
  const auto& A = node(a).value;
  Node out;
  out.op = Op::scale;
  out.in[0] = a.id;
  out.scalar = s;
  out.needs_grad = node(a).needs_grad;
  out.value = Tensor<T>(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) out.value[i] = A[i] * s;
  return push(std::move(out));
}

template <typename T>
Var Graph<T>::relu(Var a) {
  const auto& A = node(a).value;
  Node out;
  out.op = Op::relu;
  out.in[0] = a.id;
  out.needs_grad = node(a).needs_grad;
  out.value = Tensor<T>(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i)
    out.value[i] = A[i] > T(0) ? A[i] : T(0);
  return push(std::move(out));
}

template <typename T>
Var Graph<T>::exp(Var a) {
  const auto& A = node(a).value;
  Node out;
  out.op = Op::exp;
  out.in[0] = a.id;
  out.needs_grad = node(a).needs_grad;
  out.value = Tensor<T>(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) out.value[i] = std::exp(A[i]);
  return push(std::move(out));
}

template <typename T>
Var Graph<T>::log(Var a) {
  const auto& A = node(a).value;
  Node out;
  out.op = Op::log;
  out.in[0] = a.id;
  out.needs_grad = node(a).needs_grad;
  out.value = Tensor<T>(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) out.value[i] = std::log(A[i]);
  return push(std::move(out));
}

template <typename T>
Var Graph<T>::sum(Var a) {
  const auto& A = node(a).value;
  Node out;
  out.op = Op::sum;
  out.in[0] = a.id;
  out.needs_grad = node(a).needs_grad;
  T s = T(0);
  for (T v : A.data()) s += v;
  out.value = Tensor<T>(Shape{1}, {s});
  return push(std::move(out));
}

template <typename T>
Var Graph<T>::mean(Var a) {
  const auto& A = node(a).value;
  require(!A.empty(), ErrorCode::invalid_argument, "mean of empty tensor");
  Node out;
  out.op = Op::mean;
  out.in[0] = a.id;
  out.needs_grad = node(a).needs_grad;
  T s = T(0);
  for (T v : A.data()) s += v;
  out.value = Tensor<T>(Shape{1}, {s / static_cast<T>(A.size())});
  return push(std::move(out));
}

template <typename T>
Var Graph<T>::row_sum(Var a) {
  const auto& A = node(a).value;
  require_matrix(A, "row_sum");
  Node out;
  out.op = Op::row_sum;
  out.in[0] = a.id;
  out.needs_grad = node(a).needs_grad;
  out.value = Tensor<T>(Shape{A.rows(), 1});
  for (std::size_t r = 0; r < A.rows(); ++r) {
    T s = T(0);
    for (T v : A.row(r)) s += v;
    out.value[r] = s;
  }
  return push(std::move(out));
}

template <typename T>
Var Graph<T>::l2_normalize_rows(Var a) {
  const auto& A = node(a).value;
  require_matrix(A, "l2_normalize_rows");
  Node out;
  out.op = Op::l2_normalize_rows;
  out.in[0] = a.id;
  out.needs_grad = node(a).needs_grad;
  out.value = Tensor<T>(A.shape());
  out.aux.resize(A.rows());
  for (std::size_t r = 0; r < A.rows(); ++r) {
    const T n = l2_norm(A.row(r));
    if (!(n > zero_norm_tolerance<T>())) {
      fail(ErrorCode::zero_norm, "l2_normalize: row norm below tolerance");
    }
    out.aux[r] = n;
    auto dst = out.value.row(r);
    auto src = A.row(r);
    for (std::size_t c = 0; c < src.size(); ++c) dst[c] = src[c] / n;
  }
  return push(std::move(out));
}

template <typename T>
Var Graph<T>::l2_normalize_cols(Var a) {
  const auto& A = node(a).value;
  require_matrix(A, "l2_normalize_cols");
  const std::size_t R = A.rows(), C = A.cols();
  Node out;
  out.op = Op::l2_normalize_cols;
  out.in[0] = a.id;
  out.needs_grad = node(a).needs_grad;
  out.value = Tensor<T>(A.shape());
  out.aux.assign(C, T(0));
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) out.aux[c] += A[r * C + c] * A[r * C + c];
  for (std::size_t c = 0; c < C; ++c) {
    out.aux[c] = std::sqrt(out.aux[c]);
    if (!(out.aux[c] > zero_norm_tolerance<T>())) {
      fail(ErrorCode::zero_norm, "l2_normalize: column norm below tolerance");
    }
  }
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c)
      out.value[r * C + c] = A[r * C + c] / out.aux[c];
  return push(std::move(out));
}

template <typename T>
Var Graph<T>::softmax_rows(Var a) {
  const auto& A = node(a).value;
  require_matrix(A, "softmax_rows");
  Node out;
  out.op = Op::softmax_rows;
  out.in[0] = a.id;
  out.needs_grad = node(a).needs_grad;
  out.value = stable_softmax(A);
  return push(std::move(out));
}

template <typename T>
Var Graph<T>::log_softmax_rows(Var a) {
  const auto& A = node(a).value;
  require_matrix(A, "log_softmax_rows");
  Node out;
  out.op = Op::log_softmax_rows;
  out.in[0] = a.id;
  out.needs_grad = node(a).needs_grad;
  out.value = Tensor<T>(A.shape());
  for (std::size_t r = 0; r < A.rows(); ++r) {
    auto src = A.row(r);
    const T m = *std::max_element(src.begin(), src.end());
    T z = T(0);
    for (T v : src) z += std::exp(v - m);
    const T lse = m + std::log(z);
    auto dst = out.value.row(r);
    for (std::size_t c = 0; c < src.size(); ++c) dst[c] = src[c] - lse;
  }
  return push(std::move(out));
}

template <typename T>
Var Graph<T>::concat_cols(Var a, Var b) {
  const auto& A = node(a).value;
  const auto& B = node(b).value;
  require_matrix(A, "concat_cols");
  require_matrix(B, "concat_cols");
  require(A.rows() == B.rows(), ErrorCode::shape_mismatch,
          "concat_cols: row counts differ");
  const std::size_t ca = A.cols(), cb = B.cols();
  Node out;
  out.op = Op::concat_cols;
  out.in[0] = a.id;
  out.in[1] = b.id;
  out.needs_grad = node(a).needs_grad || node(b).needs_grad;
  out.value = Tensor<T>(Shape{A.rows(), ca + cb});
  for (std::size_t r = 0; r < A.rows(); ++r) {
    auto dst = out.value.row(r);
    std::copy(A.row(r).begin(), A.row(r).end(), dst.begin());
    std::copy(B.row(r).begin(), B.row(r).end(),
              dst.begin() + static_cast<std::ptrdiff_t>(ca));
  }
  return push(std::move(out));
}

template <typename T>
Var Graph<T>::pick(Var a, std::span<const int> index) {
  const auto& A = node(a).value;
  require_matrix(A, "pick");
  require(index.size() == A.rows(), ErrorCode::shape_mismatch,
          "pick: one index per row required");
  Node out;
  out.op = Op::pick;
  out.in[0] = a.id;
  out.needs_grad = node(a).needs_grad;
  out.value = Tensor<T>(Shape{A.rows(), 1});
  out.index.resize(index.size());
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] < 0 || static_cast<std::size_t>(index[r]) >= A.cols()) {
      fail(ErrorCode::invalid_label, "pick: index out of range");
    }
    out.index[r] = static_cast<std::uint32_t>(index[r]);
    out.value[r] = A.at(r, out.index[r]);
  }
  return push(std::move(out));
}

template <typename T>
Var Graph<T>::transpose(Var a) {
  const auto& A = node(a).value;
  require_matrix(A, "transpose");
  Node out;
  out.op = Op::transpose;
  out.in[0] = a.id;
  out.needs_grad = node(a).needs_grad;
  out.value = kernels::transpose(A);
  return push(std::move(out));
}

template <typename T>
Var Graph<T>::conv2d(Var x, Var weight, Var bias, const ConvGeometry& g) {
  const auto& X = node(x).value;
  const auto& Wt = node(weight).value;
  const auto& Bs = node(bias).value;
  const std::size_t hw = g.height * g.width;
  const std::size_t k = g.in_channels * 9;
  require_matrix(X, "conv2d");
  require(X.cols() == g.in_channels * hw, ErrorCode::shape_mismatch,
          "conv2d: input width does not match geometry");
  require(Wt.rank() == 2 && Wt.rows() == k && Wt.cols() == g.out_channels,
          ErrorCode::shape_mismatch, "conv2d: weight shape mismatch");
  require(Bs.size() == g.out_channels, ErrorCode::shape_mismatch,
          "conv2d: bias shape mismatch");
  Node out;
  out.op = Op::conv2d;
  out.in[0] = x.id;
  out.in[1] = weight.id;
  out.in[2] = bias.id;
  out.conv = g;
  out.needs_grad =
      node(x).needs_grad || node(weight).needs_grad || node(bias).needs_grad;
  const std::size_t co = g.out_channels;
  out.value = Tensor<T>(Shape{X.rows(), co * hw});
  std::vector<T> col(hw * k), res(hw * co);
  for (std::size_t b = 0; b < X.rows(); ++b) {
    im2col(X.row(b).data(), g, col.data());
    for (std::size_t s = 0; s < hw; ++s)
      for (std::size_t c = 0; c < co; ++c) res[s * co + c] = Bs[c];
    kernels::gemm_acc(hw, k, co, col.data(), Wt.data().data(), res.data());
    auto dst = out.value.row(b);
    for (std::size_t s = 0; s < hw; ++s)
      for (std::size_t c = 0; c < co; ++c) dst[c * hw + s] = res[s * co + c];
  }
  return push(std::move(out));
}

template <typename T>
Var Graph<T>::maxpool2(Var x, const PoolGeometry& g) {
  const auto& X = node(x).value;
  require_matrix(X, "maxpool2");
  require(X.cols() == g.channels * g.height * g.width,
          ErrorCode::shape_mismatch, "maxpool2: input width mismatch");
  const std::size_t ho = g.height / 2, wo = g.width / 2;
  require(ho > 0 && wo > 0, ErrorCode::shape_mismatch,
          "maxpool2: input smaller than the window");
  Node out;
  out.op = Op::maxpool2;
  out.in[0] = x.id;
  out.pool = g;
  out.needs_grad = node(x).needs_grad;
  const std::size_t per = g.channels * ho * wo;
  out.value = Tensor<T>(Shape{X.rows(), per});
  out.index.resize(X.rows() * per);
  for (std::size_t b = 0; b < X.rows(); ++b) {
    auto src = X.row(b);
    auto dst = out.value.row(b);
    for (std::size_t c = 0; c < g.channels; ++c) {
      for (std::size_t oy = 0; oy < ho; ++oy) {
        for (std::size_t ox = 0; ox < wo; ++ox) {
          std::size_t best = c * g.height * g.width + 2 * oy * g.width + 2 * ox;
          for (std::size_t dy = 0; dy < 2; ++dy) {
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t i =
                  c * g.height * g.width + (2 * oy + dy) * g.width + 2 * ox + dx;
              if (src[i] > src[best]) best = i;
            }
          }
          const std::size_t o = c * ho * wo + oy * wo + ox;
          dst[o] = src[best];
          out.index[b * per + o] = static_cast<std::uint32_t>(best);
        }
      }
    }
  }
  return push(std::move(out));
}

template <typename T>
Var Graph<T>::sign(Var a) {
  const auto& A = node(a).value;
  Node out;
  out.op = Op::sign;
  out.in[0] = a.id;
  out.needs_grad = node(a).needs_grad;
  out.value = Tensor<T>(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i)
    out.value[i] = A[i] > T(0) ? T(1) : (A[i] < T(0) ? T(-1) : T(0));
  return push(std::move(out));
}

template <typename T>
Tensor<T>& Graph<T>::grad_buffer(std::uint32_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
  return n.grad;
}

template <typename T>
std::vector<Tensor<T>> Graph<T>::grad(Var loss, std::span<const Var> wrt) {
  const Node& l = node(loss);
  require(l.value.size() == 1, ErrorCode::invalid_argument,
          "grad: loss must be a single element");
  for (Node& n : nodes_) n.grad = Tensor<T>();
  grad_buffer(loss.id)[0] = T(1);
  for (std::uint32_t id = loss.id + 1; id-- > 0;) {
    const Node& n = nodes_[id];
    if (n.op == Op::leaf || !n.needs_grad || n.grad.empty()) continue;
    backward(n);
  }
  std::vector<Tensor<T>> out;
  out.reserve(wrt.size());
  for (Var v : wrt) {
    const Node& n = node(v);
    out.push_back(n.grad.empty() ? Tensor<T>(n.value.shape()) : n.grad);
  }
  return out;
}

template <typename T>
void Graph<T>::backward(const Node& n) {
  const Tensor<T>& dy = n.grad;
  auto wants = [&](int slot) {
    return n.in[slot] != UINT32_MAX && nodes_[n.in[slot]].needs_grad;
  };
  switch (n.op) {
    case Op::leaf:
      return;
    case Op::matmul: {
      const auto& A = nodes_[n.in[0]].value;
      const auto& B = nodes_[n.in[1]].value;
      const std::size_t m = A.rows(), k = A.cols(), cols = B.cols();
      if (wants(0)) {
        const Tensor<T> bt = kernels::transpose(B);
        kernels::gemm_acc(m, cols, k, dy.data().data(), bt.data().data(),
                          grad_buffer(n.in[0]).data().data());
      }
      if (wants(1)) {
        kernels::gemm_tn_acc(m, k, cols, A.data().data(), dy.data().data(),
                             grad_buffer(n.in[1]).data().data());
      }
      return;
    }
    case Op::add:
    case Op::sub: {
      const auto& A = nodes_[n.in[0]].value;
      const auto& B = nodes_[n.in[1]].value;
      if (wants(0)) {
        auto& ga = grad_buffer(n.in[0]);
        for (std::size_t i = 0; i < dy.size(); ++i) ga[i] += dy[i];
      }
      if (wants(1)) {
        const Broadcast kind = broadcast_kind(A, B);
        auto& gb = grad_buffer(n.in[1]);
        const T sgn = n.op == Op::add ? T(1) : T(-1);
        const std::size_t c = A.cols();
        for (std::size_t i = 0; i < dy.size(); ++i)
          badd(gb, kind, i, c, sgn * dy[i]);
      }
      return;
    }
    case Op::mul: {
      const auto& A = nodes_[n.in[0]].value;
      const auto& B = nodes_[n.in[1]].value;
      const Broadcast kind = broadcast_kind(A, B);
      const std::size_t c = A.cols();
      if (wants(0)) {
        auto& ga = grad_buffer(n.in[0]);
        for (std::size_t i = 0; i < dy.size(); ++i)
          ga[i] += dy[i] * bget(B, kind, i, c);
      }
      if (wants(1)) {
        auto& gb = grad_buffer(n.in[1]);
        for (std::size_t i = 0; i < dy.size(); ++i)
          badd(gb, kind, i, c, dy[i] * A[i]);
      }
      return;
    }
    case Op::scale: {
      auto& ga = grad_buffer(n.in[0]);
      for (std::size_t i = 0; i < dy.size(); ++i) ga[i] += dy[i] * n.scalar;
      return;
    }
    case Op::relu: {
      const auto& A = nodes_[n.in[0]].value;
      auto& ga = grad_buffer(n.in[0]);
      for (std::size_t i = 0; i < dy.size(); ++i)
        if (A[i] > T(0)) ga[i] += dy[i];
      return;
    }
    case Op::exp: {
      auto& ga = grad_buffer(n.in[0]);
      for (std::size_t i = 0; i < dy.size(); ++i) ga[i] += dy[i] * n.value[i];
      return;
    }
    case Op::log: {
      const auto& A = nodes_[n.in[0]].value;
      auto& ga = grad_buffer(n.in[0]);
      for (std::size_t i = 0; i < dy.size(); ++i) ga[i] += dy[i] / A[i];
      return;
    }
    case Op::sum:
    case Op::mean: {
      auto& ga = grad_buffer(n.in[0]);
      const T g = n.op == Op::sum ? dy[0] : dy[0] / static_cast<T>(ga.size());
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
      return;
    }
    case Op::row_sum: {
      auto& ga = grad_buffer(n.in[0]);
      const std::size_t c = ga.cols();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += dy[i / c];
      return;
    }
    case Op::l2_normalize_rows: {
      auto& ga = grad_buffer(n.in[0]);
      for (std::size_t r = 0; r < n.value.rows(); ++r) {
        auto y = n.value.row(r);
        auto g = dy.row(r);
        const T proj = dot(y, g);
        auto dst = ga.row(r);
        for (std::size_t c = 0; c < y.size(); ++c)
          dst[c] += (g[c] - y[c] * proj) / n.aux[r];
      }
      return;
    }
    case Op::l2_normalize_cols: {
      auto& ga = grad_buffer(n.in[0]);
      const std::size_t R = n.value.rows(), C = n.value.cols();
      std::vector<T> proj(C, T(0));
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c)
          proj[c] += n.value[r * C + c] * dy[r * C + c];
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c)
          ga[r * C + c] +=
              (dy[r * C + c] - n.value[r * C + c] * proj[c]) / n.aux[c];
      return;
    }
    case Op::softmax_rows: {
      auto& ga = grad_buffer(n.in[0]);
      for (std::size_t r = 0; r < n.value.rows(); ++r) {
        auto y = n.value.row(r);
        auto g = dy.row(r);
        const T s = dot(y, g);
        auto dst = ga.row(r);
        for (std::size_t c = 0; c < y.size(); ++c) dst[c] += y[c] * (g[c] - s);
      }
      return;
    }
    case Op::log_softmax_rows: {
      auto& ga = grad_buffer(n.in[0]);
      for (std::size_t r = 0; r < n.value.rows(); ++r) {
        auto y = n.value.row(r);
        auto g = dy.row(r);
        T s = T(0);
        for (T v : g) s += v;
        auto dst = ga.row(r);
        for (std::size_t c = 0; c < y.size(); ++c)
          dst[c] += g[c] - std::exp(y[c]) * s;
      }
      return;
    }
    case Op::concat_cols: {
      const std::size_t ca = nodes_[n.in[0]].value.cols();
      const std::size_t cb = nodes_[n.in[1]].value.cols();
      for (std::size_t r = 0; r < dy.rows(); ++r) {
        auto g = dy.row(r);
        if (wants(0)) {
          auto dst = grad_buffer(n.in[0]).row(r);
          for (std::size_t c = 0; c < ca; ++c) dst[c] += g[c];
        }
        if (wants(1)) {
          auto dst = grad_buffer(n.in[1]).row(r);
          for (std::size_t c = 0; c < cb; ++c) dst[c] += g[ca + c];
        }
      }
      return;
    }
    case Op::pick: {
      auto& ga = grad_buffer(n.in[0]);
      for (std::size_t r = 0; r < n.index.size(); ++r)
        ga.at(r, n.index[r]) += dy[r];
      return;
    }
    case Op::transpose: {
      auto& ga = grad_buffer(n.in[0]);
      const Tensor<T> t = kernels::transpose(dy);
      for (std::size_t i = 0; i < t.size(); ++i) ga[i] += t[i];
      return;
    }
    case Op::conv2d: {
      const auto& X = nodes_[n.in[0]].value;
      const auto& Wt = nodes_[n.in[1]].value;
      const ConvGeometry& g = n.conv;
      const std::size_t hw = g.height * g.width;
      const std::size_t k = g.in_channels * 9;
      const std::size_t co = g.out_channels;
      std::vector<T> col(hw * k), dres(hw * co), dcol;
      Tensor<T> wt;
      if (wants(0)) {
        wt = kernels::transpose(Wt);
        dcol.resize(hw * k);
      }
      for (std::size_t b = 0; b < X.rows(); ++b) {
        auto src = dy.row(b);
        for (std::size_t s = 0; s < hw; ++s)
          for (std::size_t c = 0; c < co; ++c) dres[s * co + c] = src[c * hw + s];
        if (wants(1)) {
          im2col(X.row(b).data(), g, col.data());
          kernels::gemm_tn_acc(hw, k, co, col.data(), dres.data(),
                               grad_buffer(n.in[1]).data().data());
        }
        if (wants(2)) {
          auto& gb = grad_buffer(n.in[2]);
          for (std::size_t s = 0; s < hw; ++s)
            for (std::size_t c = 0; c < co; ++c) gb[c] += dres[s * co + c];
        }
        if (wants(0)) {
          std::fill(dcol.begin(), dcol.end(), T(0));
          kernels::gemm_acc(hw, co, k, dres.data(), wt.data().data(),
                            dcol.data());
          col2im_add(dcol.data(), g, grad_buffer(n.in[0]).row(b).data());
        }
      }
      return;
    }
    case Op::maxpool2: {
      auto& ga = grad_buffer(n.in[0]);
      const std::size_t per = n.value.cols();
      for (std::size_t b = 0; b < n.value.rows(); ++b) {
        auto dst = ga.row(b);
        for (std::size_t o = 0; o < per; ++o)
          dst[n.index[b * per + o]] += dy[b * per + o];
      }
      return;
    }
    case Op::sign:
      break;
  }
  fail(ErrorCode::unsupported_primitive,
       std::string("no gradient rule for primitive '") + op_name(n.op) + "'");
}

template <typename T>
std::vector<std::uint32_t> Graph<T>::kink_signature() const {
  std::vector<std::uint32_t> sig;
  for (const Node& n : nodes_) {
    if (n.op == Op::relu) {
      const auto& A = nodes_[n.in[0]].value;
      std::uint32_t word = 0;
      std::size_t bit = 0;
      for (std::size_t i = 0; i < A.size(); ++i) {
        if (A[i] > T(0)) word |= 1U << bit;
        if (++bit == 32) {
          sig.push_back(word);
          word = 0;
          bit = 0;
        }
      }
      if (bit != 0) sig.push_back(word);
    } else if (n.op == Op::maxpool2) {
      sig.insert(sig.end(), n.index.begin(), n.index.end());
    }
  }
  return sig;
}

template <typename T>
T Graph<T>::min_relu_margin() const {
  T m = std::numeric_limits<T>::infinity();
  for (const Node& n : nodes_) {
    if (n.op != Op::relu) continue;
    for (T v : nodes_[n.in[0]].value.data()) m = std::min(m, std::abs(v));
  }
  return m;
}

template class Graph<float>;
template class Graph<double>;

}  // namespace that
