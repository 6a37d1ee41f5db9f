#include <cmath>
#include <limits>

#include "doctest.h"
#include "helpers.hpp"
#include "that/gradcheck.hpp"
#include "that/graph.hpp"

using namespace that;

TEST_SUITE("numerics") {

TEST_CASE("l2_normalize fixtures") {
  const std::vector<double> a = {3.0, 4.0};
  const auto u = l2_normalize<double>(a);
  CHECK(u[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(u[1] == doctest::Approx(0.8).epsilon(1e-15));

  const std::vector<double> e = {1.0, 0.0, 0.0};
  CHECK(l2_normalize<double>(e) == e);

  const std::vector<double> z = {0.0, 0.0};
  try {
    l2_normalize<double>(z);
    FAIL("expected zero_norm");
  } catch (const Error& err) {
    CHECK(err.code() == ErrorCode::zero_norm);
  }
}

TEST_CASE("l2_normalize works per row") {
  const Tensor<float> t(Shape{2, 2}, {3.0F, 4.0F, 0.0F, 2.0F});
  const Tensor<float> u = l2_normalize(t);
  CHECK(u.at(0, 0) == doctest::Approx(0.6));
  CHECK(u.at(1, 1) == 1.0F);
}

TEST_CASE("stable_softmax fixtures") {
  const std::vector<double> half = {0.0, 0.0};
  const auto p = stable_softmax<double>(half);
  CHECK(p[0] == 0.5);
  CHECK(p[1] == 0.5);

  const std::vector<double> big = {1000.0, 1000.0, 1000.0};
  for (double v : stable_softmax<double>(big)) CHECK(v == doctest::Approx(1.0 / 3.0));

  const std::vector<double> one = {1.0, 0.0};
  const auto q = stable_softmax<double>(one);
  const double e = std::exp(1.0);
  CHECK(std::abs(q[0] - e / (e + 1.0)) < 1e-12);
  CHECK(std::abs(q[1] - 1.0 / (e + 1.0)) < 1e-12);
  CHECK(q[0] == doctest::Approx(0.7311).epsilon(1e-4));
}

TEST_CASE("softmax stays finite for extreme logits") {
  const std::vector<float> x = {-1e30F, 1e30F, 0.0F};
  const auto p = stable_softmax<float>(x);
  for (float v : p) CHECK(std::isfinite(v));
  CHECK(p[1] == 1.0F);
}

TEST_CASE("tensor shape invariant") {
  CHECK(shape_size({2, 3, 4}) == 24);
  try {
    Tensor<float>(Shape{2, 2}, {1.0F, 2.0F, 3.0F});
    FAIL("expected shape_mismatch");
  } catch (const Error& err) {
    CHECK(err.code() == ErrorCode::shape_mismatch);
  }
  const Tensor<double> t(Shape{3, 2}, {1, 2, 3, 4, 5, 6});
  CHECK(t.slice_rows(1, 3) == Tensor<double>(Shape{2, 2}, {3, 4, 5, 6}));
  CHECK(t.all_finite());
  Tensor<double> bad = t;
  bad[2] = std::numeric_limits<double>::quiet_NaN();
  CHECK_FALSE(bad.all_finite());
}

TEST_CASE("rng is bit-reproducible") {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) {
    const double x = a.normal();
    CHECK(x == b.normal());
  }
  CHECK(a.next_u64() != c.next_u64());
  CHECK(derive_seed(1, 2, 3) == derive_seed(1, 2, 3));
  CHECK(derive_seed(1, 2, 3) != derive_seed(1, 3, 2));
}

TEST_CASE("grad of x.x is 2x") {
  Graph<double> g;
  const Var x = g.leaf(Tensor<double>(Shape{1, 2}, {1.0, 2.0}));
  const Var f = g.sum(g.mul(x, x));
  const Var wrt[] = {x};
  const auto grads = g.grad(f, wrt);
  CHECK(grads[0] == Tensor<double>(Shape{1, 2}, {2.0, 4.0}));
}

TEST_CASE("grad of sum(relu) is the relu mask") {
  Graph<double> g;
  const Var x = g.leaf(Tensor<double>(Shape{1, 3}, {-1.0, 3.0, 0.0}));
  const Var f = g.sum(g.relu(x));
  const Var wrt[] = {x};
  CHECK(g.grad(f, wrt)[0] == Tensor<double>(Shape{1, 3}, {0.0, 1.0, 0.0}));
}

TEST_CASE("unreached leaves get zero gradients") {
  Graph<double> g;
  const Var x = g.leaf(Tensor<double>(Shape{1, 2}, {1.0, 2.0}));
  const Var unused = g.leaf(Tensor<double>(Shape{2, 2}, {1, 2, 3, 4}));
  const Var f = g.sum(x);
  const Var wrt[] = {x, unused};
  const auto grads = g.grad(f, wrt);
  CHECK(grads[1] == Tensor<double>(Shape{2, 2}));
}

TEST_CASE("sign has no gradient rule") {
  Graph<double> g;
  const Var x = g.leaf(Tensor<double>(Shape{1, 2}, {1.0, -2.0}));
  const Var f = g.sum(g.sign(x));
  const Var wrt[] = {x};
  try {
    g.grad(f, wrt);
    FAIL("expected unsupported_primitive");
  } catch (const Error& err) {
    CHECK(err.code() == ErrorCode::unsupported_primitive);
  }
}

TEST_CASE("normalising a zero row in the graph throws") {
  Graph<double> g;
  const Var x = g.leaf(Tensor<double>(Shape{2, 2}, {1.0, 1.0, 0.0, 0.0}));
  try {
    g.l2_normalize_rows(x);
    FAIL("expected zero_norm");
  } catch (const Error& err) {
    CHECK(err.code() == ErrorCode::zero_norm);
  }
}

TEST_CASE("finite_diff_check on a quadratic is tight") {
  Rng rng(5);
  const GradObjective f = [](Graph<double>& g, std::span<const Var> p) {
    return g.sum(g.mul(g.mul(p[0], p[0]), g.constant(Tensor<double>(Shape{1}, {3.0}))));
  };
  const auto report = finite_diff_check(f, {testing::random_tensor(rng, {2, 3})});
  CHECK(report.pass());
  CHECK(report.max_rel_err() < 1e-6);
}

TEST_CASE("finite_diff_check excludes relu kinks instead of failing") {
  const GradObjective f = [](Graph<double>& g, std::span<const Var> p) {
    return g.sum(g.relu(p[0]));
  };
  const auto report =
      finite_diff_check(f, {Tensor<double>(Shape{1, 3}, {0.0, 1.0, -2.0})});
  CHECK(report.pass());
  CHECK(report.excluded() == 1);
}

TEST_CASE("finite_diff_check reports primitives without a gradient rule") {
  const GradObjective f = [](Graph<double>& g, std::span<const Var> p) {
    return g.sum(g.add(g.exp(p[0]), g.sign(p[0])));
  };
  try {
    finite_diff_check(f, {Tensor<double>(Shape{1, 2}, {0.5, 0.25})});
    FAIL("expected unsupported_primitive");
  } catch (const Error& err) {
    CHECK(err.code() == ErrorCode::unsupported_primitive);
  }
}

TEST_CASE("graph kernels agree across precisions") {
  Rng rng(9);
  const auto a = testing::random_tensor(rng, {3, 4});
  const auto b = testing::random_tensor(rng, {4, 2});
  Graph<double> gd;
  Graph<float> gf;
  const auto cd = gd.value(gd.matmul(gd.constant(a), gd.constant(b)));
  const auto cf = gf.value(gf.matmul(gf.constant(a.cast<float>()), gf.constant(b.cast<float>())));
  for (std::size_t i = 0; i < cd.size(); ++i) CHECK(cf[i] == doctest::Approx(cd[i]).epsilon(1e-5));
}

}  // TEST_SUITE
