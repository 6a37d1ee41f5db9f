#include <cmath>
#include <cstring>

#include "doctest.h"
#include "helpers.hpp"
#include "that/attack.hpp"

using namespace that;

namespace {

// Loss = row sum of the input: gradient is 1 everywhere.
Var sum_objective(Graph<float>& g, Var x_adv, const Tensor<float>&, std::span<const int>) {
  return g.row_sum(x_adv);
}

Var flat_objective(Graph<float>& g, Var x_adv, const Tensor<float>&, std::span<const int>) {
  return g.scale(g.row_sum(x_adv), 0.0F);
}

struct Fixture {
  ArchitectureConfig arch = testing::tiny_mlp(12, 4);
  EncoderParams<float> params;
  Tensor<float> x;
  std::vector<int> y;

  explicit Fixture(std::size_t rows = 40) {
    Rng rng(31);
    params = init_params<float>(arch, rng);
    testing::randomize(params.robust, rng);
    x = testing::random_tensor<float>(rng, {rows, arch.input_dim()}, 0.0, 1.0);
    // Some rows sit on the pixel bounds so clamping is exercised.
    for (std::size_t i = 0; i < x.size(); i += 7) x[i] = (i / 7) % 2 ? 1.0F : 0.0F;
    y = testing::cyclic_labels(rows, arch.classes);
  }
};

}  // namespace

TEST_SUITE("attack") {

TEST_CASE("project fixtures") {
  std::vector<double> a = {0.5, -0.02};
  project<double>(a, 0.1, Norm::linf);
  CHECK(a == std::vector<double>{0.1, -0.02});

  std::vector<double> b = {3.0, 4.0};
  project<double>(b, 1.0, Norm::l2);
  CHECK(b[0] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(b[1] == doctest::Approx(0.8).epsilon(1e-12));

  for (Norm n : {Norm::linf, Norm::l2}) {
    std::vector<double> c = {0.01, -0.02}, before = c;
    project<double>(c, 0.5, n);
    CHECK(c == before);
  }
}

TEST_CASE("config validation") {
  AttackConfig c;
  CHECK_NOTHROW(c.validate());
  c.steps = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = AttackConfig{};
  c.lo = 1.0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = AttackConfig{};
  c.step = 0.0;
  CHECK_THROWS_AS(c.validate(), Error);
  const AttackConfig f = AttackConfig{}.fgsm();
  CHECK(f.steps == 1);
  CHECK(f.step == f.epsilon);
  CHECK_FALSE(f.random_start);
}

TEST_CASE("no ascent direction leaves x unchanged") {
  Fixture fx(5);
  AttackConfig cfg;
  cfg.random_start = false;
  const auto seeds = sample_seeds(1, 0, 0, 5);
  const auto r = pgd_attack(fx.x, fx.y, 4, flat_objective, cfg, seeds);
  CHECK(r.x_adv == fx.x);
}

TEST_CASE("one saturated sign step moves every pixel by epsilon") {
  Tensor<float> x = Tensor<float>::filled(Shape{3, 10}, 0.5F);
  const std::vector<int> y = {0, 1, 0};
  AttackConfig cfg;
  cfg.steps = 1;
  cfg.step = cfg.epsilon * 2.0;
  cfg.random_start = false;
  const auto r = pgd_attack(x, y, 2, sum_objective, cfg, sample_seeds(1, 0, 0, 3));
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(static_cast<double>(r.x_adv[i]) - 0.5 <= cfg.epsilon);
    CHECK(static_cast<double>(r.x_adv[i]) - 0.5 == doctest::Approx(cfg.epsilon).epsilon(1e-6));
  }
}

TEST_CASE("targeted mode descends towards another class") {
  Tensor<float> x = Tensor<float>::filled(Shape{4, 6}, 0.5F);
  const std::vector<int> y = {0, 1, 2, 3};
  AttackConfig cfg;
  cfg.mode = AttackMode::targeted;
  cfg.random_start = false;
  cfg.steps = 1;
  const auto r = pgd_attack(x, y, 4, sum_objective, cfg, sample_seeds(2, 0, 0, 4));
  for (std::size_t i = 0; i < 4; ++i) CHECK(r.targets[i] != y[i]);
  for (float v : r.x_adv.data()) CHECK(v < 0.5F);
}

TEST_CASE("l2 steps follow the unit gradient") {
  Tensor<float> x = Tensor<float>::filled(Shape{1, 4}, 0.5F);
  const std::vector<int> y = {0};
  AttackConfig cfg;
  cfg.norm = Norm::l2;
  cfg.epsilon = 0.5;
  cfg.step = 0.1;
  cfg.steps = 1;
  cfg.random_start = false;
  const auto r = pgd_attack(x, y, 2, sum_objective, cfg, sample_seeds(3, 0, 0, 1));
  for (float v : r.x_adv.data()) CHECK(static_cast<double>(v) - 0.5 == doctest::Approx(0.05).epsilon(1e-5));
}

TEST_CASE("every output satisfies the ball and pixel bounds exactly") {
  Fixture fx;
  for (Norm norm : {Norm::linf, Norm::l2}) {
    for (AttackMode mode : {AttackMode::untargeted, AttackMode::targeted}) {
      for (int steps : {1, 10}) {
        AttackConfig cfg;
        cfg.norm = norm;
        cfg.mode = mode;
        cfg.steps = steps;
        if (norm == Norm::l2) {
          cfg.epsilon = 0.5;
          cfg.step = 0.1;
        }
        const auto seeds = sample_seeds(4, 0, 0, fx.x.rows());
        const auto r = pgd_attack(fx.x, fx.y, fx.params, AttackLoss::classification, cfg, seeds);
        CHECK(satisfies_constraints(fx.x, r.x_adv, cfg));
        for (std::size_t i = 0; i < fx.x.rows(); ++i) {
          double n = 0.0;
          for (std::size_t k = 0; k < fx.x.cols(); ++k) {
            const double d = static_cast<double>(r.x_adv.at(i, k)) - fx.x.at(i, k);
            CHECK(r.x_adv.at(i, k) >= 0.0F);
            CHECK(r.x_adv.at(i, k) <= 1.0F);
            n = norm == Norm::linf ? std::max(n, std::abs(d)) : n + d * d;
          }
          if (norm == Norm::l2) n = std::sqrt(n);
          CHECK(n <= cfg.epsilon * (1.0 + 1e-6));
          if (norm == Norm::linf) CHECK(n <= cfg.epsilon);
        }
      }
    }
  }
}

TEST_CASE("attacks are reproducible and independent of threads and batching") {
  Fixture fx;
  const AttackConfig cfg;
  const auto seeds = sample_seeds(5, 0, 0, fx.x.rows());
  const auto a = pgd_attack(fx.x, fx.y, fx.params, AttackLoss::classification, cfg, seeds);
  const auto b = pgd_attack(fx.x, fx.y, fx.params, AttackLoss::classification, cfg, seeds,
                            Executor(4));
  CHECK(std::memcmp(a.x_adv.data().data(), b.x_adv.data().data(), a.x_adv.size() * 4) == 0);

  const Tensor<float> tail = fx.x.slice_rows(3, 20);
  const std::vector<int> ytail(fx.y.begin() + 3, fx.y.begin() + 20);
  const auto c = pgd_attack(tail, ytail, fx.params, AttackLoss::classification, cfg,
                            std::span(seeds).subspan(3, 17));
  CHECK(c.x_adv == a.x_adv.slice_rows(3, 20));

  const auto other = sample_seeds(6, 0, 0, fx.x.rows());
  const auto d = pgd_attack(fx.x, fx.y, fx.params, AttackLoss::classification, cfg, other);
  CHECK_FALSE(d.x_adv == a.x_adv);
}

TEST_CASE("fgsm equals one full-budget pgd step") {
  Fixture fx;
  const AttackConfig cfg;
  const auto seeds = sample_seeds(7, 0, 0, fx.x.rows());
  const auto f = fgsm_attack(fx.x, fx.y, fx.params, AttackLoss::classification, cfg, seeds);
  AttackConfig one = cfg;
  one.steps = 1;
  one.step = cfg.epsilon;
  one.random_start = false;
  const auto p = pgd_attack(fx.x, fx.y, fx.params, AttackLoss::classification, one, seeds);
  CHECK(f.x_adv == p.x_adv);
  CHECK(satisfies_constraints(fx.x, f.x_adv, cfg));
}

TEST_CASE("attack inputs are validated") {
  Fixture fx(4);
  std::vector<int> bad = fx.y;
  bad[2] = 9;
  const auto seeds = sample_seeds(8, 0, 0, 4);
  try {
    pgd_attack(fx.x, bad, fx.params, AttackLoss::classification, AttackConfig{}, seeds);
    FAIL("expected invalid_label");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::invalid_label);
  }
  Tensor<float> out = fx.x;
  out[0] = 1.5F;
  CHECK_THROWS_AS(pgd_attack(out, fx.y, fx.params, AttackLoss::classification, AttackConfig{}, seeds),
                  Error);
}

TEST_CASE("objective_values do not depend on chunk neighbours") {
  Fixture fx;
  const auto objective = attack_objective(fx.params, AttackLoss::classification);
  const auto all = objective_values(fx.x, fx.y, objective);
  for (std::size_t i : {0, 5, 17, 39}) {
    const auto one = objective_values(fx.x.slice_rows(i, i + 1), std::span(fx.y).subspan(i, 1), objective);
    CHECK(one[0] == all[i]);
  }
  CHECK(objective_values(fx.x, fx.y, objective, Executor(3)) == all);
}

TEST_CASE("pgd ascends the attacked loss") {
  Fixture fx;
  const auto objective = attack_objective(fx.params, AttackLoss::classification);
  const auto seeds = sample_seeds(9, 0, 0, fx.x.rows());
  const auto r = pgd_attack(fx.x, fx.y, fx.params, AttackLoss::classification, AttackConfig{}, seeds);
  const auto before = objective_values(fx.x, fx.y, objective);
  const auto after = objective_values(r.x_adv, fx.y, objective);
  std::size_t up = 0;
  for (std::size_t i = 0; i < before.size(); ++i) up += after[i] >= before[i];
  CHECK(up >= before.size() * 95 / 100);
}

}  // TEST_SUITE
