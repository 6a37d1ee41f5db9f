#include <filesystem>

#include "doctest.h"
#include "helpers.hpp"
#include "that/defense.hpp"
#include "that/store.hpp"
#include "that/training.hpp"

using namespace that;

namespace {

struct Task {
  DatasetSplit data;
  ArchitectureConfig arch;
};

Task small_task() {
  SyntheticConfig s;
  s.classes = 3;
  s.dim = 8;
  s.per_class = 40;
  s.radius = 0.3;
  Task t{gen_synthetic(s), {}};
  t.arch.width = 8;
  t.arch.widths = {12};
  t.arch.feature_hidden = 8;
  t.arch.feature_dim = 6;
  t.arch.classes = 3;
  t.arch.input_mean = 0.5;
  t.arch.input_scale = 8.0;
  return t;
}

TrainConfig small_config(TrainMode mode) {
  TrainConfig c;
  c.mode = mode;
  c.epochs = 2;
  c.batch = 32;
  c.lr = 0.05;
  c.bank_capacity = 64;
  c.seed = 11;
  return c;
}

AttackConfig small_attack(int steps) {
  AttackConfig a;
  a.steps = steps;
  return a;
}

// Fresh robust net plus a briefly trained clean encoder.
EncoderParams<float> start_params(const Task& t, std::uint64_t seed) {
  TrainConfig c = small_config(TrainMode::natural);
  c.seed = seed;
  EncoderParams<float> p = initial_params(t.arch, seed);
  p.clean = train_clean_encoder(t.data.train, Dataset{}, c, t.arch).params.clean;
  return p;
}

std::vector<std::uint8_t> bytes_of(const TrainResult& r) {
  return encode_checkpoint(to_checkpoint(r.params, r.bank ? &*r.bank : nullptr));
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("step schedule") {
  TrainConfig c;
  c.lr = 1.6;
  c.milestones = {35, 60, 90};
  CHECK(lr_at(0, c) == 1.6);
  CHECK(lr_at(34, c) == 1.6);
  CHECK(lr_at(40, c) == doctest::Approx(0.16).epsilon(1e-12));
  CHECK(lr_at(95, c) == doctest::Approx(0.0016).epsilon(1e-12));
  CHECK_THROWS_AS(lr_at(-1, c), Error);
}

TEST_CASE("sgd arithmetic") {
  Tensor<float> w(Shape{2}, {1.0F, -2.0F});
  Tensor<float>* ptrs[] = {&w};
  const Tensor<float> g[] = {Tensor<float>(Shape{2}, {0.5F, 0.25F})};
  const double wd[] = {0.1};
  const double scale[] = {0.5};
  Sgd opt(0.9);
  opt.step(ptrs, g, wd, scale, 0.2);
  // v = g + wd w = (0.6, 0.05); w -= 0.2 * 0.5 * v
  CHECK(w[0] == doctest::Approx(0.94).epsilon(1e-6));
  CHECK(w[1] == doctest::Approx(-2.005).epsilon(1e-6));
  opt.step(ptrs, g, wd, scale, 0.2);
  // v = 0.9 (0.6, 0.05) + (0.5 + 0.094, 0.25 - 0.2005)
  const double v0 = 0.9 * 0.6 + 0.5 + 0.1 * 0.94;
  CHECK(w[0] == doctest::Approx(0.94 - 0.1 * v0).epsilon(1e-6));
  CHECK(opt.velocity().size() == 1);
}

TEST_CASE("mode table") {
  CHECK(is_free(TrainMode::free_that));
  CHECK_FALSE(is_free(TrainMode::that));
  CHECK(is_adversarial(TrainMode::standard_at_kl));
  CHECK_FALSE(is_adversarial(TrainMode::natural_cl));
  CHECK(needs_clean_encoder(TrainMode::that));
  CHECK(needs_clean_encoder(TrainMode::natural_cl));
  CHECK_FALSE(needs_clean_encoder(TrainMode::standard_at));
  CHECK(parse_train_mode(to_string(TrainMode::that_no_nce)) == TrainMode::that_no_nce);
  CHECK_THROWS_AS(parse_train_mode("bogus"), Error);
}

TEST_CASE("pass counters") {
  const Task t = small_task();
  const std::uint64_t B = (t.data.train.size() + 31) / 32;
  const auto init = initial_params(t.arch, 1);

  const auto natural = train(t.data.train, {}, small_config(TrainMode::natural), small_attack(4),
                             LossConfig{}, init);
  CHECK(natural.metrics.passes == 2 * B);
  CHECK(natural.metrics.batches == 2 * B);

  const auto at = train(t.data.train, {}, small_config(TrainMode::standard_at), small_attack(4),
                        LossConfig{}, init);
  CHECK(at.metrics.passes == 2 * B * 5);

  for (int m : {1, 2}) {
    TrainConfig c = small_config(TrainMode::free_at);
    c.epochs = 4;
    c.replays = m;
    const auto r = train(t.data.train, {}, c, small_attack(4), LossConfig{}, init);
    CHECK(r.metrics.batches == static_cast<std::uint64_t>(4 / m) * B);
    CHECK(r.metrics.passes == r.metrics.batches * static_cast<std::uint64_t>(m));
  }
}

TEST_CASE("contrastive modes push clean features into the bank") {
  const Task t = small_task();
  const auto init = start_params(t, 2);
  const auto r = train(t.data.train, {}, small_config(TrainMode::that), small_attack(2),
                       LossConfig{}, init);
  REQUIRE(r.bank.has_value());
  CHECK(r.metrics.bank_pushes == 2 * t.data.train.size());
  CHECK(r.bank->cursor() == (2 * t.data.train.size()) % 64);
  // The frozen policy leaves the clean encoder untouched.
  CHECK(encode_checkpoint(to_checkpoint(r.params)) != encode_checkpoint(to_checkpoint(init)));
  CHECK(r.params.clean.classifier == init.clean.classifier);
  CHECK(r.params.clean.feature_out.weight == init.clean.feature_out.weight);
}

TEST_CASE("training is deterministic and thread independent") {
  const Task t = small_task();
  const auto init = start_params(t, 3);
  for (TrainMode mode : {TrainMode::that, TrainMode::free_that, TrainMode::standard_at_kl}) {
    TrainConfig c = small_config(mode);
    const auto a = train(t.data.train, t.data.test, c, small_attack(2), LossConfig{}, init);
    const auto b = train(t.data.train, t.data.test, c, small_attack(2), LossConfig{}, init);
    c.threads = 3;
    const auto d = train(t.data.train, t.data.test, c, small_attack(2), LossConfig{}, init);
    CHECK(bytes_of(a) == bytes_of(b));
    CHECK(bytes_of(a) == bytes_of(d));
    CHECK(a.metrics.csv(10) == d.metrics.csv(10));
  }
}

TEST_CASE("checkpoint directory receives epochs and the best snapshot") {
  const Task t = small_task();
  const auto dir = std::filesystem::temp_directory_path() / "that_ckpt_test";
  std::filesystem::remove_all(dir);
  TrainConfig c = small_config(TrainMode::standard_at);
  c.checkpoint_dir = dir.string();
  const auto r = train(t.data.train, t.data.test, c, small_attack(2), LossConfig{},
                       initial_params(t.arch, 4));
  CHECK(std::filesystem::exists(dir / "epoch-000.ckpt"));
  CHECK(std::filesystem::exists(dir / "epoch-001.ckpt"));
  CHECK(std::filesystem::exists(dir / "best.ckpt"));
  CHECK(std::filesystem::exists(dir / "metrics.csv"));
  CHECK(encode_checkpoint(read_checkpoint((dir / "epoch-001.ckpt").string())) == bytes_of(r));
  std::filesystem::remove_all(dir);
}

TEST_CASE("clean encoder learns the desk task") {
  SyntheticConfig s;
  s.per_class = 150;
  s.radius = 0.28;
  const DatasetSplit d = gen_synthetic(s);
  ArchitectureConfig arch;
  arch.width = 48;
  arch.widths = {64};
  arch.feature_hidden = 32;
  arch.feature_dim = 16;
  arch.input_mean = 0.5;
  arch.input_scale = 14.0;
  TrainConfig c;
  c.epochs = 8;
  c.batch = 64;
  c.lr = 0.05;
  const auto r = train_clean_encoder(d.train, d.test, c, arch);
  CHECK(r.params.head == HeadKind::linear);
  EncoderParams<float> as_robust = r.params;
  as_robust.robust = r.params.clean;
  std::size_t right = 0;
  const auto pred = softmax_classify(as_robust, d.test.images);
  for (std::size_t i = 0; i < pred.size(); ++i) right += pred[i] == d.test.labels[i];
  CHECK(static_cast<double>(right) / static_cast<double>(pred.size()) > 0.9);
}

}  // TEST_SUITE
