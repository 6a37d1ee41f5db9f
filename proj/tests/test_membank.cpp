#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "that/membank.hpp"

using namespace that;

namespace {

Tensor<float> rows_of(std::initializer_list<std::vector<float>> rows) {
  std::vector<float> data;
  for (const auto& r : rows) data.insert(data.end(), r.begin(), r.end());
  return Tensor<float>(Shape{rows.size(), rows.begin()->size()}, data);
}

}  // namespace

TEST_SUITE("membank") {

TEST_CASE("init fills unit vectors deterministically") {
  Rng r1(1), r2(1);
  const MemoryBank a(64, 16, r1), b(64, 16, r2);
  CHECK(a.entries() == b.entries());
  CHECK(a.fill() == 64);
  CHECK(a.cursor() == 0);
  CHECK(a.negatives().rows() == 64);
  for (std::size_t r = 0; r < 64; ++r) CHECK(std::abs(l2_norm(a.entries().row(r)) - 1.0F) < 1e-4F);
}

TEST_CASE("init is uniform on the sphere") {
  Rng rng(2);
  const MemoryBank bank(1024, 128, rng);
  Rng pick(3);
  double total = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const auto a = pick.below(1024);
    auto b = pick.below(1024);
    while (b == a) b = pick.below(1024);
    total += std::abs(dot(bank.entries().row(a), bank.entries().row(b)));
  }
  CHECK(total / 1000.0 < 0.2);
}

TEST_CASE("capacity must be a power of two") {
  Rng rng(4);
  CHECK_THROWS_AS(MemoryBank(6, 4, rng), Error);
  CHECK_THROWS_AS(MemoryBank(0, 4, rng), Error);
}

TEST_CASE("ring arithmetic") {
  Rng rng(5);
  MemoryBank bank(4, 2, rng);
  const Tensor<float> init = bank.entries();
  const std::vector<float> a = {1, 0}, b = {0, 1}, c = {-1, 0}, d = {0, -1}, e = {0.6F, 0.8F};
  bank.push_batch(rows_of({a, b}));
  CHECK(bank.cursor() == 2);
  CHECK(bank.entries().row(2)[0] == init.row(2)[0]);
  bank.push_batch(rows_of({c, d, e}));
  CHECK(bank.cursor() == 1);
  const Tensor<float> expected = rows_of({e, b, c, d});
  CHECK(bank.entries() == expected);
  CHECK(bank.fill() == 4);
}

TEST_CASE("pushing capacity vectors replaces everything") {
  Rng rng(6);
  MemoryBank bank(8, 3, rng);
  const auto fresh = testing::random_unit_rows<float>(rng, 8, 3);
  bank.push_batch(fresh);
  for (std::size_t i = 0; i < fresh.size(); ++i)
    CHECK(bank.entries()[i] == doctest::Approx(fresh[i]).epsilon(1e-6));
  CHECK(bank.cursor() == 0);
}

TEST_CASE("inputs are renormalised on insert") {
  Rng rng(7);
  MemoryBank bank(2, 2, rng);
  bank.push_batch(rows_of({{3, 4}}));
  CHECK(bank.entries().at(0, 0) == doctest::Approx(0.6));
  CHECK(bank.entries().at(0, 1) == doctest::Approx(0.8));
  CHECK_THROWS_AS(bank.push_batch(rows_of({{1, 2, 3}})), Error);
}

TEST_CASE("negatives contain the last pushed vector and are not deduplicated") {
  Rng rng(8);
  MemoryBank bank(4, 2, rng);
  bank.push_batch(rows_of({{1, 0}, {1, 0}}));
  const Tensor<float> neg = bank.negatives();
  CHECK(neg.rows() == 4);
  int hits = 0;
  for (std::size_t r = 0; r < 4; ++r) hits += neg.at(r, 0) == 1.0F && neg.at(r, 1) == 0.0F;
  CHECK(hits == 2);
  const Tensor<float> t = bank.negatives_transposed();
  CHECK(t.shape() == Shape{2, 4});
}

TEST_CASE("state round trip") {
  Rng rng(9);
  MemoryBank bank(8, 3, rng);
  bank.push_batch(testing::random_unit_rows<float>(rng, 3, 3));
  const MemoryBank back = MemoryBank::from_state(bank.entries(), bank.cursor(), bank.fill());
  CHECK(back.entries() == bank.entries());
  CHECK(back.cursor() == 3);
  CHECK_THROWS_AS(MemoryBank::from_state(bank.entries(), 9, 8), Error);
  Tensor<float> scaled = bank.entries();
  scaled[0] *= 2.0F;
  CHECK_THROWS_AS(MemoryBank::from_state(scaled, 0, 8), Error);
}

}  // TEST_SUITE
