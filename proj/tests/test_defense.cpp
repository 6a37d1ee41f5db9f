#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "doctest.h"
#include "helpers.hpp"
#include "oracles.hpp"
#include "that/defense.hpp"

using namespace that;
using namespace testing;

namespace {

GalleryIndex random_gallery(Rng& rng, std::size_t n, std::size_t dim, std::size_t classes) {
  GalleryIndex g;
  g.features = testing::random_unit_rows<float>(rng, n, dim);
  g.labels.resize(n);
  for (auto& l : g.labels) l = static_cast<int>(rng.below(classes));
  g.classes = classes;
  return g;
}

}  // namespace

TEST_SUITE("defense") {

TEST_CASE("single neighbour fixture") {
  GalleryIndex g;
  g.features = Tensor<float>(Shape{2, 2}, {0.6F, 0.8F, -1.0F, 0.0F});
  g.labels = {2, 0};
  g.classes = 3;
  const std::vector<float> q = {1.0F, 0.0F};
  const KnnResult r = knn_confidence(q, g, 1);
  CHECK(r.predicted == 2);
  CHECK(r.confidence[2] == doctest::Approx(0.6).epsilon(1e-7));
  CHECK(r.confidence[0] == 0.0);
  CHECK(r.confidence[1] == 0.0);
}

TEST_CASE("two neighbour weighted sum") {
  GalleryIndex g;
  const double s1 = 0.9, s2 = 0.8;
  g.features = Tensor<float>(Shape{3, 2},
                             {static_cast<float>(s1), static_cast<float>(std::sqrt(1 - s1 * s1)),
                              static_cast<float>(s2), static_cast<float>(-std::sqrt(1 - s2 * s2)),
                              -1.0F, 0.0F});
  g.labels = {3, 7, 7};
  g.classes = 8;
  const std::vector<float> q = {1.0F, 0.0F};
  const KnnResult r = knn_confidence(q, g, 2);
  CHECK(r.predicted == 3);
  CHECK(r.confidence[3] == doctest::Approx(s1).epsilon(1e-6));
  CHECK(r.confidence[7] == doctest::Approx(s2).epsilon(1e-6));
}

TEST_CASE("knn matches brute force retrieval") {
  Rng rng(41);
  for (std::size_t n : {1, 37, 1000, 10000}) {
    const GalleryIndex g = random_gallery(rng, n, 16, 10);
    const auto queries = testing::random_unit_rows<float>(rng, 20, 16);
    for (std::size_t k : {1, 5, 50}) {
      if (k > n) continue;
      for (std::size_t qi = 0; qi < queries.rows(); ++qi) {
        const KnnResult r = knn_confidence(queries.row(qi), g, k);
        const auto expected = oracle_knn(queries.row(qi), g, k);
        for (std::size_t c = 0; c < 10; ++c) REQUIRE(std::abs(r.confidence[c] - expected[c]) < 1e-6);
        REQUIRE(r.predicted == argmax_first<double>(expected));
      }
    }
  }
}

TEST_CASE("k equal to the gallery size ignores row order") {
  Rng rng(46);
  GalleryIndex g = random_gallery(rng, 40, 8, 4);
  const auto q = testing::random_unit_rows<float>(rng, 1, 8);
  const KnnResult a = knn_confidence(q.row(0), g, 40);
  GalleryIndex rev = g;
  for (std::size_t r = 0; r < 40; ++r) {
    rev.labels[r] = g.labels[39 - r];
    for (std::size_t d = 0; d < 8; ++d) rev.features.at(r, d) = g.features.at(39 - r, d);
  }
  const KnnResult b = knn_confidence(q.row(0), rev, 40);
  CHECK(a.predicted == b.predicted);
  for (std::size_t c = 0; c < 4; ++c) CHECK(a.confidence[c] == doctest::Approx(b.confidence[c]).epsilon(1e-12));
}

TEST_CASE("ties go to the lower gallery row") {
  GalleryIndex g;
  g.features = Tensor<float>(Shape{3, 2}, {1, 0, 1, 0, 1, 0});
  g.labels = {4, 1, 2};
  g.classes = 5;
  const std::vector<float> q = {1.0F, 0.0F};
  CHECK(knn_confidence(q, g, 1).predicted == 4);
  const KnnResult two = knn_confidence(q, g, 2);
  CHECK(two.confidence[2] == 0.0);
  CHECK(two.predicted == 1);
}

TEST_CASE("knn errors") {
  GalleryIndex empty;
  empty.classes = 3;
  empty.features = Tensor<float>(Shape{0, 2});
  const std::vector<float> q = {1.0F, 0.0F};
  try {
    knn_confidence(q, empty, 1);
    FAIL("expected empty_gallery");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::empty_gallery);
  }
  Rng rng(42);
  const GalleryIndex g = random_gallery(rng, 4, 2, 3);
  try {
    knn_confidence(q, g, 0);
    FAIL("expected invalid_k");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::invalid_k);
  }
  try {
    knn_confidence(q, g, 5);
    FAIL("expected invalid_k");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::invalid_k);
  }
}

TEST_CASE("argmax_first") {
  const std::vector<double> v = {0.1, 0.5, 0.5, 0.2};
  CHECK(argmax_first<double>(v) == 1);
}

TEST_CASE("softmax defense properties") {
  const ArchitectureConfig arch = testing::tiny_mlp(6, 4);
  Rng rng(43);
  auto p = init_params<float>(arch, rng);
  testing::randomize(p.robust, rng);
  const auto x = testing::random_tensor<float>(rng, {30, 6}, 0.0, 1.0);
  const auto base = softmax_classify(p, x);

  auto scaled = p;
  for (float& v : scaled.robust.classifier.data()) v *= 3.5F;
  CHECK(softmax_classify(scaled, x) == base);

  // Equal class-weight norms: the cosine head agrees with raw logits.
  auto eq = p;
  for (std::size_t c = 0; c < arch.classes; ++c) {
    double n = 0.0;
    for (std::size_t r = 0; r < eq.robust.classifier.rows(); ++r)
      n += std::pow(eq.robust.classifier.at(r, c), 2);
    for (std::size_t r = 0; r < eq.robust.classifier.rows(); ++r)
      eq.robust.classifier.at(r, c) = static_cast<float>(eq.robust.classifier.at(r, c) / std::sqrt(n));
  }
  auto cos = eq;
  cos.head = HeadKind::cosine;
  CHECK(softmax_classify(cos, x) == softmax_classify(eq, x));
}

TEST_CASE("gallery build and round trip") {
  const ArchitectureConfig arch = testing::tiny_mlp(6, 3);
  Rng rng(44);
  auto p = init_params<float>(arch, rng);
  testing::randomize(p.clean, rng);
  Dataset d;
  d.images = testing::random_tensor<float>(rng, {25, 6}, 0.0, 1.0);
  d.labels = testing::cyclic_labels(25, 3);
  d.classes = 3;
  d.width = 6;
  const GalleryIndex g = build_gallery(d, p);
  CHECK(g.size() == 25);
  for (std::size_t r = 0; r < 25; ++r) CHECK(std::abs(l2_norm(g.features.row(r)) - 1.0F) < 1e-4F);
  CHECK(build_gallery(d, p, Executor(3)).features == g.features);

  const auto path = (std::filesystem::temp_directory_path() / "that_gallery_test.bin").string();
  save_gallery(path, g);
  const GalleryIndex back = load_gallery(path);
  CHECK(back.features == g.features);
  CHECK(back.labels == g.labels);
  CHECK(back.classes == 3);
  std::filesystem::remove(path);
}

TEST_CASE("evaluate on a memorised set") {
  // One-hot inputs with an identity-like network memorise their labels.
  ArchitectureConfig arch;
  arch.width = 4;
  arch.widths = {4};
  arch.feature_hidden = 4;
  arch.feature_dim = 4;
  arch.classes = 4;
  Rng rng(45);
  auto p = init_params<float>(arch, rng);
  p.robust.trunk[0].weight = Tensor<float>(Shape{4, 4}, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1});
  p.robust.trunk[0].bias = Tensor<float>(Shape{1, 4});
  p.robust.classifier = p.robust.trunk[0].weight;
  Dataset d;
  d.images = Tensor<float>(Shape{10, 4});
  d.labels.resize(10);
  for (std::size_t i = 0; i < 10; ++i) {
    d.labels[i] = static_cast<int>(i % 4);
    d.images.at(i, i % 4) = 1.0F;
  }
  d.classes = 4;
  d.width = 4;
  EvalSpec spec;
  spec.attack = AttackKind::none;
  const EvalReport r = evaluate(p, d, spec);
  CHECK(r.top1 == 1.0);
  CHECK(r.n == 10);
  CHECK(r.losses.size() == 10);
  CHECK(report_csv_header() == "defense_mode,attack,K,eps,top1,n_samples\n");
  CHECK(report_csv_row(r).rfind("softmax,none,0,", 0) == 0);
}

}  // TEST_SUITE
