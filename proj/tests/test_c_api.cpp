#include <cstdlib>
#include <cstring>
#include <string>

#include "api_fixture.hpp"
#include "doctest.h"
#include "that/c_api.h"

namespace {

std::string take(char* s) {
  std::string out = s ? s : "";
  that_string_free(s);
  return out;
}

that_config* tiny_config() {
  that_config* cfg = nullptr;
  REQUIRE(that_config_parse(kTinyConfig, &cfg) == THAT_OK);
  return cfg;
}

}  // namespace

TEST_SUITE("c_api") {

TEST_CASE("config access and error reporting") {
  that_config* cfg = tiny_config();
  char* v = nullptr;
  REQUIRE(that_config_get(cfg, "train.epochs", &v) == THAT_OK);
  CHECK(take(v) == "2");
  CHECK(that_config_set(cfg, "train.epochs=5") == THAT_OK);
  REQUIRE(that_config_get(cfg, "train.epochs", &v) == THAT_OK);
  CHECK(take(v) == "5");

  CHECK(that_config_set(cfg, "train.nope=1") == THAT_CONFIG);
  CHECK(std::strstr(that_last_error(), "nope") != nullptr);
  CHECK(std::string(that_error_name(THAT_CONFIG)) == "configuration error");
  CHECK(that_config_set(nullptr, "train.epochs=1") == THAT_INVALID_ARGUMENT);

  that_config* missing = nullptr;
  CHECK(that_config_load("/nonexistent/that.cfg", &missing) == THAT_IO);
  CHECK(missing == nullptr);

  char* text = nullptr;
  REQUIRE(that_config_dump(cfg, &text) == THAT_OK);
  that_config* again = nullptr;
  REQUIRE(that_config_parse(text, &again) == THAT_OK);
  char* text2 = nullptr;
  REQUIRE(that_config_dump(again, &text2) == THAT_OK);
  CHECK(take(text) == take(text2));
  that_config_free(again);
  that_config_free(cfg);
}

TEST_CASE("datasets") {
  that_config* cfg = tiny_config();
  that_dataset* train = nullptr;
  REQUIRE(that_dataset_load(cfg, THAT_SPLIT_TRAIN, &train) == THAT_OK);
  std::size_t n = 0, dim = 0, classes = 0;
  REQUIRE(that_dataset_info(train, &n, &dim, &classes) == THAT_OK);
  CHECK(n == 96);
  CHECK(dim == 8);
  CHECK(classes == 3);
  float row[8];
  int label = -1;
  CHECK(that_dataset_row(train, 0, row, &label) == THAT_OK);
  CHECK(label >= 0);
  CHECK(that_dataset_row(train, n, row, &label) == THAT_INVALID_ARGUMENT);
  CHECK(that_dataset_load(cfg, 7, &train) == THAT_INVALID_ARGUMENT);

  const auto dir = scratch_dir("that_api_idx");
  const auto ip = (dir / "img").string(), lp = (dir / "lbl").string();
  REQUIRE(that_dataset_write_idx(train, ip.c_str(), lp.c_str(), 1) == THAT_OK);
  that_dataset* back = nullptr;
  REQUIRE(that_dataset_read_idx(ip.c_str(), lp.c_str(), 3, &back) == THAT_OK);
  float row2[8];
  int label2 = -1;
  for (std::size_t i = 0; i < n; ++i) {
    that_dataset_row(train, i, row, &label);
    that_dataset_row(back, i, row2, &label2);
    CHECK(std::memcmp(row, row2, sizeof row) == 0);
    CHECK(label == label2);
  }
  that_dataset* bad = nullptr;
  CHECK(that_dataset_read_idx(lp.c_str(), ip.c_str(), 0, &bad) == THAT_BAD_MAGIC);
  that_dataset_free(back);
  that_dataset_free(train);
  that_config_free(cfg);
  std::filesystem::remove_all(dir);
}

TEST_CASE("train, evaluate and inspect a model") {
  that_config* cfg = tiny_config();
  that_model* clean = nullptr;
  char* metrics = nullptr;
  REQUIRE(that_train_clean(cfg, &clean, &metrics) == THAT_OK);
  CHECK(take(metrics).rfind("epoch,", 0) == 0);

  that_model* robust = nullptr;
  CHECK(that_train(cfg, nullptr, nullptr, &robust, nullptr) == THAT_CONFIG);
  REQUIRE(that_train(cfg, clean, nullptr, &robust, nullptr) == THAT_OK);

  const auto dir = scratch_dir("that_api_model");
  const auto path = (dir / "m.ckpt").string();
  REQUIRE(that_model_save(robust, path.c_str()) == THAT_OK);
  char h1[65], h2[65];
  REQUIRE(that_file_sha256(path.c_str(), h1) == THAT_OK);
  that_model* loaded = nullptr;
  REQUIRE(that_model_load(path.c_str(), &loaded) == THAT_OK);
  const auto path2 = (dir / "m2.ckpt").string();
  REQUIRE(that_model_save(loaded, path2.c_str()) == THAT_OK);
  REQUIRE(that_file_sha256(path2.c_str(), h2) == THAT_OK);
  CHECK(std::string(h1) == h2);

  that_dataset* test = nullptr;
  that_dataset* train = nullptr;
  REQUIRE(that_dataset_load(cfg, THAT_SPLIT_TEST, &test) == THAT_OK);
  REQUIRE(that_dataset_load(cfg, THAT_SPLIT_TRAIN, &train) == THAT_OK);
  double top1 = -1.0;
  char* report = nullptr;
  REQUIRE(that_eval(cfg, loaded, test, nullptr, &top1, &report, nullptr, nullptr) == THAT_OK);
  CHECK(top1 >= 0.0);
  CHECK(top1 <= 1.0);
  CHECK(take(report).rfind("defense_mode,attack,K,eps,top1,n_samples\nsoftmax,pgd,3,", 0) == 0);

  that_config_set(cfg, "eval.defense=knn");
  CHECK(that_eval(cfg, loaded, test, nullptr, &top1, nullptr, nullptr, nullptr) ==
        THAT_EMPTY_GALLERY);
  that_gallery* gallery = nullptr;
  REQUIRE(that_gallery_build(cfg, loaded, train, &gallery) == THAT_OK);
  std::size_t gsize = 0;
  that_gallery_size(gallery, &gsize);
  CHECK(gsize == 96);
  CHECK(that_eval(cfg, loaded, test, gallery, &top1, nullptr, nullptr, nullptr) == THAT_OK);

  double center = 0.0;
  char* grid = nullptr;
  REQUIRE(that_surface(cfg, loaded, test, 0, &center, &grid, nullptr) == THAT_OK);
  CHECK(take(grid).find("# resolution=5") != std::string::npos);
  CHECK(center >= 0.0);
  CHECK(that_surface(cfg, loaded, test, 1000, &center, nullptr, nullptr) ==
        THAT_INVALID_ARGUMENT);

  that_dataset* adv = nullptr;
  REQUIRE(that_attack(cfg, loaded, test, &adv) == THAT_OK);
  std::size_t an = 0, ad = 0, ac = 0;
  that_dataset_info(adv, &an, &ad, &ac);
  CHECK(an == 24);

  that_dataset_free(adv);
  that_gallery_free(gallery);
  that_dataset_free(train);
  that_dataset_free(test);
  that_model_free(loaded);
  that_model_free(robust);
  that_model_free(clean);
  that_config_free(cfg);
  std::filesystem::remove_all(dir);
}

TEST_CASE("null handles are rejected") {
  that_model* m = nullptr;
  CHECK(that_model_load(nullptr, &m) == THAT_INVALID_ARGUMENT);
  CHECK(that_model_load("/nonexistent/m.ckpt", &m) == THAT_IO);
  CHECK(that_gallery_size(nullptr, nullptr) == THAT_INVALID_ARGUMENT);
  that_config_free(nullptr);
  that_model_free(nullptr);
  that_string_free(nullptr);
}

}  // TEST_SUITE
