#include "that/c_api.h"

#include <cstring>
#include <new>
#include <optional>
#include <string>

#include "that/checkpoint.hpp"
#include "that/config.hpp"
#include "that/store.hpp"

struct that_config {
  that::RunConfig cfg;
};

struct that_dataset {
  that::Dataset data;
};

struct that_model {
  that::EncoderParams<float> params;
  std::optional<that::MemoryBank> bank;
};

struct that_gallery {
  that::GalleryIndex index;
};

namespace {

thread_local std::string g_last_error;

int record(int code, const std::string& message) {
  g_last_error = message;
  return code;
}

template <typename F>
int guard(F&& body) {
  try {
    g_last_error.clear();
    body();
    return THAT_OK;
  } catch (const that::Error& e) {
    return record(static_cast<int>(e.code()), e.what());
  } catch (const std::bad_alloc&) {
    return record(THAT_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return record(THAT_INTERNAL, e.what());
  } catch (...) {
    return record(THAT_INTERNAL, "unknown error");
  }
}

void need(const void* p, const char* what) {
  if (p == nullptr)
    that::fail(that::ErrorCode::invalid_argument, std::string(what) + " is NULL");
}

char* dup(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void put(char** out, const std::string& s) {
  if (out != nullptr) *out = dup(s);
}

// Training reads both splits: the train split for updates, the test split
// for the per-epoch accuracy columns.
that::DatasetSplit data_for(const that::RunConfig& cfg) {
  that::DatasetSplit s = that::load_data(cfg);
  s.train.validate();
  s.test.validate();
  return s;
}

}  // namespace

extern "C" {

const char* that_last_error(void) { return g_last_error.c_str(); }

const char* that_error_name(int code) {
  if (code < 0 || code > THAT_FORMAT) return "unknown";
  return that::to_string(static_cast<that::ErrorCode>(code));
}

void that_string_free(char* s) { std::free(s); }

int that_config_new(that_config** out) {
  return guard([&] {
    need(out, "out");
    *out = new that_config{};
  });
}

int that_config_load(const char* path, that_config** out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    *out = new that_config{that::RunConfig::load(path)};
  });
}

int that_config_parse(const char* text, that_config** out) {
  return guard([&] {
    need(text, "text");
    need(out, "out");
    *out = new that_config{that::RunConfig::parse(text)};
  });
}

int that_config_set(that_config* cfg, const char* assignment) {
  return guard([&] {
    need(cfg, "cfg");
    need(assignment, "assignment");
    cfg->cfg.set(assignment);
  });
}

int that_config_get(const that_config* cfg, const char* key, char** value) {
  return guard([&] {
    need(cfg, "cfg");
    need(key, "key");
    need(value, "value");
    *value = dup(cfg->cfg.get(key));
  });
}

int that_config_apply_env(that_config* cfg) {
  return guard([&] {
    need(cfg, "cfg");
    cfg->cfg.apply_env();
  });
}

int that_config_validate(const that_config* cfg) {
  return guard([&] {
    need(cfg, "cfg");
    cfg->cfg.validate();
  });
}

int that_config_dump(const that_config* cfg, char** text) {
  return guard([&] {
    need(cfg, "cfg");
    need(text, "text");
    *text = dup(cfg->cfg.dump());
  });
}

void that_config_free(that_config* cfg) { delete cfg; }

int that_dataset_load(const that_config* cfg, int split, that_dataset** out) {
  return guard([&] {
    need(cfg, "cfg");
    need(out, "out");
    if (split != THAT_SPLIT_TRAIN && split != THAT_SPLIT_TEST)
      that::fail(that::ErrorCode::invalid_argument, "split must be train or test");
    that::DatasetSplit s = data_for(cfg->cfg);
    *out = new that_dataset{split == THAT_SPLIT_TRAIN ? std::move(s.train) : std::move(s.test)};
  });
}

int that_dataset_read_idx(const char* images, const char* labels, size_t classes,
                          that_dataset** out) {
  return guard([&] {
    need(images, "images");
    need(labels, "labels");
    need(out, "out");
    *out = new that_dataset{that::parse_idx(images, labels, classes)};
  });
}

int that_dataset_write_idx(const that_dataset* d, const char* images,
                           const char* labels, int as_float) {
  return guard([&] {
    need(d, "dataset");
    need(images, "images");
    need(labels, "labels");
    that::write_idx(d->data, images, labels, as_float != 0);
  });
}

int that_dataset_info(const that_dataset* d, size_t* size, size_t* dim,
                      size_t* classes) {
  return guard([&] {
    need(d, "dataset");
    if (size) *size = d->data.size();
    if (dim) *dim = d->data.dim();
    if (classes) *classes = d->data.classes;
  });
}

int that_dataset_row(const that_dataset* d, size_t index, float* out, int* label) {
  return guard([&] {
    need(d, "dataset");
    if (index >= d->data.size())
      that::fail(that::ErrorCode::invalid_argument, "row index out of range");
    if (out) {
      const auto row = d->data.images.row(index);
      std::copy(row.begin(), row.end(), out);
    }
    if (label) *label = d->data.labels[index];
  });
}

void that_dataset_free(that_dataset* d) { delete d; }

int that_model_load(const char* path, that_model** out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    const that::Checkpoint c = that::read_checkpoint(path);
    *out = new that_model{that::params_from_checkpoint(c), that::bank_from_checkpoint(c)};
  });
}

int that_model_save(const that_model* m, const char* path) {
  return guard([&] {
    need(m, "model");
    need(path, "path");
    that::save_model(path, m->params, m->bank ? &*m->bank : nullptr);
  });
}

void that_model_free(that_model* m) { delete m; }

int that_train_clean(const that_config* cfg, that_model** out, char** metrics_csv) {
  return guard([&] {
    need(cfg, "cfg");
    need(out, "out");
    const that::RunConfig& rc = cfg->cfg;
    rc.validate();
    const that::DatasetSplit s = data_for(rc);
    const that::TrainConfig tc = rc.train_config();
    that::TrainResult r =
        that::train_clean_encoder(s.train, s.test, tc, rc.architecture(s.train));
    put(metrics_csv, r.metrics.csv(tc.eval_steps));
    *out = new that_model{std::move(r.params), std::nullopt};
  });
}

int that_train(const that_config* cfg, const that_model* clean,
               const char* checkpoint_dir, that_model** out, char** metrics_csv) {
  return guard([&] {
    need(cfg, "cfg");
    need(out, "out");
    const that::RunConfig& rc = cfg->cfg;
    rc.validate();
    that::TrainConfig tc = rc.train_config();
    if (that::needs_clean_encoder(tc.mode) && clean == nullptr)
      that::fail(that::ErrorCode::config,
                 std::string("mode ") + that::to_string(tc.mode) +
                     " needs a trained clean encoder (run train-clean first)");
    if (checkpoint_dir != nullptr) tc.checkpoint_dir = checkpoint_dir;
    const that::DatasetSplit s = data_for(rc);
    const that::ArchitectureConfig arch = rc.architecture(s.train);
    that::EncoderParams<float> init = that::initial_params(arch, tc.seed);
    if (clean != nullptr) {
      if (!(clean->params.arch == arch))
        that::fail(that::ErrorCode::config,
                   "clean encoder architecture does not match the config");
      init.clean = clean->params.clean;
    }
    that::TrainResult r =
        that::train(s.train, s.test, tc, rc.attack_config(), rc.loss, std::move(init));
    put(metrics_csv, r.metrics.csv(tc.eval_steps));
    *out = new that_model{std::move(r.params), std::move(r.bank)};
  });
}

int that_attack(const that_config* cfg, const that_model* m, const that_dataset* d,
                that_dataset** out) {
  return guard([&] {
    need(cfg, "cfg");
    need(m, "model");
    need(d, "dataset");
    need(out, "out");
    const that::RunConfig& rc = cfg->cfg;
    rc.validate();
    that::Dataset adv = d->data;
    adv.images = that::eval_inputs(m->params, d->data, rc.eval_spec(), rc.executor());
    *out = new that_dataset{std::move(adv)};
  });
}

int that_eval(const that_config* cfg, const that_model* m, const that_dataset* test,
              const that_gallery* gallery, double* top1, char** report_csv,
              char** per_class_csv, char** per_sample_csv) {
  return guard([&] {
    need(cfg, "cfg");
    need(m, "model");
    need(test, "dataset");
    const that::RunConfig& rc = cfg->cfg;
    rc.validate();
    const that::EvalSpec spec = rc.eval_spec();
    if (spec.defense == that::DefenseMode::knn && gallery == nullptr)
      that::fail(that::ErrorCode::empty_gallery, "the knn defense needs a gallery");
    that::Dataset data = test->data;
    if (rc.eval.samples != 0 && rc.eval.samples < data.size())
      data = data.subset(0, rc.eval.samples);
    const that::EvalReport r = that::evaluate(
        m->params, data, spec, gallery ? &gallery->index : nullptr, rc.executor());
    if (top1) *top1 = r.top1;
    put(report_csv, that::report_csv_header() + that::report_csv_row(r));
    put(per_class_csv, that::per_class_csv(r));
    put(per_sample_csv, that::per_sample_csv(r, data));
  });
}

int that_surface(const that_config* cfg, const that_model* m, const that_dataset* test,
                 size_t index, double* center, char** grid_csv, char** axes_csv) {
  return guard([&] {
    need(cfg, "cfg");
    need(m, "model");
    need(test, "dataset");
    const that::RunConfig& rc = cfg->cfg;
    rc.validate();
    if (index >= test->data.size())
      that::fail(that::ErrorCode::invalid_argument, "surface sample index out of range");
    const that::Dataset one = test->data.subset(index, index + 1);
    const that::SurfaceSpec spec = rc.surface_spec();
    const that::SurfaceGrid grid =
        that::loss_grid(one.images, one.labels[0], m->params, spec, rc.executor());
    if (center) *center = grid.center;
    put(grid_csv, that::surface_csv(grid, spec, index));
    put(axes_csv, that::surface_axes_csv(grid));
  });
}

int that_gallery_build(const that_config* cfg, const that_model* m,
                       const that_dataset* train, that_gallery** out) {
  return guard([&] {
    need(cfg, "cfg");
    need(m, "model");
    need(train, "dataset");
    need(out, "out");
    *out = new that_gallery{that::build_gallery(train->data, m->params, cfg->cfg.executor())};
  });
}

int that_gallery_save(const that_gallery* g, const char* path) {
  return guard([&] {
    need(g, "gallery");
    need(path, "path");
    that::save_gallery(path, g->index);
  });
}

int that_gallery_load(const char* path, that_gallery** out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    *out = new that_gallery{that::load_gallery(path)};
  });
}

int that_gallery_size(const that_gallery* g, size_t* size) {
  return guard([&] {
    need(g, "gallery");
    need(size, "size");
    *size = g->index.size();
  });
}

void that_gallery_free(that_gallery* g) { delete g; }

int that_file_sha256(const char* path, char* out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    const std::string h = that::file_sha256(path);
    std::memcpy(out, h.c_str(), h.size() + 1);
  });
}

}  // extern "C"
