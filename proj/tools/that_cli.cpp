// Command-line front end. Talks to the library through the C API only.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "that/c_api.h"

namespace {

struct Failure {
  int code;
  std::string message;
};

void check(int rc, const char* what) {
  if (rc != THAT_OK) {
    throw Failure{rc, std::string(what) + ": " + that_error_name(rc) + ": " + that_last_error()};
  }
}

struct Text {
  char* p = nullptr;
  ~Text() { that_string_free(p); }
  std::string str() const { return p ? p : ""; }
};

template <typename T, void (*Free)(T*)>
struct Handle {
  T* p = nullptr;
  Handle() = default;
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;
  ~Handle() { Free(p); }
};

using Config = Handle<that_config, that_config_free>;
using Dataset = Handle<that_dataset, that_dataset_free>;
using Model = Handle<that_model, that_model_free>;
using Gallery = Handle<that_gallery, that_gallery_free>;

void write_text(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) throw Failure{THAT_IO, "cannot write '" + path + "'"};
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw Failure{THAT_IO, "cannot rename into '" + path + "'"};
}

// Options shared by every subcommand.
struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::vector<std::string> sets;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "Config file (sectioned key = value)");
  sub->add_option("--seed", c.seed, "Run seed");
  sub->add_option("--threads", c.threads, "Worker threads (1 = serial)");
  sub->add_option("--set", c.sets, "Override, section.key=value (repeatable)");
}

// File, then THAT_* environment, then --set, then dedicated flags.
void build_config(Config& cfg, const Common& c,
                  const std::vector<std::string>& extra) {
  if (c.config.empty()) check(that_config_new(&cfg.p), "config");
  else check(that_config_load(c.config.c_str(), &cfg.p), "config");
  check(that_config_apply_env(cfg.p), "environment");
  for (const auto& s : c.sets) check(that_config_set(cfg.p, s.c_str()), "--set");
  for (const auto& s : extra) check(that_config_set(cfg.p, s.c_str()), "option");
  if (c.seed) check(that_config_set(cfg.p, ("run.seed=" + std::to_string(*c.seed)).c_str()), "--seed");
  if (c.threads) check(that_config_set(cfg.p, ("run.threads=" + std::to_string(*c.threads)).c_str()), "--threads");
  check(that_config_validate(cfg.p), "config");
}

void load_split(const Config& cfg, const std::string& split, Dataset& d) {
  int which = THAT_SPLIT_TEST;
  if (split == "train") which = THAT_SPLIT_TRAIN;
  else if (split != "test") throw Failure{THAT_CONFIG, "split must be train or test"};
  check(that_dataset_load(cfg.p, which, &d.p), "dataset");
}

void print_hash(const std::string& path) {
  char hex[65];
  check(that_file_sha256(path.c_str(), hex), "sha256");
  std::cout << "sha256 " << hex << "  " << path << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-head adversarial training at desk scale"};
  app.require_subcommand(1);

  // config
  Common config_common;
  auto* config_cmd = app.add_subcommand("config", "Print the effective configuration");
  add_common(config_cmd, config_common);

  // train-clean
  Common clean_common;
  std::string clean_out = "clean.ckpt", clean_metrics;
  auto* clean_cmd = app.add_subcommand("train-clean", "Train the clean encoder");
  add_common(clean_cmd, clean_common);
  clean_cmd->add_option("--out", clean_out, "Output checkpoint");
  clean_cmd->add_option("--metrics", clean_metrics, "Per-epoch metrics CSV");

  // train
  Common train_common;
  std::string train_mode, train_clean, train_out = "model.ckpt", train_metrics, train_dir;
  auto* train_cmd = app.add_subcommand("train", "Train the robust encoder");
  add_common(train_cmd, train_common);
  train_cmd->add_option("--mode", train_mode, "Training arm");
  train_cmd->add_option("--clean", train_clean, "Clean encoder checkpoint");
  train_cmd->add_option("--out", train_out, "Output checkpoint");
  train_cmd->add_option("--metrics", train_metrics, "Per-epoch metrics CSV");
  train_cmd->add_option("--checkpoint-dir", train_dir, "Epoch checkpoints");

  // attack
  Common attack_common;
  std::string attack_model, attack_kind, attack_split = "test", attack_images, attack_labels;
  std::optional<int> attack_steps;
  bool attack_bytes = false;
  auto* attack_cmd = app.add_subcommand("attack", "Write adversarial examples as IDX");
  add_common(attack_cmd, attack_common);
  attack_cmd->add_option("--model", attack_model, "Model checkpoint")->required();
  attack_cmd->add_option("--attack", attack_kind, "none, fgsm or pgd");
  attack_cmd->add_option("--k-steps", attack_steps, "PGD steps");
  attack_cmd->add_option("--split", attack_split, "train or test");
  attack_cmd->add_option("--images", attack_images, "Output image file")->required();
  attack_cmd->add_option("--labels", attack_labels, "Output label file")->required();
  attack_cmd->add_flag("--bytes", attack_bytes, "Quantise images to bytes");

  // eval
  Common eval_common;
  std::string eval_model, eval_defense, eval_attack, eval_gallery, eval_out, eval_per_class,
      eval_per_sample;
  std::optional<int> eval_steps;
  std::optional<std::size_t> eval_k;
  auto* eval_cmd = app.add_subcommand("eval", "Top-1 accuracy of a defense under attack");
  add_common(eval_cmd, eval_common);
  eval_cmd->add_option("--model", eval_model, "Model checkpoint")->required();
  eval_cmd->add_option("--defense", eval_defense, "softmax or knn");
  eval_cmd->add_option("--attack", eval_attack, "none, fgsm or pgd");
  eval_cmd->add_option("--k-steps", eval_steps, "PGD steps");
  eval_cmd->add_option("--knn-k", eval_k, "Neighbours for the knn defense");
  eval_cmd->add_option("--gallery", eval_gallery, "Gallery file (knn)");
  eval_cmd->add_option("--out", eval_out, "Summary CSV (default stdout)");
  eval_cmd->add_option("--per-class", eval_per_class, "Per-class CSV");
  eval_cmd->add_option("--per-sample", eval_per_sample, "Per-sample CSV");

  // surface
  Common surface_common;
  std::string surface_model, surface_dirs, surface_out, surface_axes;
  std::optional<std::size_t> surface_sample;
  std::optional<double> surface_radius;
  std::optional<int> surface_resolution;
  auto* surface_cmd = app.add_subcommand("surface", "Loss surface around one test sample");
  add_common(surface_cmd, surface_common);
  surface_cmd->add_option("--model", surface_model, "Model checkpoint")->required();
  surface_cmd->add_option("--dirs", surface_dirs, "Direction pair, e.g. adv,rademacher");
  surface_cmd->add_option("--sample", surface_sample, "Test sample index");
  surface_cmd->add_option("--radius", surface_radius, "Half range in units of epsilon");
  surface_cmd->add_option("--resolution", surface_resolution, "Grid points per axis (odd)");
  surface_cmd->add_option("--out", surface_out, "Grid CSV (default stdout)");
  surface_cmd->add_option("--axes", surface_axes, "Coordinate CSV");

  // gallery
  Common gallery_common;
  std::string gallery_model, gallery_out = "gallery.bin";
  auto* gallery_cmd = app.add_subcommand("gallery", "Build the knn gallery");
  add_common(gallery_cmd, gallery_common);
  gallery_cmd->add_option("--model", gallery_model, "Model checkpoint")->required();
  gallery_cmd->add_option("--out", gallery_out, "Gallery file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    Config cfg;
    if (config_cmd->parsed()) {
      build_config(cfg, config_common, {});
      Text t;
      check(that_config_dump(cfg.p, &t.p), "dump");
      std::cout << t.str();
    } else if (clean_cmd->parsed()) {
      build_config(cfg, clean_common, {});
      Model m;
      Text metrics;
      check(that_train_clean(cfg.p, &m.p, &metrics.p), "train-clean");
      check(that_model_save(m.p, clean_out.c_str()), "save");
      if (!clean_metrics.empty()) write_text(clean_metrics, metrics.str());
      print_hash(clean_out);
    } else if (train_cmd->parsed()) {
      std::vector<std::string> extra;
      if (!train_mode.empty()) extra.push_back("train.mode=" + train_mode);
      build_config(cfg, train_common, extra);
      Model clean;
      if (!train_clean.empty()) check(that_model_load(train_clean.c_str(), &clean.p), "clean encoder");
      Model m;
      Text metrics;
      check(that_train(cfg.p, clean.p, train_dir.empty() ? nullptr : train_dir.c_str(), &m.p,
                       &metrics.p),
            "train");
      check(that_model_save(m.p, train_out.c_str()), "save");
      if (!train_metrics.empty()) write_text(train_metrics, metrics.str());
      print_hash(train_out);
    } else if (attack_cmd->parsed()) {
      std::vector<std::string> extra;
      if (!attack_kind.empty()) extra.push_back("eval.attack=" + attack_kind);
      if (attack_steps) extra.push_back("eval.steps=" + std::to_string(*attack_steps));
      build_config(cfg, attack_common, extra);
      Model m;
      check(that_model_load(attack_model.c_str(), &m.p), "model");
      Dataset d, adv;
      load_split(cfg, attack_split, d);
      check(that_attack(cfg.p, m.p, d.p, &adv.p), "attack");
      check(that_dataset_write_idx(adv.p, attack_images.c_str(), attack_labels.c_str(),
                                   attack_bytes ? 0 : 1),
            "write");
    } else if (eval_cmd->parsed()) {
      std::vector<std::string> extra;
      if (!eval_defense.empty()) extra.push_back("eval.defense=" + eval_defense);
      if (!eval_attack.empty()) extra.push_back("eval.attack=" + eval_attack);
      if (eval_steps) extra.push_back("eval.steps=" + std::to_string(*eval_steps));
      if (eval_k) extra.push_back("eval.k=" + std::to_string(*eval_k));
      build_config(cfg, eval_common, extra);
      Model m;
      check(that_model_load(eval_model.c_str(), &m.p), "model");
      Dataset test;
      load_split(cfg, "test", test);
      Gallery g;
      if (!eval_gallery.empty()) check(that_gallery_load(eval_gallery.c_str(), &g.p), "gallery");
      double top1 = 0.0;
      Text report, per_class, per_sample;
      check(that_eval(cfg.p, m.p, test.p, g.p, &top1, &report.p, &per_class.p, &per_sample.p),
            "eval");
      if (eval_out.empty()) std::cout << report.str();
      else write_text(eval_out, report.str());
      if (!eval_per_class.empty()) write_text(eval_per_class, per_class.str());
      if (!eval_per_sample.empty()) write_text(eval_per_sample, per_sample.str());
    } else if (surface_cmd->parsed()) {
      std::vector<std::string> extra;
      if (!surface_dirs.empty()) {
        const auto comma = surface_dirs.find(',');
        if (comma == std::string::npos)
          throw Failure{THAT_CONFIG, "--dirs expects two comma-separated directions"};
        extra.push_back("surface.d1=" + surface_dirs.substr(0, comma));
        extra.push_back("surface.d2=" + surface_dirs.substr(comma + 1));
      }
      if (surface_sample) extra.push_back("surface.sample=" + std::to_string(*surface_sample));
      if (surface_resolution)
        extra.push_back("surface.resolution=" + std::to_string(*surface_resolution));
      if (surface_radius) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.17g", *surface_radius);
        extra.push_back(std::string("surface.radius=") + buf);
      }
      build_config(cfg, surface_common, extra);
      Text sample_text;
      check(that_config_get(cfg.p, "surface.sample", &sample_text.p), "config");
      const std::size_t sample = std::stoull(sample_text.str());
      Model m;
      check(that_model_load(surface_model.c_str(), &m.p), "model");
      Dataset test;
      load_split(cfg, "test", test);
      Text grid, axes;
      check(that_surface(cfg.p, m.p, test.p, sample, nullptr, &grid.p, &axes.p), "surface");
      if (surface_out.empty()) std::cout << grid.str();
      else write_text(surface_out, grid.str());
      if (!surface_axes.empty()) write_text(surface_axes, axes.str());
    } else if (gallery_cmd->parsed()) {
      build_config(cfg, gallery_common, {});
      Model m;
      check(that_model_load(gallery_model.c_str(), &m.p), "model");
      Dataset train;
      load_split(cfg, "train", train);
      Gallery g;
      check(that_gallery_build(cfg.p, m.p, train.p, &g.p), "gallery");
      check(that_gallery_save(g.p, gallery_out.c_str()), "save");
      std::size_t n = 0;
      check(that_gallery_size(g.p, &n), "gallery");
      std::cout << "gallery " << n << " entries -> " << gallery_out << '\n';
    }
  } catch (const Failure& f) {
    std::cerr << "error: " << f.message << '\n';
    return f.code == THAT_CONFIG || f.code == THAT_INVALID_ARGUMENT ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
