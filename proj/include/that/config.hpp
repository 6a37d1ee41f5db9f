#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "that/data.hpp"
#include "that/defense.hpp"
#include "that/surface.hpp"
#include "that/training.hpp"

namespace that {

enum class DataSource { synthetic, idx };

struct DataSection {
  DataSource source = DataSource::synthetic;
  SyntheticConfig synthetic;
  std::string train_images, train_labels;
  std::string test_images, test_labels;
};

// Model keys that do not depend on the data; layout and class count are
// filled in from the dataset.
struct ModelSection {
  TrunkKind trunk = TrunkKind::mlp;
  std::vector<std::size_t> widths = {128, 128};
  std::size_t dense_width = 128;
  std::size_t feature_hidden = 128;
  std::size_t feature_dim = 64;
  double input_mean = 0.0;
  double input_scale = 1.0;
};

// epsilon and step in 1/255 units.
struct AttackSection {
  double epsilon = 8.0;
  double step = 2.0;
  int steps = 10;
  Norm norm = Norm::linf;
  AttackMode mode = AttackMode::untargeted;
  bool random_start = true;
};

struct EvalSection {
  DefenseMode defense = DefenseMode::softmax;
  AttackKind attack = AttackKind::pgd;
  int steps = 10;
  std::size_t k = 50;
  std::size_t samples = 0;  // 0 = the whole test split
};

struct SurfaceSection {
  DirectionKind d1 = DirectionKind::adversarial;
  DirectionKind d2 = DirectionKind::rademacher;
  double radius = 1.0;  // in units of epsilon
  int resolution = 21;
  AttackLoss loss = AttackLoss::classification;
  std::size_t sample = 0;
};

struct RunConfig {
  DataSection data;
  ModelSection model;
  AttackSection attack;
  LossConfig loss;
  std::size_t bank_capacity = 1024;
  TrainConfig train;
  EvalSection eval;
  SurfaceSection surface;
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  // Sectioned "key = value" text. dump() lists every key; parse(dump())
  // reproduces the config exactly.
  std::string dump() const;
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::string& path);

  // "section.key=value", as given to --set.
  void set(const std::string& assignment);
  void set(const std::string& section, const std::string& key,
           const std::string& value);
  // Value of "section.key" in dump() form.
  std::string get(const std::string& qualified_key) const;
  // THAT_<SECTION>_<KEY> environment variables override file values.
  void apply_env();

  void validate() const;

  ArchitectureConfig architecture(const Dataset& d) const;
  AttackConfig attack_config() const;
  TrainConfig train_config() const;
  EvalSpec eval_spec() const;
  SurfaceSpec surface_spec() const;
  Executor executor() const { return Executor(threads); }
};

DatasetSplit load_data(const RunConfig& cfg);

// Every (section, key) pair in dump order.
std::vector<std::pair<std::string, std::string>> config_keys();

}  // namespace that
