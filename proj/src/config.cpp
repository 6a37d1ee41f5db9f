#include "that/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "that/strings.hpp"

namespace that {

namespace {

struct Field {
  const char* section;
  const char* key;
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

const char* to_string(DataSource d) noexcept {
  return d == DataSource::idx ? "idx" : "synthetic";
}

DataSource parse_source(const std::string& t) {
  if (t == "synthetic") return DataSource::synthetic;
  if (t == "idx") return DataSource::idx;
  fail(ErrorCode::config, "unknown data source '" + t + "'");
}

Field size_field(const char* s, const char* k, std::size_t& v) {
  return {s, k, [&v] { return std::to_string(v); },
          [&v, s, k](const std::string& t) { v = parse_size(t, std::string(s) + "." + k); }};
}

Field u64_field(const char* s, const char* k, std::uint64_t& v) {
  return {s, k, [&v] { return std::to_string(v); },
          [&v, s, k](const std::string& t) { v = parse_u64(t, std::string(s) + "." + k); }};
}

Field int_field(const char* s, const char* k, int& v) {
  return {s, k, [&v] { return std::to_string(v); },
          [&v, s, k](const std::string& t) {
            const std::string name = std::string(s) + "." + k;
            const std::size_t n = parse_size(t, name);
            if (n > 1000000000) fail(ErrorCode::config, "'" + name + "': value too large");
            v = static_cast<int>(n);
          }};
}

Field double_field(const char* s, const char* k, double& v) {
  return {s, k, [&v] { return format_double(v); },
          [&v, s, k](const std::string& t) { v = parse_double(t, std::string(s) + "." + k); }};
}

Field bool_field(const char* s, const char* k, bool& v) {
  return {s, k, [&v] { return std::string(v ? "true" : "false"); },
          [&v, s, k](const std::string& t) { v = parse_bool(t, std::string(s) + "." + k); }};
}

Field string_field(const char* s, const char* k, std::string& v) {
  return {s, k, [&v] { return v; }, [&v](const std::string& t) { v = t; }};
}

template <typename E, typename Parse>
Field enum_field(const char* s, const char* k, E& v, Parse parse) {
  return {s, k, [&v] { return std::string(to_string(v)); },
          [&v, parse](const std::string& t) { v = parse(t); }};
}

TrunkKind parse_trunk(const std::string& t) {
  if (t == "mlp") return TrunkKind::mlp;
  if (t == "conv") return TrunkKind::conv;
  fail(ErrorCode::config, "unknown trunk '" + t + "'");
}

std::vector<Field> fields(RunConfig& c) {
  auto& syn = c.data.synthetic;
  auto& t = c.train;
  std::vector<Field> f = {
      enum_field("data", "source", c.data.source, parse_source),
      size_field("data", "classes", syn.classes),
      size_field("data", "dim", syn.dim),
      size_field("data", "per_class", syn.per_class),
      double_field("data", "radius", syn.radius),
      double_field("data", "noise", syn.noise),
      u64_field("data", "seed", syn.seed),
      string_field("data", "train_images", c.data.train_images),
      string_field("data", "train_labels", c.data.train_labels),
      string_field("data", "test_images", c.data.test_images),
      string_field("data", "test_labels", c.data.test_labels),

      enum_field("model", "trunk", c.model.trunk, parse_trunk),
      {"model", "widths", [&c] { return join_sizes(c.model.widths); },
       [&c](const std::string& v) { c.model.widths = parse_size_list(v, "model.widths"); }},
      size_field("model", "dense_width", c.model.dense_width),
      size_field("model", "feature_hidden", c.model.feature_hidden),
      size_field("model", "feature_dim", c.model.feature_dim),
      double_field("model", "input_mean", c.model.input_mean),
      double_field("model", "input_scale", c.model.input_scale),

      double_field("attack", "epsilon", c.attack.epsilon),
      double_field("attack", "step", c.attack.step),
      int_field("attack", "steps", c.attack.steps),
      enum_field("attack", "norm", c.attack.norm, parse_norm),
      enum_field("attack", "mode", c.attack.mode, parse_attack_mode),
      bool_field("attack", "random_start", c.attack.random_start),

      double_field("loss", "tau", c.loss.tau),
      double_field("loss", "eta_init", c.loss.eta_init),
      double_field("loss", "kl_weight", c.loss.kl_weight),
      bool_field("loss", "exclude_positive", c.loss.exclude_positive),

      size_field("bank", "capacity", c.bank_capacity),

      enum_field("train", "mode", t.mode, parse_train_mode),
      int_field("train", "epochs", t.epochs),
      size_field("train", "batch", t.batch),
      double_field("train", "lr", t.lr),
      {"train", "milestones",
       [&t] {
         std::vector<std::size_t> m(t.milestones.begin(), t.milestones.end());
         return join_sizes(m);
       },
       [&t](const std::string& v) {
         t.milestones.clear();
         for (std::size_t m : parse_size_list(v, "train.milestones"))
           t.milestones.push_back(static_cast<int>(std::min<std::size_t>(m, 1000000000)));
       }},
      double_field("train", "decay", t.decay),
      double_field("train", "momentum", t.momentum),
      double_field("train", "weight_decay", t.weight_decay),
      double_field("train", "eta_lr_scale", t.eta_lr_scale),
      int_field("train", "replays", t.replays),
      enum_field("train", "clean_policy", t.clean_policy, parse_clean_policy),
      double_field("train", "clean_momentum", t.clean_momentum),
      int_field("train", "eval_steps", t.eval_steps),
      size_field("train", "eval_samples", t.eval_samples),

      enum_field("eval", "defense", c.eval.defense, parse_defense),
      enum_field("eval", "attack", c.eval.attack, parse_attack_kind),
      int_field("eval", "steps", c.eval.steps),
      size_field("eval", "k", c.eval.k),
      size_field("eval", "samples", c.eval.samples),

      enum_field("surface", "d1", c.surface.d1, parse_direction),
      enum_field("surface", "d2", c.surface.d2, parse_direction),
      double_field("surface", "radius", c.surface.radius),
      int_field("surface", "resolution", c.surface.resolution),
      enum_field("surface", "loss", c.surface.loss, parse_attack_loss),
      size_field("surface", "sample", c.surface.sample),

      u64_field("run", "seed", c.seed),
      size_field("run", "threads", c.threads),
  };
  return f;
}

std::string upper(std::string s) {
  for (char& ch : s) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  return s;
}

}  // namespace

std::vector<std::pair<std::string, std::string>> config_keys() {
  RunConfig c;
  std::vector<std::pair<std::string, std::string>> out;
  for (const Field& f : fields(c)) out.emplace_back(f.section, f.key);
  return out;
}

std::string RunConfig::dump() const {
  RunConfig copy = *this;
  std::ostringstream os;
  std::string section;
  for (const Field& f : fields(copy)) {
    if (section != f.section) {
      if (!section.empty()) os << '\n';
      section = f.section;
      os << '[' << section << "]\n";
    }
    os << f.key << " = " << f.get() << '\n';
  }
  return os.str();
}

void RunConfig::set(const std::string& section, const std::string& key,
                    const std::string& value) {
  for (Field& f : fields(*this)) {
    if (section == f.section && key == f.key) {
      f.set(value);
      return;
    }
  }
  fail(ErrorCode::config, "unknown config key '" + section + "." + key + "'");
}

std::string RunConfig::get(const std::string& qualified_key) const {
  RunConfig copy = *this;
  for (const Field& f : fields(copy)) {
    if (qualified_key == std::string(f.section) + "." + f.key) return f.get();
  }
  fail(ErrorCode::config, "unknown config key '" + qualified_key + "'");
}

void RunConfig::set(const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq)
    fail(ErrorCode::config, "expected section.key=value, got '" + assignment + "'");
  set(trim(assignment.substr(0, dot)), trim(assignment.substr(dot + 1, eq - dot - 1)),
      trim(assignment.substr(eq + 1)));
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig c;
  std::string section;
  std::size_t line_no = 0;
  for (const std::string& raw : split(text, '\n')) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        fail(ErrorCode::config, "line " + std::to_string(line_no) + ": unterminated section");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      fail(ErrorCode::config, "line " + std::to_string(line_no) + ": expected key = value");
    if (section.empty())
      fail(ErrorCode::config, "line " + std::to_string(line_no) + ": key outside a section");
    c.set(section, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open config '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void RunConfig::apply_env() {
  for (Field& f : fields(*this)) {
    const std::string name = "THAT_" + upper(f.section) + "_" + upper(f.key);
    if (const char* v = std::getenv(name.c_str())) f.set(v);
  }
}

void RunConfig::validate() const {
  require(data.synthetic.classes >= 2, ErrorCode::config, "data: classes must be >= 2");
  if (data.source == DataSource::idx) {
    require(!data.train_images.empty() && !data.train_labels.empty() &&
                !data.test_images.empty() && !data.test_labels.empty(),
            ErrorCode::config, "data: idx source needs all four file paths");
  }
  require(attack.epsilon >= 0.0 && attack.step > 0.0 && attack.steps >= 1,
          ErrorCode::config, "attack: need epsilon >= 0, step > 0, steps >= 1");
  require(bank_capacity >= 1, ErrorCode::config, "bank: capacity must be >= 1");
  require(eval.steps >= 1 && eval.k >= 1, ErrorCode::config,
          "eval: steps and k must be >= 1");
  require(threads >= 1, ErrorCode::config, "run: threads must be >= 1");
  loss.validate();
  attack_config().validate();
  train_config().validate();
  surface_spec().validate();
}

ArchitectureConfig RunConfig::architecture(const Dataset& d) const {
  ArchitectureConfig a;
  a.channels = d.channels;
  a.height = d.height;
  a.width = d.width;
  a.trunk = model.trunk;
  a.widths = model.widths;
  a.dense_width = model.dense_width;
  a.feature_hidden = model.feature_hidden;
  a.feature_dim = model.feature_dim;
  a.classes = d.classes;
  a.input_mean = model.input_mean;
  a.input_scale = model.input_scale;
  a.validate();
  return a;
}

AttackConfig RunConfig::attack_config() const {
  AttackConfig a;
  a.epsilon = attack.epsilon / 255.0;
  a.step = attack.step / 255.0;
  a.steps = attack.steps;
  a.norm = attack.norm;
  a.mode = attack.mode;
  a.random_start = attack.random_start;
  return a;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t = train;
  t.seed = seed;
  t.threads = threads;
  t.bank_capacity = bank_capacity;
  return t;
}

EvalSpec RunConfig::eval_spec() const {
  EvalSpec e;
  e.defense = eval.defense;
  e.attack = eval.attack;
  e.atk = attack_config();
  e.atk.steps = eval.steps;
  e.k = eval.k;
  e.seed = seed;
  return e;
}

SurfaceSpec RunConfig::surface_spec() const {
  SurfaceSpec s;
  s.d1 = surface.d1;
  s.d2 = surface.d2;
  s.seed = seed;
  s.scale = attack.epsilon / 255.0;
  s.radius = surface.radius;
  s.resolution = surface.resolution;
  s.loss = surface.loss;
  return s;
}

DatasetSplit load_data(const RunConfig& cfg) {
  if (cfg.data.source == DataSource::synthetic) return gen_synthetic(cfg.data.synthetic);
  DatasetSplit s;
  s.train = parse_idx(cfg.data.train_images, cfg.data.train_labels);
  s.test = parse_idx(cfg.data.test_images, cfg.data.test_labels, s.train.classes);
  s.test.classes = std::max(s.test.classes, s.train.classes);
  s.train.classes = s.test.classes;
  require(s.train.dim() == s.test.dim(), ErrorCode::shape_mismatch,
          "data: train and test images differ in size");
  return s;
}

}  // namespace that
