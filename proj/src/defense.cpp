#include "that/defense.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "that/checkpoint.hpp"
#include "that/strings.hpp"

namespace that {

namespace {

constexpr std::uint64_t kEvalStream = 0xE7A1;

}  // namespace

void GalleryIndex::validate() const {
  require(features.rank() == 2 && features.rows() == labels.size(),
          ErrorCode::count_mismatch, "gallery: feature and label counts differ");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes)
      fail(ErrorCode::invalid_label, "gallery: label out of range");
  }
  for (std::size_t r = 0; r < features.rows(); ++r) {
    require(std::abs(l2_norm(features.row(r)) - 1.0F) <= 1e-4F,
            ErrorCode::invalid_argument, "gallery: feature rows must be unit norm");
  }
}

GalleryIndex build_gallery(const Dataset& train,
                           const EncoderParams<float>& params,
                           const Executor& exec) {
  require(train.dim() == params.arch.input_dim(), ErrorCode::shape_mismatch,
          "build_gallery: dataset does not match the model input");
  GalleryIndex g;
  g.classes = train.classes;
  g.labels = train.labels;
  g.features = Tensor<float>(Shape{train.size(), params.arch.feature_dim});
  exec.run(chunk_count(train.size()), [&](std::size_t c) {
    const std::size_t b = c * kChunkRows;
    const std::size_t e = std::min(b + kChunkRows, train.size());
    const Tensor<float> f =
        features_of(params.clean, params.arch, train.images.slice_rows(b, e));
    std::copy(f.data().begin(), f.data().end(),
              g.features.row(b).begin());
  });
  return g;
}

void save_gallery(const std::string& path, const GalleryIndex& gallery) {
  Checkpoint c;
  c.descriptor = "kind=gallery\nclasses=" + std::to_string(gallery.classes) + '\n';
  c.add("gallery.features", gallery.features);
  Tensor<float> labels(Shape{gallery.size()});
  for (std::size_t i = 0; i < gallery.size(); ++i)
    labels[i] = static_cast<float>(gallery.labels[i]);
  c.add("gallery.labels", std::move(labels));
  write_checkpoint(path, c);
}

GalleryIndex load_gallery(const std::string& path) {
  const Checkpoint c = read_checkpoint(path);
  GalleryIndex g;
  for (const auto& [key, value] : parse_key_values(c.descriptor)) {
    if (key == "classes") g.classes = parse_size(value, key);
  }
  g.features = c.at("gallery.features");
  for (float v : c.at("gallery.labels").data()) g.labels.push_back(static_cast<int>(v));
  g.validate();
  return g;
}

template <typename T>
int argmax_first(std::span<const T> v) {
  require(!v.empty(), ErrorCode::invalid_argument, "argmax: empty input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return static_cast<int>(best);
}

template int argmax_first<float>(std::span<const float>);
template int argmax_first<double>(std::span<const double>);

KnnResult knn_confidence(std::span<const float> query,
                         const GalleryIndex& gallery, std::size_t k) {
  if (gallery.size() == 0) fail(ErrorCode::empty_gallery, "knn: gallery is empty");
  if (k < 1 || k > gallery.size())
    fail(ErrorCode::invalid_k, "knn: k must lie in [1, gallery size]");
  require(query.size() == gallery.features.cols(), ErrorCode::dim_mismatch,
          "knn: query and gallery feature dims differ");

  std::vector<double> sim(gallery.size());
  for (std::size_t i = 0; i < gallery.size(); ++i) {
    double s = 0.0;
    const auto row = gallery.features.row(i);
    for (std::size_t j = 0; j < query.size(); ++j)
      s += static_cast<double>(query[j]) * row[j];
    sim[i] = s;
  }
  std::vector<std::size_t> order(gallery.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto better = [&](std::size_t a, std::size_t b) {
    return sim[a] > sim[b] || (sim[a] == sim[b] && a < b);
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k),
                    order.end(), better);

  KnnResult r;
  r.confidence.assign(gallery.classes, 0.0);
  for (std::size_t i = 0; i < k; ++i)
    r.confidence[static_cast<std::size_t>(gallery.labels[order[i]])] += sim[order[i]];
  r.predicted = argmax_first(std::span<const double>(r.confidence));
  return r;
}

std::vector<KnnResult> knn_classify(const EncoderParams<float>& params,
                                    const Tensor<float>& x,
                                    const GalleryIndex& gallery, std::size_t k,
                                    const Executor& exec) {
  std::vector<KnnResult> out(x.rows());
  exec.run(chunk_count(x.rows()), [&](std::size_t c) {
    const std::size_t b = c * kChunkRows;
    const std::size_t e = std::min(b + kChunkRows, x.rows());
    const Tensor<float> u =
        features_of(params.robust, params.arch, x.slice_rows(b, e));
    for (std::size_t r = 0; r < e - b; ++r)
      out[b + r] = knn_confidence(u.row(r), gallery, k);
  });
  return out;
}

std::vector<int> softmax_classify(const EncoderParams<float>& params,
                                  const Tensor<float>& x,
                                  const Executor& exec) {
  std::vector<int> out(x.rows());
  exec.run(chunk_count(x.rows()), [&](std::size_t c) {
    const std::size_t b = c * kChunkRows;
    const std::size_t e = std::min(b + kChunkRows, x.rows());
    const Tensor<float> s = class_scores_of(params, x.slice_rows(b, e));
    for (std::size_t r = 0; r < e - b; ++r) out[b + r] = argmax_first(s.row(r));
  });
  return out;
}

const char* to_string(DefenseMode d) noexcept {
  return d == DefenseMode::softmax ? "softmax" : "knn";
}

const char* to_string(AttackKind a) noexcept {
  switch (a) {
    case AttackKind::none: return "none";
    case AttackKind::fgsm: return "fgsm";
    case AttackKind::pgd: return "pgd";
  }
  return "?";
}

DefenseMode parse_defense(const std::string& text) {
  if (text == "softmax") return DefenseMode::softmax;
  if (text == "knn") return DefenseMode::knn;
  fail(ErrorCode::config, "unknown defense '" + text + "'");
}

AttackKind parse_attack_kind(const std::string& text) {
  if (text == "none") return AttackKind::none;
  if (text == "fgsm") return AttackKind::fgsm;
  if (text == "pgd") return AttackKind::pgd;
  fail(ErrorCode::config, "unknown attack '" + text + "'");
}

Tensor<float> eval_inputs(const EncoderParams<float>& params,
                          const Dataset& test, const EvalSpec& spec,
                          const Executor& exec) {
  if (spec.attack == AttackKind::none) return test.images;
  const AttackConfig cfg = spec.attack == AttackKind::fgsm ? spec.atk.fgsm() : spec.atk;
  const auto seeds = sample_seeds(spec.seed, kEvalStream, 0, test.size());
  AttackResult r = pgd_attack(test.images, test.labels, params, spec.loss, cfg,
                              seeds, exec);
  require(satisfies_constraints(test.images, r.x_adv, cfg), ErrorCode::internal,
          "evaluate: attack left the constraint set");
  return std::move(r.x_adv);
}

EvalReport evaluate(const EncoderParams<float>& params, const Dataset& test,
                    const EvalSpec& spec, const GalleryIndex* gallery,
                    const Executor& exec) {
  require(test.size() > 0, ErrorCode::invalid_argument, "evaluate: empty test set");
  require(test.dim() == params.arch.input_dim() &&
              test.classes == params.arch.classes,
          ErrorCode::shape_mismatch, "evaluate: dataset does not match the model");
  require(spec.defense != DefenseMode::knn || gallery != nullptr,
          ErrorCode::empty_gallery, "evaluate: knn defense needs a gallery");

  const Tensor<float> x = eval_inputs(params, test, spec, exec);

  EvalReport r;
  r.defense = spec.defense;
  r.attack = spec.attack;
  r.steps = spec.attack == AttackKind::none ? 0
            : spec.attack == AttackKind::fgsm ? 1
                                              : spec.atk.steps;
  r.epsilon = spec.attack == AttackKind::none ? 0.0 : spec.atk.epsilon;
  r.n = test.size();
  if (spec.defense == DefenseMode::softmax) {
    r.predictions = softmax_classify(params, x, exec);
  } else {
    for (const auto& k : knn_classify(params, x, *gallery, spec.k, exec))
      r.predictions.push_back(k.predicted);
  }
  r.losses = objective_values(
      x, test.labels, attack_objective(params, AttackLoss::classification), exec);

  r.class_correct.assign(test.classes, 0);
  r.class_total.assign(test.classes, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < r.n; ++i) {
    const auto y = static_cast<std::size_t>(test.labels[i]);
    ++r.class_total[y];
    if (r.predictions[i] == test.labels[i]) {
      ++r.class_correct[y];
      ++correct;
    }
  }
  r.top1 = static_cast<double>(correct) / static_cast<double>(r.n);
  return r;
}

std::string report_csv_header() { return "defense_mode,attack,K,eps,top1,n_samples\n"; }

std::string report_csv_row(const EvalReport& r) {
  std::ostringstream os;
  os << to_string(r.defense) << ',' << to_string(r.attack) << ',' << r.steps
     << ',' << format_double(r.epsilon) << ',' << format_double(r.top1)
     << ',' << r.n << '\n';
  return os.str();
}

std::string per_class_csv(const EvalReport& r) {
  std::ostringstream os;
  os << "class,correct,total,accuracy\n";
  for (std::size_t c = 0; c < r.class_total.size(); ++c) {
    const double acc = r.class_total[c] == 0
                           ? 0.0
                           : static_cast<double>(r.class_correct[c]) /
                                 static_cast<double>(r.class_total[c]);
    os << c << ',' << r.class_correct[c] << ',' << r.class_total[c] << ','
       << format_double(acc) << '\n';
  }
  return os.str();
}

std::string per_sample_csv(const EvalReport& r, const Dataset& test) {
  std::ostringstream os;
  os << "index,label,predicted,loss\n";
  for (std::size_t i = 0; i < r.n; ++i) {
    os << i << ',' << test.labels[i] << ',' << r.predictions[i] << ','
       << format_double(r.losses[i]) << '\n';
  }
  return os.str();
}

}  // namespace that
