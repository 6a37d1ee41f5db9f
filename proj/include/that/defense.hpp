#pragma once

#include <optional>
#include <string>
#include <vector>

#include "that/attack.hpp"
#include "that/data.hpp"
#include "that/model.hpp"

namespace that {

// Clean-encoder features of the training set with their labels.
struct GalleryIndex {
  Tensor<float> features;  // [n, feature_dim], unit rows
  std::vector<int> labels;
  std::size_t classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  void validate() const;
};

GalleryIndex build_gallery(const Dataset& train,
                           const EncoderParams<float>& params,
                           const Executor& exec = Executor());

void save_gallery(const std::string& path, const GalleryIndex& gallery);
GalleryIndex load_gallery(const std::string& path);

struct KnnResult {
  std::vector<double> confidence;  // P(c) for every class
  int predicted = 0;
};

// Ranks gallery rows by u . u_i (ties to the lower row), keeps the top k and
// sums their similarities per class. Negative similarities are kept.
KnnResult knn_confidence(std::span<const float> query,
                         const GalleryIndex& gallery, std::size_t k);

// Robust feature-head queries for a batch of images.
std::vector<KnnResult> knn_classify(const EncoderParams<float>& params,
                                    const Tensor<float>& x,
                                    const GalleryIndex& gallery, std::size_t k,
                                    const Executor& exec = Executor());

// Argmax of the classifier head's scores, ties to the lowest class.
std::vector<int> softmax_classify(const EncoderParams<float>& params,
                                  const Tensor<float>& x,
                                  const Executor& exec = Executor());

template <typename T>
int argmax_first(std::span<const T> v);

enum class DefenseMode { softmax, knn };
enum class AttackKind { none, fgsm, pgd };

const char* to_string(DefenseMode d) noexcept;
const char* to_string(AttackKind a) noexcept;
DefenseMode parse_defense(const std::string& text);
AttackKind parse_attack_kind(const std::string& text);

struct EvalSpec {
  DefenseMode defense = DefenseMode::softmax;
  AttackKind attack = AttackKind::pgd;
  AttackConfig atk;
  AttackLoss loss = AttackLoss::classification;
  std::size_t k = 50;
  std::uint64_t seed = 0;
};

struct EvalReport {
  DefenseMode defense = DefenseMode::softmax;
  AttackKind attack = AttackKind::none;
  int steps = 0;
  double epsilon = 0.0;
  double top1 = 0.0;
  std::size_t n = 0;
  std::vector<std::size_t> class_correct;
  std::vector<std::size_t> class_total;
  std::vector<int> predictions;
  // Classification loss of every evaluated input at its true label.
  std::vector<double> losses;
};

// Attacks every sample (per-sample seeds derived from spec.seed and the
// sample index), checks the constraints, then classifies with the chosen
// defense. The knn defense needs a gallery.
EvalReport evaluate(const EncoderParams<float>& params, const Dataset& test,
                    const EvalSpec& spec, const GalleryIndex* gallery = nullptr,
                    const Executor& exec = Executor());

// Adversarial inputs exactly as evaluate() would build them.
Tensor<float> eval_inputs(const EncoderParams<float>& params,
                          const Dataset& test, const EvalSpec& spec,
                          const Executor& exec = Executor());

std::string report_csv_header();
std::string report_csv_row(const EvalReport& r);
std::string per_class_csv(const EvalReport& r);
std::string per_sample_csv(const EvalReport& r, const Dataset& test);

}  // namespace that
