#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "that/model.hpp"
#include "that/parallel.hpp"

namespace that {

enum class Norm { linf, l2 };
enum class AttackMode { untargeted, targeted };

const char* to_string(Norm n) noexcept;
const char* to_string(AttackMode m) noexcept;

// Perturbation budget and schedule. Values are in pixel units of the [0, 1]
// scale; the run config expresses epsilon and step in 1/255 units.
struct AttackConfig {
  double epsilon = 8.0 / 255.0;
  double step = 2.0 / 255.0;
  int steps = 10;
  Norm norm = Norm::linf;
  AttackMode mode = AttackMode::untargeted;
  bool random_start = true;
  double lo = 0.0;
  double hi = 1.0;

  void validate() const;

  // Single full-budget sign step without random start.
  AttackConfig fgsm() const;
};

// Which scalar the attack ascends.
//   classification: cross entropy on the model's own class scores (raw
//                   logits for a linear head, nce for a cosine head).
//   cross_entropy:  cross entropy on raw logits regardless of head.
//   feature:        negative cosine between the robust feature of x_adv and
//                   that of the clean input.
enum class AttackLoss { classification, cross_entropy, feature };

const char* to_string(AttackLoss l) noexcept;
Norm parse_norm(const std::string& text);
AttackMode parse_attack_mode(const std::string& text);
AttackLoss parse_attack_loss(const std::string& text);

// Records per-row attack losses [rows, 1] for a chunk of adversarial inputs.
using AttackObjective = std::function<Var(
    Graph<float>& g, Var x_adv, const Tensor<float>& x_clean,
    std::span<const int> labels)>;

AttackObjective attack_objective(const EncoderParams<float>& params,
                                 AttackLoss loss);

// Projection onto the epsilon ball, in place.
template <typename T>
void project(std::span<T> delta, double epsilon, Norm norm);

struct AttackResult {
  Tensor<float> x_adv;
  // Label the loss was evaluated against: y, or the drawn target class.
  std::vector<int> targets;
};

// One seed per sample, independent of batch composition and chunking.
std::vector<std::uint64_t> sample_seeds(std::uint64_t seed,
                                        std::uint64_t stream,
                                        std::size_t first_index,
                                        std::size_t count);

// K-step projected gradient attack with sign steps (Linf) or unit-L2 steps.
// Untargeted mode ascends the objective at the true label; targeted mode
// descends it at a class drawn uniformly from the other classes. Every
// output satisfies the epsilon ball and pixel bounds exactly.
AttackResult pgd_attack(const Tensor<float>& x, std::span<const int> y,
                        std::size_t classes, const AttackObjective& objective,
                        const AttackConfig& cfg,
                        std::span<const std::uint64_t> seeds,
                        const Executor& exec = Executor());

AttackResult pgd_attack(const Tensor<float>& x, std::span<const int> y,
                        const EncoderParams<float>& params, AttackLoss loss,
                        const AttackConfig& cfg,
                        std::span<const std::uint64_t> seeds,
                        const Executor& exec = Executor());

// x + epsilon * sign(grad), clamped to the pixel range.
AttackResult fgsm_attack(const Tensor<float>& x, std::span<const int> y,
                         const EncoderParams<float>& params, AttackLoss loss,
                         const AttackConfig& cfg,
                         std::span<const std::uint64_t> seeds,
                         const Executor& exec = Executor());

// Per-row objective values without perturbation, evaluated in fixed chunks.
// A row's value does not depend on which other rows share its chunk.
std::vector<double> objective_values(const Tensor<float>& x,
                                     std::span<const int> y,
                                     const AttackObjective& objective,
                                     const Executor& exec = Executor());

// True when every row of x_adv is within the ball and the pixel range.
bool satisfies_constraints(const Tensor<float>& x, const Tensor<float>& x_adv,
                           const AttackConfig& cfg);

}  // namespace that
