#pragma once

#include <span>
#include <vector>

#include "that/attack.hpp"
#include "that/losses.hpp"
#include "that/membank.hpp"
#include "that/model.hpp"

namespace that {

enum class ClassLoss { cross_entropy, nce };

// Which terms make up a training loss. The arms of the ablation differ only
// here: THAT is {nce, contrastive}, "w.o. CL" drops the contrastive term,
// "w.o. NCE" swaps nce for plain cross entropy, "AT + KL" is
// {cross_entropy, kl}.
struct ObjectiveRecipe {
  ClassLoss cls = ClassLoss::nce;
  bool contrastive = true;
  bool kl = false;

  HeadKind head() const noexcept {
    return cls == ClassLoss::nce ? HeadKind::cosine : HeadKind::linear;
  }
};

// Per-batch sums over rows ([1] each). Terms a recipe leaves out are
// invalid Vars.
struct ObjectiveTerms {
  Var total;
  Var cls;
  Var cl;
  Var kl;
};

// Everything the loss needs besides the robust weights and the input.
template <typename T>
struct ObjectiveContext {
  std::span<const int> y;
  const Tensor<T>* x_clean = nullptr;          // kl
  const Tensor<T>* clean_features = nullptr;   // contrastive: v = g(x)
  const Tensor<T>* negatives_t = nullptr;      // contrastive: [dim, N]
};

// Records the recipe's loss for input rows x (usually x_adv) on g.
template <typename T>
ObjectiveTerms record_objective(Graph<T>& g, const NetVars& robust,
                                const ArchitectureConfig& arch, Var log_eta,
                                Var x, const ObjectiveContext<T>& ctx,
                                const LossConfig& cfg,
                                const ObjectiveRecipe& recipe);

// Additive mask [rows, N] dropping bank entries that coincide with the
// positive of each row.
template <typename T>
Tensor<T> positive_mask(const Tensor<T>& clean_features,
                        const Tensor<T>& negatives_t);

struct CombinedObjective {
  double loss = 0.0;  // batch mean of the total
  double cls = 0.0;
  double cl = 0.0;
  double kl = 0.0;
  Tensor<float> x_adv;
};

// Attacks the classification term with PGD, then evaluates the recipe on
// the adversarial batch with the clean features g(x) as positives and the
// bank as negatives.
CombinedObjective combined_objective(const Tensor<float>& x,
                                     std::span<const int> y,
                                     const EncoderParams<float>& params,
                                     const MemoryBank& bank,
                                     const LossConfig& cfg,
                                     const AttackConfig& atk,
                                     std::span<const std::uint64_t> seeds,
                                     const ObjectiveRecipe& recipe,
                                     const Executor& exec = Executor());

}  // namespace that
