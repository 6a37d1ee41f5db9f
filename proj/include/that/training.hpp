#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "that/attack.hpp"
#include "that/data.hpp"
#include "that/membank.hpp"
#include "that/objective.hpp"

namespace that {

enum class TrainMode {
  natural,
  natural_cl,  // clean inputs, cross entropy + contrastive; no attack
  standard_at,
  standard_at_kl,
  that,
  that_no_cl,
  that_no_nce,
  free_at,
  free_that,
};

enum class CleanPolicy { frozen, momentum };

const char* to_string(TrainMode m) noexcept;
const char* to_string(CleanPolicy p) noexcept;
TrainMode parse_train_mode(const std::string& text);
CleanPolicy parse_clean_policy(const std::string& text);

bool is_free(TrainMode m) noexcept;
bool is_adversarial(TrainMode m) noexcept;
ObjectiveRecipe recipe_for(TrainMode m) noexcept;
// Whether the mode reads the clean encoder (contrastive positives).
bool needs_clean_encoder(TrainMode m) noexcept;

struct TrainConfig {
  TrainMode mode = TrainMode::that;
  int epochs = 30;
  std::size_t batch = 128;
  double lr = 0.1;
  std::vector<int> milestones;
  double decay = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  // Learning-rate multiplier for log eta. Its gradient scales with 1/eta,
  // so at the shared rate eta runs away to the uniform-softmax plateau.
  double eta_lr_scale = 0.01;
  int replays = 4;
  CleanPolicy clean_policy = CleanPolicy::frozen;
  double clean_momentum = 0.999;
  std::size_t bank_capacity = 4096;
  std::uint64_t seed = 0;
  // Per-epoch monitoring: PGD steps and number of test samples (0 = all).
  int eval_steps = 10;
  std::size_t eval_samples = 0;
  // Epoch checkpoints and the best-robust snapshot go here when non-empty.
  std::string checkpoint_dir;
  std::size_t threads = 1;

  void validate() const;
};

// base_lr * decay^(number of milestones <= epoch).
double lr_at(int epoch, const TrainConfig& cfg);

// SGD with momentum and L2 weight decay:
//   v <- mu * v + (g + wd * w);  w <- w - lr * v
class Sgd {
 public:
  explicit Sgd(double momentum) : momentum_(momentum) {}

  // weight_decay and lr_scale hold one coefficient per tensor. Velocity
  // buffers are created on the first call and matched by position
  // afterwards.
  void step(std::span<Tensor<float>* const> params,
            std::span<const Tensor<float>> grads,
            std::span<const double> weight_decay,
            std::span<const double> lr_scale, double lr);

  const std::vector<Tensor<float>>& velocity() const noexcept { return velocity_; }

 private:
  double momentum_;
  std::vector<Tensor<float>> velocity_;
};

struct EpochMetrics {
  int epoch = 0;
  double lr = 0.0;
  double loss_cl = 0.0;
  double loss_cls = 0.0;
  double loss_kl = 0.0;
  double clean_acc = 0.0;
  double robust_acc = 0.0;
  std::uint64_t passes = 0;  // cumulative forward-backward passes
  double seconds = 0.0;      // wall clock, not written to the CSV
};

struct RunMetrics {
  std::vector<EpochMetrics> epochs;
  std::uint64_t passes = 0;
  std::uint64_t batches = 0;
  std::uint64_t bank_pushes = 0;  // clean features pushed

  // epoch,lr,loss_cl,loss_nce,clean_acc,robust_acc@K,passes
  std::string csv(int eval_steps) const;
};

struct TrainResult {
  EncoderParams<float> params;
  RunMetrics metrics;
  std::optional<MemoryBank> bank;
};

// Mini-batch loop of the non-free modes. `init` supplies the robust starting
// point and, for contrastive modes, the trained clean encoder. `test` feeds
// the per-epoch accuracy columns; pass an empty dataset to skip them.
TrainResult train_standard(const Dataset& train, const Dataset& test,
                           const TrainConfig& cfg, const AttackConfig& atk,
                           const LossConfig& loss, EncoderParams<float> init);

// Free training: every batch is replayed cfg.replays times and each replay
// is one forward-backward pass updating both the weights and a persistent
// perturbation. Runs max(1, epochs / replays) passes over the data.
TrainResult train_free(const Dataset& train, const Dataset& test,
                       const TrainConfig& cfg, const AttackConfig& atk,
                       const LossConfig& loss, EncoderParams<float> init);

// Dispatches on cfg.mode.
TrainResult train(const Dataset& train, const Dataset& test,
                  const TrainConfig& cfg, const AttackConfig& atk,
                  const LossConfig& loss, EncoderParams<float> init);

// Fresh parameters for a run seeded with `seed`.
EncoderParams<float> initial_params(const ArchitectureConfig& arch,
                                    std::uint64_t seed);

// Natural cross-entropy training of the clean encoder's trunk and classifier
// head. The projection head keeps its initial weights. Returns the clean
// network inside a full parameter set whose robust half is a fresh init.
TrainResult train_clean_encoder(const Dataset& train, const Dataset& test,
                                const TrainConfig& cfg,
                                const ArchitectureConfig& arch);

// Clean and PGD accuracy of the robust encoder's classifier head.
struct Accuracy {
  double clean = 0.0;
  double robust = 0.0;
};
Accuracy measure_accuracy(const EncoderParams<float>& params,
                          const Dataset& test, const AttackConfig& atk,
                          std::uint64_t seed, const Executor& exec);

}  // namespace that
