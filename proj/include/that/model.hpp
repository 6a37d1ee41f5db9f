#pragma once

#include <functional>
#include <string>
#include <vector>

#include "that/graph.hpp"
#include "that/rng.hpp"

namespace that {

enum class TrunkKind { mlp, conv };

// How the classifier head turns trunk activations into class scores.
//  linear: raw logits h^T W.
//  cosine: cos(h, w_i) / eta, the normalised head trained with nce_loss.
enum class HeadKind { linear, cosine };

const char* to_string(TrunkKind k) noexcept;
const char* to_string(HeadKind k) noexcept;

struct ArchitectureConfig {
  // Input layout, channels x height x width. Flat vectors use 1 x 1 x D.
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 64;

  TrunkKind trunk = TrunkKind::mlp;
  // mlp: hidden widths of the dense trunk.
  // conv: output channels of each conv-relu-pool stage.
  std::vector<std::size_t> widths = {256, 256};
  // conv only: width of the dense layer closing the trunk.
  std::size_t dense_width = 256;

  // Hidden width of the two-layer feature/projection head; 0 means "same as
  // the trunk output".
  std::size_t feature_hidden = 0;
  std::size_t feature_dim = 128;
  std::size_t classes = 10;
  // Fixed standardisation (x - input_mean) * input_scale ahead of the
  // trunk. Attacks still act on raw pixels.
  double input_mean = 0.0;
  double input_scale = 1.0;

  void validate() const;
  std::size_t input_dim() const noexcept { return channels * height * width; }
  std::size_t trunk_dim() const noexcept;
  std::size_t head_hidden() const noexcept {
    return feature_hidden == 0 ? trunk_dim() : feature_hidden;
  }

  // key=value lines, stable ordering; parse(to_text()) == *this.
  std::string to_text() const;
  static ArchitectureConfig parse(const std::string& text);

  friend bool operator==(const ArchitectureConfig&,
                         const ArchitectureConfig&) = default;
};

template <typename T>
struct DenseLayer {
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [1, out]
};

// One encoder: shared trunk, two-layer feature head, one-layer classifier.
template <typename T>
struct NetParams {
  std::vector<DenseLayer<T>> convs;  // weight [in_channels*9, out_channels]
  std::vector<DenseLayer<T>> trunk;
  DenseLayer<T> feature_hidden;
  DenseLayer<T> feature_out;
  Tensor<T> classifier;  // [trunk_dim, classes], columns are class weights

  // Visits every tensor in a fixed order with a stable name.
  void visit(const std::function<void(const std::string&, Tensor<T>&)>& f);
  void visit(const std::function<void(const std::string&, const Tensor<T>&)>&
                 f) const;

  template <typename U>
  NetParams<U> cast() const;
};

// Weights of the clean encoder g (W_c) and the two-head robust encoder f
// (W_ab, W_af, W_ac), plus the learnable log of the nce sharpness eta.
template <typename T>
struct EncoderParams {
  ArchitectureConfig arch;
  NetParams<T> clean;
  NetParams<T> robust;
  T log_eta = T(0);
  HeadKind head = HeadKind::linear;

  T eta() const;

  template <typename U>
  EncoderParams<U> cast() const;
};

// Graph handles mirroring NetParams.
struct NetVars {
  struct Layer {
    Var weight;
    Var bias;
  };
  std::vector<Layer> convs;
  std::vector<Layer> trunk;
  Layer feature_hidden;
  Layer feature_out;
  Var classifier;

  // Same order as NetParams::visit.
  std::vector<Var> flatten() const;
};

template <typename T>
NetVars bind(Graph<T>& g, const NetParams<T>& p, bool requires_grad);

template <typename T>
Var trunk_forward(Graph<T>& g, const NetVars& net,
                  const ArchitectureConfig& arch, Var x);

// Unit-norm feature vector from the two-layer head.
template <typename T>
Var feature_head(Graph<T>& g, const NetVars& net, Var trunk);

// Raw logits h^T W_ac.
template <typename T>
Var raw_logits(Graph<T>& g, const NetVars& net, Var trunk);

// Cosine similarities between normalised trunk rows and normalised class
// weight columns.
template <typename T>
Var cosine_logits(Graph<T>& g, const NetVars& net, Var trunk);

// Class scores used for classification and the softmax defense.
template <typename T>
Var class_scores(Graph<T>& g, const NetVars& net, Var trunk, HeadKind head,
                 Var log_eta);

template <typename T>
EncoderParams<T> init_params(const ArchitectureConfig& arch, Rng& rng);

// Unit features v = g(x) for a batch x [n, input_dim].
template <typename T>
Tensor<T> clean_forward(const Tensor<T>& x, const EncoderParams<T>& params);

template <typename T>
struct RobustOutput {
  Tensor<T> features;  // [n, feature_dim], unit rows
  Tensor<T> logits;    // [n, classes], raw
};

template <typename T>
RobustOutput<T> robust_forward(const Tensor<T>& x,
                               const EncoderParams<T>& params);

// Feature-head output of either encoder.
template <typename T>
Tensor<T> features_of(const NetParams<T>& net, const ArchitectureConfig& arch,
                      const Tensor<T>& x);

// Class scores of the robust encoder under its head.
template <typename T>
Tensor<T> class_scores_of(const EncoderParams<T>& params, const Tensor<T>& x);

// w_c <- m * w_c + (1 - m) * w_a for every mirrored tensor.
template <typename T>
void momentum_update(NetParams<T>& clean, const NetParams<T>& robust, T m);

}  // namespace that
