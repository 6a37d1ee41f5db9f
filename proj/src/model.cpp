#include "that/model.hpp"

#include <cmath>
#include <sstream>

#include "that/strings.hpp"

namespace that {

const char* to_string(TrunkKind k) noexcept {
  return k == TrunkKind::mlp ? "mlp" : "conv";
}

const char* to_string(HeadKind k) noexcept {
  return k == HeadKind::linear ? "linear" : "cosine";
}

std::size_t ArchitectureConfig::trunk_dim() const noexcept {
  if (trunk == TrunkKind::conv) return dense_width;
  return widths.empty() ? input_dim() : widths.back();
}

void ArchitectureConfig::validate() const {
  require(channels > 0 && height > 0 && width > 0, ErrorCode::config,
          "architecture: input dims must be positive");
  require(feature_dim >= 2, ErrorCode::config,
          "architecture: feature_dim must be >= 2");
  require(classes >= 2, ErrorCode::config, "architecture: classes must be >= 2");
  require(std::isfinite(input_mean) && std::isfinite(input_scale) && input_scale > 0.0,
          ErrorCode::config, "architecture: input_scale must be positive");
  for (std::size_t w : widths)
    require(w > 0, ErrorCode::config, "architecture: widths must be positive");
  if (trunk == TrunkKind::conv) {
    require(!widths.empty(), ErrorCode::config,
            "architecture: conv trunk needs at least one stage");
    require(dense_width > 0, ErrorCode::config,
            "architecture: dense_width must be positive");
    std::size_t h = height, w = width;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      require(h >= 2 && w >= 2, ErrorCode::config,
              "architecture: input too small for the conv stack");
      h /= 2;
      w /= 2;
    }
  }
}

std::string ArchitectureConfig::to_text() const {
  std::ostringstream os;
  os << "channels=" << channels << '\n'
     << "height=" << height << '\n'
     << "width=" << width << '\n'
     << "trunk=" << to_string(trunk) << '\n'
     << "widths=" << join_sizes(widths) << '\n'
     << "dense_width=" << dense_width << '\n'
     << "feature_hidden=" << feature_hidden << '\n'
     << "feature_dim=" << feature_dim << '\n'
     << "classes=" << classes << '\n'
     << "input_mean=" << format_double(input_mean) << '\n'
     << "input_scale=" << format_double(input_scale) << '\n';
  return os.str();
}

ArchitectureConfig ArchitectureConfig::parse(const std::string& text) {
  ArchitectureConfig a;
  for (const auto& [key, value] : parse_key_values(text)) {
    if (key == "channels") a.channels = parse_size(value, key);
    else if (key == "height") a.height = parse_size(value, key);
    else if (key == "width") a.width = parse_size(value, key);
    else if (key == "trunk") {
      if (value == "mlp") a.trunk = TrunkKind::mlp;
      else if (value == "conv") a.trunk = TrunkKind::conv;
      else fail(ErrorCode::config, "architecture: unknown trunk '" + value + "'");
    } else if (key == "widths") a.widths = parse_size_list(value, key);
    else if (key == "dense_width") a.dense_width = parse_size(value, key);
    else if (key == "feature_hidden") a.feature_hidden = parse_size(value, key);
    else if (key == "feature_dim") a.feature_dim = parse_size(value, key);
    else if (key == "classes") a.classes = parse_size(value, key);
    else if (key == "input_mean") a.input_mean = parse_double(value, key);
    else if (key == "input_scale") a.input_scale = parse_double(value, key);
  }
  a.validate();
  return a;
}

template <typename T>
void NetParams<T>::visit(
    const std::function<void(const std::string&, Tensor<T>&)>& f) {
  for (std::size_t i = 0; i < convs.size(); ++i) {
    f("base.conv" + std::to_string(i) + ".weight", convs[i].weight);
    f("base.conv" + std::to_string(i) + ".bias", convs[i].bias);
  }
  for (std::size_t i = 0; i < trunk.size(); ++i) {
    f("base.dense" + std::to_string(i) + ".weight", trunk[i].weight);
    f("base.dense" + std::to_string(i) + ".bias", trunk[i].bias);
  }
  f("feature.0.weight", feature_hidden.weight);
  f("feature.0.bias", feature_hidden.bias);
  f("feature.1.weight", feature_out.weight);
  f("feature.1.bias", feature_out.bias);
  f("classifier.weight", classifier);
}

template <typename T>
void NetParams<T>::visit(
    const std::function<void(const std::string&, const Tensor<T>&)>& f) const {
  const_cast<NetParams*>(this)->visit(
      [&](const std::string& name, Tensor<T>& t) { f(name, t); });
}

template <typename T>
template <typename U>
NetParams<U> NetParams<T>::cast() const {
  auto layer = [](const DenseLayer<T>& l) {
    return DenseLayer<U>{l.weight.template cast<U>(), l.bias.template cast<U>()};
  };
  NetParams<U> out;
  for (const auto& l : convs) out.convs.push_back(layer(l));
  for (const auto& l : trunk) out.trunk.push_back(layer(l));
  out.feature_hidden = layer(feature_hidden);
  out.feature_out = layer(feature_out);
  out.classifier = classifier.template cast<U>();
  return out;
}

template <typename T>
T EncoderParams<T>::eta() const {
  return std::exp(log_eta);
}

template <typename T>
template <typename U>
EncoderParams<U> EncoderParams<T>::cast() const {
  EncoderParams<U> out;
  out.arch = arch;
  out.clean = clean.template cast<U>();
  out.robust = robust.template cast<U>();
  out.log_eta = static_cast<U>(log_eta);
  out.head = head;
  return out;
}

std::vector<Var> NetVars::flatten() const {
  std::vector<Var> out;
  for (const auto& l : convs) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  for (const auto& l : trunk) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  out.push_back(feature_hidden.weight);
  out.push_back(feature_hidden.bias);
  out.push_back(feature_out.weight);
  out.push_back(feature_out.bias);
  out.push_back(classifier);
  return out;
}

template <typename T>
NetVars bind(Graph<T>& g, const NetParams<T>& p, bool requires_grad) {
  auto layer = [&](const DenseLayer<T>& l) {
    return NetVars::Layer{g.leaf(l.weight, requires_grad),
                          g.leaf(l.bias, requires_grad)};
  };
  NetVars v;
  for (const auto& l : p.convs) v.convs.push_back(layer(l));
  for (const auto& l : p.trunk) v.trunk.push_back(layer(l));
  v.feature_hidden = layer(p.feature_hidden);
  v.feature_out = layer(p.feature_out);
  v.classifier = g.leaf(p.classifier, requires_grad);
  return v;
}

template <typename T>
Var trunk_forward(Graph<T>& g, const NetVars& net,
                  const ArchitectureConfig& arch, Var x) {
  require(g.value(x).cols() == arch.input_dim(), ErrorCode::shape_mismatch,
          "input width does not match the architecture");
  Var h = x;
  if (arch.input_mean != 0.0 || arch.input_scale != 1.0) {
    const Var shift = g.constant(Tensor<T>(Shape{1}, {static_cast<T>(-arch.input_mean)}));
    h = g.scale(g.add(h, shift), static_cast<T>(arch.input_scale));
  }
  if (arch.trunk == TrunkKind::conv) {
    std::size_t c = arch.channels, hh = arch.height, ww = arch.width;
    for (std::size_t i = 0; i < net.convs.size(); ++i) {
      const ConvGeometry geom{c, hh, ww, arch.widths[i]};
      h = g.relu(g.conv2d(h, net.convs[i].weight, net.convs[i].bias, geom));
      h = g.maxpool2(h, PoolGeometry{arch.widths[i], hh, ww});
      c = arch.widths[i];
      hh /= 2;
      ww /= 2;
    }
  }
  for (const auto& l : net.trunk) h = g.relu(g.add(g.matmul(h, l.weight), l.bias));
  return h;
}

template <typename T>
Var feature_head(Graph<T>& g, const NetVars& net, Var trunk) {
  Var h = g.relu(g.add(g.matmul(trunk, net.feature_hidden.weight),
                       net.feature_hidden.bias));
  h = g.add(g.matmul(h, net.feature_out.weight), net.feature_out.bias);
  return g.l2_normalize_rows(h);
}

template <typename T>
Var raw_logits(Graph<T>& g, const NetVars& net, Var trunk) {
  return g.matmul(trunk, net.classifier);
}

template <typename T>
Var cosine_logits(Graph<T>& g, const NetVars& net, Var trunk) {
  return g.matmul(g.l2_normalize_rows(trunk),
                  g.l2_normalize_cols(net.classifier));
}

template <typename T>
Var class_scores(Graph<T>& g, const NetVars& net, Var trunk, HeadKind head,
                 Var log_eta) {
  if (head == HeadKind::linear) return raw_logits(g, net, trunk);
  // cos / eta = cos * exp(-log eta)
  return g.mul(cosine_logits(g, net, trunk), g.exp(g.scale(log_eta, T(-1))));
}

namespace {

template <typename T>
DenseLayer<T> init_dense(std::size_t in, std::size_t out, Rng& rng) {
  DenseLayer<T> l{Tensor<T>(Shape{in, out}), Tensor<T>(Shape{1, out})};
  const double bound = std::sqrt(1.0 / static_cast<double>(in));
  for (auto& w : l.weight.data()) w = static_cast<T>(rng.uniform(-bound, bound));
  return l;
}

template <typename T>
NetParams<T> init_net(const ArchitectureConfig& arch, Rng& rng) {
  NetParams<T> p;
  std::size_t in = arch.input_dim();
  if (arch.trunk == TrunkKind::conv) {
    std::size_t c = arch.channels, h = arch.height, w = arch.width;
    for (std::size_t out : arch.widths) {
      p.convs.push_back(init_dense<T>(c * 9, out, rng));
      c = out;
      h /= 2;
      w /= 2;
    }
    p.trunk.push_back(init_dense<T>(c * h * w, arch.dense_width, rng));
  } else {
    for (std::size_t out : arch.widths) {
      p.trunk.push_back(init_dense<T>(in, out, rng));
      in = out;
    }
  }
  const std::size_t td = arch.trunk_dim();
  p.feature_hidden = init_dense<T>(td, arch.head_hidden(), rng);
  p.feature_out = init_dense<T>(arch.head_hidden(), arch.feature_dim, rng);
  p.classifier = init_dense<T>(td, arch.classes, rng).weight;
  return p;
}

}  // namespace

template <typename T>
EncoderParams<T> init_params(const ArchitectureConfig& arch, Rng& rng) {
  arch.validate();
  EncoderParams<T> p;
  p.arch = arch;
  p.robust = init_net<T>(arch, rng);
  p.clean = init_net<T>(arch, rng);
  p.log_eta = static_cast<T>(std::log(1.0 / 30.0));
  return p;
}

template <typename T>
Tensor<T> features_of(const NetParams<T>& net, const ArchitectureConfig& arch,
                      const Tensor<T>& x) {
  Graph<T> g;
  const NetVars v = bind(g, net, false);
  const Var trunk = trunk_forward(g, v, arch, g.constant(x));
  return g.value(feature_head(g, v, trunk));
}

template <typename T>
Tensor<T> clean_forward(const Tensor<T>& x, const EncoderParams<T>& params) {
  return features_of(params.clean, params.arch, x);
}

template <typename T>
RobustOutput<T> robust_forward(const Tensor<T>& x,
                               const EncoderParams<T>& params) {
  Graph<T> g;
  const NetVars v = bind(g, params.robust, false);
  const Var trunk = trunk_forward(g, v, params.arch, g.constant(x));
  return {g.value(feature_head(g, v, trunk)), g.value(raw_logits(g, v, trunk))};
}

template <typename T>
Tensor<T> class_scores_of(const EncoderParams<T>& params, const Tensor<T>& x) {
  Graph<T> g;
  const NetVars v = bind(g, params.robust, false);
  const Var trunk = trunk_forward(g, v, params.arch, g.constant(x));
  const Var log_eta = g.constant(Tensor<T>(Shape{1}, {params.log_eta}));
  return g.value(class_scores(g, v, trunk, params.head, log_eta));
}

template <typename T>
void momentum_update(NetParams<T>& clean, const NetParams<T>& robust, T m) {
  require(m >= T(0) && m <= T(1), ErrorCode::invalid_argument,
          "momentum_update: m must lie in [0, 1]");
  std::vector<const Tensor<T>*> src;
  robust.visit([&](const std::string&, const Tensor<T>& t) { src.push_back(&t); });
  std::size_t i = 0;
  clean.visit([&](const std::string& name, Tensor<T>& t) {
    if (i >= src.size() || src[i]->shape() != t.shape()) {
      fail(ErrorCode::shape_mismatch,
           "momentum_update: encoders differ at " + name);
    }
    const Tensor<T>& a = *src[i++];
    for (std::size_t k = 0; k < t.size(); ++k)
      t[k] = m * t[k] + (T(1) - m) * a[k];
  });
  require(i == src.size(), ErrorCode::shape_mismatch,
          "momentum_update: encoders differ in depth");
}

#define THAT_INSTANTIATE(T)                                                    \
  template struct NetParams<T>;                                                \
  template struct EncoderParams<T>;                                            \
  template NetVars bind<T>(Graph<T>&, const NetParams<T>&, bool);              \
  template Var trunk_forward<T>(Graph<T>&, const NetVars&,                     \
                                const ArchitectureConfig&, Var);               \
  template Var feature_head<T>(Graph<T>&, const NetVars&, Var);                \
  template Var raw_logits<T>(Graph<T>&, const NetVars&, Var);                  \
  template Var cosine_logits<T>(Graph<T>&, const NetVars&, Var);               \
  template Var class_scores<T>(Graph<T>&, const NetVars&, Var, HeadKind, Var); \
  template EncoderParams<T> init_params<T>(const ArchitectureConfig&, Rng&);   \
  template Tensor<T> features_of<T>(const NetParams<T>&,                       \
                                    const ArchitectureConfig&,                 \
                                    const Tensor<T>&);                         \
  template Tensor<T> clean_forward<T>(const Tensor<T>&,                        \
                                      const EncoderParams<T>&);                \
  template RobustOutput<T> robust_forward<T>(const Tensor<T>&,                 \
                                             const EncoderParams<T>&);         \
  template Tensor<T> class_scores_of<T>(const EncoderParams<T>&,               \
                                        const Tensor<T>&);                     \
  template void momentum_update<T>(NetParams<T>&, const NetParams<T>&, T);

THAT_INSTANTIATE(float)
THAT_INSTANTIATE(double)
#undef THAT_INSTANTIATE

template NetParams<double> NetParams<float>::cast<double>() const;
template NetParams<float> NetParams<double>::cast<float>() const;
template EncoderParams<double> EncoderParams<float>::cast<double>() const;
template EncoderParams<float> EncoderParams<double>::cast<float>() const;

}  // namespace that
