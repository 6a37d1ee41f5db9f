#include "that/attack.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "that/losses.hpp"

namespace that {

const char* to_string(Norm n) noexcept { return n == Norm::linf ? "linf" : "l2"; }

const char* to_string(AttackMode m) noexcept {
  return m == AttackMode::untargeted ? "untargeted" : "targeted";
}

Norm parse_norm(const std::string& text) {
  if (text == "linf") return Norm::linf;
  if (text == "l2") return Norm::l2;
  fail(ErrorCode::config, "unknown norm '" + text + "'");
}

AttackMode parse_attack_mode(const std::string& text) {
  if (text == "untargeted") return AttackMode::untargeted;
  if (text == "targeted") return AttackMode::targeted;
  fail(ErrorCode::config, "unknown attack mode '" + text + "'");
}

AttackLoss parse_attack_loss(const std::string& text) {
  if (text == "classification") return AttackLoss::classification;
  if (text == "cross_entropy") return AttackLoss::cross_entropy;
  if (text == "feature") return AttackLoss::feature;
  fail(ErrorCode::config, "unknown attack loss '" + text + "'");
}

const char* to_string(AttackLoss l) noexcept {
  switch (l) {
    case AttackLoss::classification: return "classification";
    case AttackLoss::cross_entropy: return "cross_entropy";
    case AttackLoss::feature: return "feature";
  }
  return "?";
}

void AttackConfig::validate() const {
  require(epsilon > 0.0, ErrorCode::config, "attack: epsilon must be positive");
  require(step > 0.0, ErrorCode::config, "attack: step must be positive");
  require(steps >= 1, ErrorCode::config, "attack: steps must be >= 1");
  require(lo < hi, ErrorCode::config, "attack: pixel bounds need lo < hi");
}

AttackConfig AttackConfig::fgsm() const {
  AttackConfig c = *this;
  c.steps = 1;
  c.step = epsilon;
  c.random_start = false;
  return c;
}

template <typename T>
void project(std::span<T> delta, double epsilon, Norm norm) {
  if (norm == Norm::linf) {
    const T e = static_cast<T>(epsilon);
    for (T& d : delta) d = std::clamp(d, -e, e);
    return;
  }
  double n = 0.0;
  for (T d : delta) n += static_cast<double>(d) * static_cast<double>(d);
  n = std::sqrt(n);
  if (n > epsilon) {
    const double s = epsilon / n;
    for (T& d : delta) d = static_cast<T>(static_cast<double>(d) * s);
  }
}

template void project<float>(std::span<float>, double, Norm);
template void project<double>(std::span<double>, double, Norm);

std::vector<std::uint64_t> sample_seeds(std::uint64_t seed,
                                        std::uint64_t stream,
                                        std::size_t first_index,
                                        std::size_t count) {
  std::vector<std::uint64_t> out(count);
  for (std::size_t i = 0; i < count; ++i)
    out[i] = derive_seed(seed, stream, first_index + i);
  return out;
}

AttackObjective attack_objective(const EncoderParams<float>& params,
                                 AttackLoss loss) {
  const EncoderParams<float>* p = &params;
  return [p, loss](Graph<float>& g, Var x_adv, const Tensor<float>& x_clean,
                   std::span<const int> labels) -> Var {
    const NetVars net = bind(g, p->robust, false);
    const Var trunk = trunk_forward(g, net, p->arch, x_adv);
    switch (loss) {
      case AttackLoss::classification: {
        const Var le = g.constant(Tensor<float>(Shape{1}, {p->log_eta}));
        return cross_entropy_rows(
            g, class_scores(g, net, trunk, p->head, le), labels);
      }
      case AttackLoss::cross_entropy:
        return cross_entropy_rows(g, raw_logits(g, net, trunk), labels);
      case AttackLoss::feature: {
        const Var u = feature_head(g, net, trunk);
        const Var ref = feature_head(
            g, net, trunk_forward(g, net, p->arch, g.constant(x_clean)));
        return g.scale(g.row_sum(g.mul(u, ref)), -1.0F);
      }
    }
    fail(ErrorCode::invalid_argument, "unknown attack loss");
  };
}

namespace {

struct PixelBounds {
  float lo;
  float hi;
};

PixelBounds float_bounds(const AttackConfig& cfg) {
  float lo = static_cast<float>(cfg.lo);
  float hi = static_cast<float>(cfg.hi);
  if (static_cast<double>(lo) < cfg.lo)
    lo = std::nextafter(lo, std::numeric_limits<float>::infinity());
  if (static_cast<double>(hi) > cfg.hi)
    hi = std::nextafter(hi, -std::numeric_limits<float>::infinity());
  return {lo, hi};
}

void clip_to_pixels(std::span<const float> x, std::span<float> delta,
                    PixelBounds b) {
  for (std::size_t i = 0; i < x.size(); ++i)
    delta[i] = std::clamp(x[i] + delta[i], b.lo, b.hi) - x[i];
}

// Writes x + delta into out so that the constraints hold exactly when
// re-measured in double precision.
void finalize_row(std::span<const float> x, std::span<float> delta,
                  const AttackConfig& cfg, PixelBounds b,
                  std::span<float> out) {
  constexpr float kInf = std::numeric_limits<float>::infinity();
  for (int attempt = 0;; ++attempt) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      float xa = std::clamp(x[i] + delta[i], b.lo, b.hi);
      if (cfg.norm == Norm::linf) {
        while (static_cast<double>(xa) - static_cast<double>(x[i]) >
               cfg.epsilon)
          xa = std::nextafter(xa, -kInf);
        while (static_cast<double>(x[i]) - static_cast<double>(xa) >
               cfg.epsilon)
          xa = std::nextafter(xa, kInf);
      }
      out[i] = xa;
    }
    if (cfg.norm == Norm::linf) return;
    double n = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = static_cast<double>(out[i]) - static_cast<double>(x[i]);
      n += d * d;
    }
    n = std::sqrt(n);
    if (n <= cfg.epsilon || attempt > 8) {
      if (n > cfg.epsilon) {
        // Give up on the perturbation rather than violate the ball.
        std::copy(x.begin(), x.end(), out.begin());
      }
      return;
    }
    const double s = cfg.epsilon / n * (1.0 - 1e-6);
    for (float& d : delta) d = static_cast<float>(static_cast<double>(d) * s);
  }
}

void random_start(Rng& rng, std::span<float> delta, const AttackConfig& cfg) {
  if (cfg.norm == Norm::linf) {
    for (float& d : delta)
      d = static_cast<float>(rng.uniform(-cfg.epsilon, cfg.epsilon));
    return;
  }
  double n = 0.0;
  std::vector<double> dir(delta.size());
  for (double& v : dir) {
    v = rng.normal();
    n += v * v;
  }
  n = std::sqrt(n);
  const double radius =
      cfg.epsilon *
      std::pow(rng.uniform(), 1.0 / static_cast<double>(delta.size()));
  for (std::size_t i = 0; i < delta.size(); ++i)
    delta[i] = n > 0.0 ? static_cast<float>(dir[i] / n * radius) : 0.0F;
}

void attack_chunk(const Tensor<float>& x, std::span<const int> labels,
                  std::size_t classes, std::span<const std::uint64_t> seeds,
                  const AttackObjective& objective, const AttackConfig& cfg,
                  std::span<int> targets, Tensor<float>& out) {
  const std::size_t n = x.rows();
  const PixelBounds bounds = float_bounds(cfg);
  const bool targeted = cfg.mode == AttackMode::targeted;
  const float direction = targeted ? -1.0F : 1.0F;
  Tensor<float> delta(x.shape());
  for (std::size_t r = 0; r < n; ++r) {
    Rng rng(seeds[r]);
    int target = labels[r];
    if (targeted) {
      auto t = static_cast<int>(rng.below(classes - 1));
      if (t >= labels[r]) ++t;
      target = t;
    }
    targets[r] = target;
    if (cfg.random_start) {
      random_start(rng, delta.row(r), cfg);
      project(delta.row(r), cfg.epsilon, cfg.norm);
      clip_to_pixels(x.row(r), delta.row(r), bounds);
    }
  }

  Tensor<float> x_adv(x.shape());
  const auto alpha = static_cast<float>(cfg.step);
  for (int k = 0; k < cfg.steps; ++k) {
    for (std::size_t i = 0; i < x.size(); ++i)
      x_adv[i] = std::clamp(x[i] + delta[i], bounds.lo, bounds.hi);
    Graph<float> g;
    const Var xv = g.leaf(x_adv, true);
    const Var loss = g.sum(objective(g, xv, x, targets));
    const Var wrt[] = {xv};
    const Tensor<float> grad = std::move(g.grad(loss, wrt)[0]);
    for (std::size_t r = 0; r < n; ++r) {
      auto d = delta.row(r);
      auto gr = grad.row(r);
      if (cfg.norm == Norm::linf) {
        for (std::size_t i = 0; i < d.size(); ++i) {
          const float s = gr[i] > 0.0F ? 1.0F : (gr[i] < 0.0F ? -1.0F : 0.0F);
          d[i] += direction * alpha * s;
        }
      } else {
        double gn = 0.0;
        for (float v : gr) gn += static_cast<double>(v) * v;
        gn = std::sqrt(gn);
        if (gn > 0.0) {
          for (std::size_t i = 0; i < d.size(); ++i)
            d[i] += static_cast<float>(direction * cfg.step * gr[i] / gn);
        }
      }
      project(d, cfg.epsilon, cfg.norm);
      clip_to_pixels(x.row(r), d, bounds);
    }
  }
  for (std::size_t r = 0; r < n; ++r)
    finalize_row(x.row(r), delta.row(r), cfg, bounds, out.row(r));
}

}  // namespace

AttackResult pgd_attack(const Tensor<float>& x, std::span<const int> y,
                        std::size_t classes, const AttackObjective& objective,
                        const AttackConfig& cfg,
                        std::span<const std::uint64_t> seeds,
                        const Executor& exec) {
  cfg.validate();
  require(x.rank() == 2, ErrorCode::shape_mismatch,
          "pgd_attack: inputs must be [n, dim]");
  require(y.size() == x.rows() && seeds.size() == x.rows(),
          ErrorCode::shape_mismatch,
          "pgd_attack: need one label and one seed per input");
  require(classes >= 2, ErrorCode::invalid_argument,
          "pgd_attack: need at least two classes");
  for (int label : y) {
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      fail(ErrorCode::invalid_label, "pgd_attack: label out of range");
    }
  }
  for (float v : x.data()) {
    if (!(v >= cfg.lo && v <= cfg.hi)) {
      fail(ErrorCode::invalid_argument,
           "pgd_attack: input outside the pixel bounds");
    }
  }
  AttackResult result{Tensor<float>(x.shape()), std::vector<int>(x.rows())};
  std::vector<Tensor<float>> outputs(chunk_count(x.rows()));
  exec.run(outputs.size(), [&](std::size_t c) {
    const std::size_t b = c * kChunkRows;
    const std::size_t e = std::min(b + kChunkRows, x.rows());
    const Tensor<float> xc = x.slice_rows(b, e);
    outputs[c] = Tensor<float>(xc.shape());
    attack_chunk(xc, y.subspan(b, e - b), classes, seeds.subspan(b, e - b),
                 objective, cfg,
                 std::span<int>(result.targets).subspan(b, e - b), outputs[c]);
  });
  for (std::size_t c = 0; c < outputs.size(); ++c) {
    std::copy(outputs[c].data().begin(), outputs[c].data().end(),
              result.x_adv.data().begin() +
                  static_cast<std::ptrdiff_t>(c * kChunkRows * x.cols()));
  }
  return result;
}

AttackResult pgd_attack(const Tensor<float>& x, std::span<const int> y,
                        const EncoderParams<float>& params, AttackLoss loss,
                        const AttackConfig& cfg,
                        std::span<const std::uint64_t> seeds,
                        const Executor& exec) {
  return pgd_attack(x, y, params.arch.classes, attack_objective(params, loss),
                    cfg, seeds, exec);
}

AttackResult fgsm_attack(const Tensor<float>& x, std::span<const int> y,
                         const EncoderParams<float>& params, AttackLoss loss,
                         const AttackConfig& cfg,
                         std::span<const std::uint64_t> seeds,
                         const Executor& exec) {
  return pgd_attack(x, y, params, loss, cfg.fgsm(), seeds, exec);
}

std::vector<double> objective_values(const Tensor<float>& x,
                                     std::span<const int> y,
                                     const AttackObjective& objective,
                                     const Executor& exec) {
  require(x.rank() == 2 && y.size() == x.rows(), ErrorCode::shape_mismatch,
          "objective_values: need [n, dim] inputs and n labels");
  std::vector<double> out(x.rows());
  exec.run(chunk_count(x.rows()), [&](std::size_t c) {
    const std::size_t b = c * kChunkRows;
    const std::size_t e = std::min(b + kChunkRows, x.rows());
    const Tensor<float> xc = x.slice_rows(b, e);
    Graph<float> g;
    const Tensor<float>& v =
        g.value(objective(g, g.constant(xc), xc, y.subspan(b, e - b)));
    for (std::size_t r = 0; r < e - b; ++r) out[b + r] = v[r];
  });
  return out;
}

bool satisfies_constraints(const Tensor<float>& x, const Tensor<float>& x_adv,
                           const AttackConfig& cfg) {
  if (x.shape() != x_adv.shape()) return false;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double l2 = 0.0;
    for (std::size_t i = 0; i < x.cols(); ++i) {
      const double a = x_adv.at(r, i), b = x.at(r, i);
      if (!(a >= cfg.lo && a <= cfg.hi)) return false;
      if (cfg.norm == Norm::linf && std::abs(a - b) > cfg.epsilon) return false;
      l2 += (a - b) * (a - b);
    }
    if (cfg.norm == Norm::l2 && std::sqrt(l2) > cfg.epsilon + 1e-6) return false;
  }
  return true;
}

}  // namespace that
