#include "that/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>

#include "that/defense.hpp"
#include "that/store.hpp"
#include "that/strings.hpp"

namespace that {

namespace {

constexpr std::uint64_t kShuffleStream = 0x5AF1;
constexpr std::uint64_t kAttackStream = 0xA77C;
constexpr std::uint64_t kBankStream = 0xBA4C;
constexpr std::uint64_t kMonitorStream = 0x3017;
constexpr std::uint64_t kInitStream = 0x1417;

}  // namespace

const char* to_string(TrainMode m) noexcept {
  switch (m) {
    case TrainMode::natural: return "natural";
    case TrainMode::natural_cl: return "natural_cl";
    case TrainMode::standard_at: return "standard_at";
    case TrainMode::standard_at_kl: return "standard_at_kl";
    case TrainMode::that: return "that";
    case TrainMode::that_no_cl: return "that_no_cl";
    case TrainMode::that_no_nce: return "that_no_nce";
    case TrainMode::free_at: return "free_at";
    case TrainMode::free_that: return "free_that";
  }
  return "?";
}

const char* to_string(CleanPolicy p) noexcept {
  return p == CleanPolicy::frozen ? "frozen" : "momentum";
}

TrainMode parse_train_mode(const std::string& text) {
  for (TrainMode m : {TrainMode::natural, TrainMode::natural_cl,
                      TrainMode::standard_at, TrainMode::standard_at_kl,
                      TrainMode::that, TrainMode::that_no_cl,
                      TrainMode::that_no_nce, TrainMode::free_at,
                      TrainMode::free_that}) {
    if (text == to_string(m)) return m;
  }
  fail(ErrorCode::config, "unknown training mode '" + text + "'");
}

CleanPolicy parse_clean_policy(const std::string& text) {
  if (text == "frozen") return CleanPolicy::frozen;
  if (text == "momentum") return CleanPolicy::momentum;
  fail(ErrorCode::config, "unknown clean-encoder policy '" + text + "'");
}

bool is_free(TrainMode m) noexcept {
  return m == TrainMode::free_at || m == TrainMode::free_that;
}

bool is_adversarial(TrainMode m) noexcept {
  return m != TrainMode::natural && m != TrainMode::natural_cl;
}

ObjectiveRecipe recipe_for(TrainMode m) noexcept {
  switch (m) {
    case TrainMode::natural:
    case TrainMode::standard_at:
    case TrainMode::free_at:
      return {ClassLoss::cross_entropy, false, false};
    case TrainMode::standard_at_kl:
      return {ClassLoss::cross_entropy, false, true};
    case TrainMode::natural_cl:
    case TrainMode::that_no_nce:
      return {ClassLoss::cross_entropy, true, false};
    case TrainMode::that:
    case TrainMode::free_that:
      return {ClassLoss::nce, true, false};
    case TrainMode::that_no_cl:
      return {ClassLoss::nce, false, false};
  }
  return {};
}

bool needs_clean_encoder(TrainMode m) noexcept { return recipe_for(m).contrastive; }

void TrainConfig::validate() const {
  require(epochs >= 1, ErrorCode::config, "train: epochs must be >= 1");
  require(batch >= 1, ErrorCode::config, "train: batch must be >= 1");
  require(lr > 0.0, ErrorCode::config, "train: lr must be positive");
  require(decay > 0.0, ErrorCode::config, "train: decay must be positive");
  require(momentum >= 0.0 && momentum < 1.0, ErrorCode::config,
          "train: momentum must lie in [0, 1)");
  require(weight_decay >= 0.0, ErrorCode::config,
          "train: weight decay must be non-negative");
  require(eta_lr_scale >= 0.0, ErrorCode::config,
          "train: eta_lr_scale must be non-negative");
  require(replays >= 1, ErrorCode::config, "train: replays must be >= 1");
  require(clean_momentum >= 0.0 && clean_momentum <= 1.0, ErrorCode::config,
          "train: clean momentum must lie in [0, 1]");
  require(eval_steps >= 1, ErrorCode::config, "train: eval_steps must be >= 1");
  for (std::size_t i = 0; i < milestones.size(); ++i) {
    require(milestones[i] >= 0 && (i == 0 || milestones[i] > milestones[i - 1]),
            ErrorCode::config, "train: milestones must be strictly increasing");
  }
}

double lr_at(int epoch, const TrainConfig& cfg) {
  require(epoch >= 0, ErrorCode::invalid_argument, "lr_at: negative epoch");
  double lr = cfg.lr;
  for (int m : cfg.milestones) {
    if (m <= epoch) lr *= cfg.decay;
  }
  return lr;
}

void Sgd::step(std::span<Tensor<float>* const> params,
               std::span<const Tensor<float>> grads,
               std::span<const double> weight_decay,
               std::span<const double> lr_scale, double lr) {
  require(params.size() == grads.size() && params.size() == weight_decay.size() &&
              params.size() == lr_scale.size(),
          ErrorCode::shape_mismatch, "sgd: parameter and gradient lists differ");
  if (velocity_.empty()) {
    for (const Tensor<float>* p : params) velocity_.emplace_back(p->shape());
  }
  require(velocity_.size() == params.size(), ErrorCode::shape_mismatch,
          "sgd: parameter list changed between steps");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<float>& w = *params[i];
    Tensor<float>& v = velocity_[i];
    const Tensor<float>& g = grads[i];
    require(w.shape() == g.shape() && w.shape() == v.shape(),
            ErrorCode::shape_mismatch, "sgd: gradient shape differs from parameter");
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double vk = momentum_ * v[k] + (g[k] + weight_decay[i] * w[k]);
      v[k] = static_cast<float>(vk);
      w[k] = static_cast<float>(w[k] - lr * lr_scale[i] * vk);
    }
  }
}

std::string RunMetrics::csv(int eval_steps) const {
  std::ostringstream os;
  os << "epoch,lr,loss_cl,loss_nce,clean_acc,robust_acc@" << eval_steps
     << ",passes\n";
  for (const EpochMetrics& e : epochs) {
    os << e.epoch << ',' << format_double(e.lr) << ',' << format_double(e.loss_cl)
       << ',' << format_double(e.loss_cls) << ',' << format_double(e.clean_acc)
       << ',' << format_double(e.robust_acc) << ',' << e.passes << '\n';
  }
  return os.str();
}

Accuracy measure_accuracy(const EncoderParams<float>& params,
                          const Dataset& test, const AttackConfig& atk,
                          std::uint64_t seed, const Executor& exec) {
  EvalSpec spec;
  spec.atk = atk;
  spec.seed = seed;
  spec.attack = AttackKind::none;
  Accuracy a;
  a.clean = evaluate(params, test, spec, nullptr, exec).top1;
  spec.attack = AttackKind::pgd;
  a.robust = evaluate(params, test, spec, nullptr, exec).top1;
  return a;
}

namespace {

// Trainable tensors in a fixed order: the robust encoder, then log eta when
// the head uses it.
struct TrainableSet {
  std::vector<Tensor<float>*> ptrs;
  std::vector<double> decay;
  std::vector<double> lr_scale;
  Tensor<float> log_eta{Shape{1}};
  bool train_eta = false;
};

void collect(EncoderParams<float>& p, const TrainConfig& cfg, TrainableSet& set) {
  set.ptrs.clear();
  set.decay.clear();
  set.lr_scale.clear();
  p.robust.visit([&](const std::string&, Tensor<float>& t) {
    set.ptrs.push_back(&t);
    set.decay.push_back(cfg.weight_decay);
    set.lr_scale.push_back(1.0);
  });
  set.train_eta = p.head == HeadKind::cosine;
  set.log_eta[0] = p.log_eta;
  if (set.train_eta) {
    set.ptrs.push_back(&set.log_eta);
    set.decay.push_back(0.0);
    set.lr_scale.push_back(cfg.eta_lr_scale);
  }
}

struct BatchGrad {
  std::vector<Tensor<float>> grads;
  Tensor<float> input_grad;
  double cls = 0.0;
  double cl = 0.0;
  double kl = 0.0;
};

struct BatchInputs {
  const Tensor<float>* x = nullptr;        // rows the loss is evaluated on
  const Tensor<float>* x_clean = nullptr;
  std::span<const int> y;
  const Tensor<float>* clean_features = nullptr;
  const Tensor<float>* negatives_t = nullptr;
};

// Gradient of the batch-mean loss. Each chunk records its own graph; the
// per-chunk gradients are summed in chunk order.
BatchGrad batch_gradient(const EncoderParams<float>& p, const BatchInputs& in,
                         const LossConfig& loss, const ObjectiveRecipe& recipe,
                         bool train_eta, bool want_input_grad,
                         const Executor& exec) {
  const std::size_t n = in.x->rows();
  const std::size_t chunks = chunk_count(n);
  std::vector<BatchGrad> parts(chunks);
  const float inv_n = 1.0F / static_cast<float>(n);
  exec.run(chunks, [&](std::size_t c) {
    const std::size_t b = c * kChunkRows;
    const std::size_t e = std::min(b + kChunkRows, n);
    Graph<float> g;
    const NetVars net = bind(g, p.robust, true);
    const Var le = g.leaf(Tensor<float>(Shape{1}, {p.log_eta}), train_eta);
    const Var x = g.leaf(in.x->slice_rows(b, e), want_input_grad);
    Tensor<float> xc, v;
    ObjectiveContext<float> ctx;
    ctx.y = in.y.subspan(b, e - b);
    if (in.x_clean != nullptr) {
      xc = in.x_clean->slice_rows(b, e);
      ctx.x_clean = &xc;
    }
    if (in.clean_features != nullptr) {
      v = in.clean_features->slice_rows(b, e);
      ctx.clean_features = &v;
    }
    ctx.negatives_t = in.negatives_t;
    const ObjectiveTerms t =
        record_objective(g, net, p.arch, le, x, ctx, loss, recipe);
    std::vector<Var> wrt = net.flatten();
    if (train_eta) wrt.push_back(le);
    if (want_input_grad) wrt.push_back(x);
    BatchGrad& part = parts[c];
    part.grads = g.grad(g.scale(t.total, inv_n), wrt);
    if (want_input_grad) {
      part.input_grad = std::move(part.grads.back());
      part.grads.pop_back();
    }
    part.cls = g.value(t.cls)[0];
    if (t.cl.valid()) part.cl = g.value(t.cl)[0];
    if (t.kl.valid()) part.kl = g.value(t.kl)[0];
  });

  BatchGrad out = std::move(parts[0]);
  if (want_input_grad) {
    Tensor<float> full(in.x->shape());
    std::copy(out.input_grad.data().begin(), out.input_grad.data().end(),
              full.data().begin());
    out.input_grad = std::move(full);
  }
  for (std::size_t c = 1; c < chunks; ++c) {
    for (std::size_t i = 0; i < out.grads.size(); ++i) {
      auto dst = out.grads[i].data();
      auto src = parts[c].grads[i].data();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
    if (want_input_grad) {
      const auto src = parts[c].input_grad.data();
      std::copy(src.begin(), src.end(),
                out.input_grad.row(c * kChunkRows).begin());
    }
    out.cls += parts[c].cls;
    out.cl += parts[c].cl;
    out.kl += parts[c].kl;
  }
  return out;
}

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = rng.below(i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

class Trainer {
 public:
  Trainer(const Dataset& train, const Dataset& test, const TrainConfig& cfg,
          const AttackConfig& atk, const LossConfig& loss,
          EncoderParams<float> init)
      : train_(train),
        test_(test),
        cfg_(cfg),
        atk_(atk),
        loss_(loss),
        recipe_(recipe_for(cfg.mode)),
        exec_(cfg.threads),
        opt_(cfg.momentum) {
    cfg_.validate();
    atk_.validate();
    loss_.validate();
    train_.validate();
    require(train_.size() > 0, ErrorCode::invalid_argument, "train: empty dataset");
    result_.params = std::move(init);
    EncoderParams<float>& p = result_.params;
    p.arch.validate();
    require(train_.dim() == p.arch.input_dim() && train_.classes == p.arch.classes,
            ErrorCode::shape_mismatch, "train: dataset does not match the model");
    p.head = recipe_.head();
    p.log_eta = static_cast<float>(std::log(loss_.eta_init));
    if (recipe_.contrastive) {
      Rng rng(derive_seed(cfg_.seed, kBankStream));
      bank_.emplace(cfg_.bank_capacity, p.arch.feature_dim, rng);
    }
    if (!cfg_.checkpoint_dir.empty())
      std::filesystem::create_directories(cfg_.checkpoint_dir);
  }

  TrainResult run_standard() {
    const std::size_t n = train_.size();
    for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
      const auto start = std::chrono::steady_clock::now();
      const double lr = lr_at(epoch, cfg_);
      const auto order = shuffled(n, derive_seed(cfg_.seed, kShuffleStream, epoch));
      Sums sums;
      for (std::size_t b = 0; b < n; b += cfg_.batch) {
        const std::size_t e = std::min(b + cfg_.batch, n);
        const std::span<const std::size_t> rows(order.data() + b, e - b);
        const Dataset batch = train_.gather(rows);
        Tensor<float> x = batch.images;
        if (is_adversarial(cfg_.mode)) {
          std::vector<std::uint64_t> seeds(rows.size());
          for (std::size_t i = 0; i < rows.size(); ++i)
            seeds[i] = derive_seed(cfg_.seed, kAttackStream,
                                   static_cast<std::uint64_t>(epoch), rows[i]);
          x = pgd_attack(batch.images, batch.labels, result_.params,
                         AttackLoss::classification, atk_, seeds, exec_)
                  .x_adv;
          result_.metrics.passes += static_cast<std::uint64_t>(atk_.steps);
        }
        const Tensor<float> v = clean_features(batch);
        update(batch, x, v, lr, false, sums);
        finish_batch(v);
      }
      end_epoch(epoch, lr, sums, start);
    }
    return finish();
  }

  TrainResult run_free() {
    const std::size_t n = train_.size();
    const int m = cfg_.replays;
    const int data_epochs = std::max(1, cfg_.epochs / m);
    const auto eps = static_cast<float>(atk_.epsilon);
    Tensor<float> delta(Shape{std::min(cfg_.batch, n), train_.dim()});
    for (int epoch = 0; epoch < data_epochs; ++epoch) {
      const auto start = std::chrono::steady_clock::now();
      // Milestones are in replay-equivalent epochs, like the other modes.
      const double lr = lr_at(epoch * m, cfg_);
      const auto order = shuffled(n, derive_seed(cfg_.seed, kShuffleStream, epoch));
      Sums sums;
      for (std::size_t b = 0; b < n; b += cfg_.batch) {
        const std::size_t e = std::min(b + cfg_.batch, n);
        const std::span<const std::size_t> rows(order.data() + b, e - b);
        const Dataset batch = train_.gather(rows);
        const Tensor<float> v = clean_features(batch);
        Tensor<float> x(batch.images.shape());
        for (int r = 0; r < m; ++r) {
          for (std::size_t i = 0; i < x.size(); ++i) {
            x[i] = std::clamp(batch.images[i] + delta[i],
                              static_cast<float>(atk_.lo), static_cast<float>(atk_.hi));
          }
          const Tensor<float> gx = update(batch, x, v, lr, true, sums);
          for (std::size_t i = 0; i < gx.size(); ++i) {
            const float s = gx[i] > 0.0F ? 1.0F : (gx[i] < 0.0F ? -1.0F : 0.0F);
            delta[i] = std::clamp(delta[i] + eps * s, -eps, eps);
          }
        }
        finish_batch(v);
      }
      end_epoch(epoch, lr, sums, start);
    }
    return finish();
  }

 private:
  struct Sums {
    double cls = 0.0;
    double cl = 0.0;
    double kl = 0.0;
    std::size_t rows = 0;
  };

  Tensor<float> clean_features(const Dataset& batch) const {
    if (!recipe_.contrastive) return {};
    return clean_forward(batch.images, result_.params);
  }

  // One forward-backward pass and weight update; returns the input gradient
  // when asked for it.
  Tensor<float> update(const Dataset& batch, const Tensor<float>& x,
                       const Tensor<float>& v, double lr, bool want_input_grad,
                       Sums& sums) {
    EncoderParams<float>& p = result_.params;
    Tensor<float> negatives_t;
    BatchInputs in;
    in.x = &x;
    in.y = batch.labels;
    if (recipe_.kl) in.x_clean = &batch.images;
    if (recipe_.contrastive) {
      negatives_t = bank_->negatives_transposed();
      in.clean_features = &v;
      in.negatives_t = &negatives_t;
    }
    TrainableSet set;
    collect(p, cfg_, set);
    BatchGrad g = batch_gradient(p, in, loss_, recipe_, set.train_eta,
                                 want_input_grad, exec_);
    opt_.step(set.ptrs, g.grads, set.decay, set.lr_scale, lr);
    p.log_eta = set.log_eta[0];
    ++result_.metrics.passes;
    sums.cls += g.cls;
    sums.cl += g.cl;
    sums.kl += g.kl;
    sums.rows += x.rows();
    return std::move(g.input_grad);
  }

  void finish_batch(const Tensor<float>& v) {
    ++result_.metrics.batches;
    if (recipe_.contrastive) {
      bank_->push_batch(v);
      result_.metrics.bank_pushes += v.rows();
    }
    if (cfg_.clean_policy == CleanPolicy::momentum && needs_clean_encoder(cfg_.mode)) {
      momentum_update(result_.params.clean, result_.params.robust,
                      static_cast<float>(cfg_.clean_momentum));
    }
  }

  void end_epoch(int epoch, double lr, const Sums& sums,
                 std::chrono::steady_clock::time_point start) {
    EpochMetrics em;
    em.epoch = epoch;
    em.lr = lr;
    const double rows = static_cast<double>(std::max<std::size_t>(sums.rows, 1));
    em.loss_cls = sums.cls / rows;
    em.loss_cl = sums.cl / rows;
    em.loss_kl = sums.kl / rows;
    em.passes = result_.metrics.passes;
    if (test_.size() > 0) {
      const std::size_t k = cfg_.eval_samples == 0
                                ? test_.size()
                                : std::min(cfg_.eval_samples, test_.size());
      AttackConfig monitor = atk_;
      monitor.steps = cfg_.eval_steps;
      monitor.mode = AttackMode::untargeted;
      const Accuracy a = measure_accuracy(
          result_.params, test_.subset(0, k), monitor,
          derive_seed(cfg_.seed, kMonitorStream, static_cast<std::uint64_t>(epoch)),
          exec_);
      em.clean_acc = a.clean;
      em.robust_acc = a.robust;
    }
    em.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                     .count();
    result_.metrics.epochs.push_back(em);

    if (!cfg_.checkpoint_dir.empty()) {
      namespace fs = std::filesystem;
      const fs::path dir(cfg_.checkpoint_dir);
      const MemoryBank* bank = bank_ ? &*bank_ : nullptr;
      char name[32];
      std::snprintf(name, sizeof name, "epoch-%03d.ckpt", epoch);
      save_model((dir / name).string(), result_.params, bank);
      if (best_epoch_ < 0 || em.robust_acc > best_robust_) {
        best_epoch_ = epoch;
        best_robust_ = em.robust_acc;
        save_model((dir / "best.ckpt").string(), result_.params, bank);
      }
      write_text_atomic((dir / "metrics.csv").string(),
                        result_.metrics.csv(cfg_.eval_steps));
    }
  }

  TrainResult finish() {
    result_.bank = std::move(bank_);
    return std::move(result_);
  }

  const Dataset& train_;
  const Dataset& test_;
  TrainConfig cfg_;
  AttackConfig atk_;
  LossConfig loss_;
  ObjectiveRecipe recipe_;
  Executor exec_;
  Sgd opt_;
  TrainResult result_;
  std::optional<MemoryBank> bank_;
  int best_epoch_ = -1;
  double best_robust_ = 0.0;
};

}  // namespace

TrainResult train_standard(const Dataset& train, const Dataset& test,
                           const TrainConfig& cfg, const AttackConfig& atk,
                           const LossConfig& loss, EncoderParams<float> init) {
  require(!is_free(cfg.mode), ErrorCode::config,
          "train_standard: free modes go through train_free");
  return Trainer(train, test, cfg, atk, loss, std::move(init)).run_standard();
}

TrainResult train_free(const Dataset& train, const Dataset& test,
                       const TrainConfig& cfg, const AttackConfig& atk,
                       const LossConfig& loss, EncoderParams<float> init) {
  require(is_free(cfg.mode), ErrorCode::config,
          "train_free: mode must be free_at or free_that");
  return Trainer(train, test, cfg, atk, loss, std::move(init)).run_free();
}

TrainResult train(const Dataset& train, const Dataset& test,
                  const TrainConfig& cfg, const AttackConfig& atk,
                  const LossConfig& loss, EncoderParams<float> init) {
  return is_free(cfg.mode) ? train_free(train, test, cfg, atk, loss, std::move(init))
                           : train_standard(train, test, cfg, atk, loss, std::move(init));
}

EncoderParams<float> initial_params(const ArchitectureConfig& arch,
                                    std::uint64_t seed) {
  Rng rng(derive_seed(seed, kInitStream));
  return init_params<float>(arch, rng);
}

TrainResult train_clean_encoder(const Dataset& train, const Dataset& test,
                                const TrainConfig& cfg,
                                const ArchitectureConfig& arch) {
  EncoderParams<float> full = initial_params(arch, cfg.seed);
  EncoderParams<float> tmp = full;
  tmp.robust = full.clean;
  TrainConfig c = cfg;
  c.mode = TrainMode::natural;
  TrainResult r = train_standard(train, test, c, AttackConfig{}, LossConfig{},
                                 std::move(tmp));
  full.clean = std::move(r.params.robust);
  full.head = HeadKind::linear;
  r.params = std::move(full);
  r.bank.reset();
  return r;
}

}  // namespace that
