#include "that/objective.hpp"

namespace that {

namespace {

// Large enough that exp underflows to zero, small enough to stay finite
// after scaling by 1/tau.
constexpr double kMasked = -1e30;

}  // namespace

template <typename T>
Tensor<T> positive_mask(const Tensor<T>& clean_features,
                        const Tensor<T>& negatives_t) {
  const std::size_t n = clean_features.rows();
  const std::size_t d = clean_features.cols();
  const std::size_t m = negatives_t.cols();
  require(negatives_t.rows() == d, ErrorCode::dim_mismatch,
          "positive_mask: feature dims differ");
  Tensor<T> mask(Shape{n, m});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k)
        s += static_cast<double>(clean_features.at(r, k)) * negatives_t.at(k, j);
      if (s > 1.0 - 1e-6) mask.at(r, j) = static_cast<T>(kMasked);
    }
  }
  return mask;
}

template <typename T>
ObjectiveTerms record_objective(Graph<T>& g, const NetVars& robust,
                                const ArchitectureConfig& arch, Var log_eta,
                                Var x, const ObjectiveContext<T>& ctx,
                                const LossConfig& cfg,
                                const ObjectiveRecipe& recipe) {
  ObjectiveTerms t;
  const Var trunk = trunk_forward(g, robust, arch, x);
  if (recipe.cls == ClassLoss::nce) {
    t.cls = g.sum(nce_rows(g, trunk, robust.classifier, ctx.y, log_eta));
  } else {
    t.cls = g.sum(cross_entropy_rows(g, raw_logits(g, robust, trunk), ctx.y));
  }
  t.total = t.cls;

  if (recipe.contrastive) {
    require(ctx.clean_features != nullptr && ctx.negatives_t != nullptr,
            ErrorCode::config, "objective: contrastive term needs g(x) and a bank");
    require(ctx.negatives_t->cols() > 0, ErrorCode::empty_negatives,
            "objective: memory bank is empty");
    const Var u = feature_head(g, robust, trunk);
    const Var v = g.constant(*ctx.clean_features);
    const Var neg = g.constant(*ctx.negatives_t);
    Var mask;
    if (cfg.exclude_positive)
      mask = g.constant(positive_mask(*ctx.clean_features, *ctx.negatives_t));
    t.cl = g.sum(contrastive_rows(g, u, v, neg, static_cast<T>(cfg.tau), mask));
    t.total = g.add(t.total, t.cl);
  }

  if (recipe.kl) {
    require(ctx.x_clean != nullptr, ErrorCode::config,
            "objective: kl term needs the clean batch");
    const Var clean_trunk =
        trunk_forward(g, robust, arch, g.constant(*ctx.x_clean));
    const HeadKind head = recipe.head();
    const Var p = class_scores(g, robust, clean_trunk, head, log_eta);
    const Var q = class_scores(g, robust, trunk, head, log_eta);
    t.kl = g.sum(kl_rows(g, p, q));
    t.total = g.add(t.total, g.scale(t.kl, static_cast<T>(cfg.kl_weight)));
  }
  return t;
}

CombinedObjective combined_objective(const Tensor<float>& x,
                                     std::span<const int> y,
                                     const EncoderParams<float>& params,
                                     const MemoryBank& bank,
                                     const LossConfig& cfg,
                                     const AttackConfig& atk,
                                     std::span<const std::uint64_t> seeds,
                                     const ObjectiveRecipe& recipe,
                                     const Executor& exec) {
  cfg.validate();
  require(params.head == recipe.head(), ErrorCode::config,
          "combined_objective: model head does not match the recipe");
  CombinedObjective out;
  out.x_adv = pgd_attack(x, y, params, AttackLoss::classification, atk, seeds,
                         exec).x_adv;

  const Tensor<float> v = clean_forward(x, params);
  const Tensor<float> negatives_t = bank.negatives_transposed();
  ObjectiveContext<float> ctx{y, &x, &v, &negatives_t};

  Graph<float> g;
  const NetVars net = bind(g, params.robust, false);
  const Var log_eta = g.constant(Tensor<float>(Shape{1}, {params.log_eta}));
  const ObjectiveTerms t = record_objective(
      g, net, params.arch, log_eta, g.constant(out.x_adv), ctx, cfg, recipe);
  const double n = static_cast<double>(x.rows());
  auto mean = [&](Var v) { return v.valid() ? g.value(v)[0] / n : 0.0; };
  out.loss = mean(t.total);
  out.cls = mean(t.cls);
  out.cl = mean(t.cl);
  out.kl = mean(t.kl);
  return out;
}

#define THAT_INSTANTIATE(T)                                                  \
  template Tensor<T> positive_mask<T>(const Tensor<T>&, const Tensor<T>&);   \
  template ObjectiveTerms record_objective<T>(                               \
      Graph<T>&, const NetVars&, const ArchitectureConfig&, Var, Var,        \
      const ObjectiveContext<T>&, const LossConfig&, const ObjectiveRecipe&);

THAT_INSTANTIATE(float)
THAT_INSTANTIATE(double)
#undef THAT_INSTANTIATE

}  // namespace that
