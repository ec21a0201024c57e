#ifndef GSC_SHORTCIRCUIT_HPP
#define GSC_SHORTCIRCUIT_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gsc/error.hpp"
#include "gsc/head.hpp"
#include "gsc/numcore.hpp"
#include "gsc/rng.hpp"

namespace gsc {

/// How many coordinates to modify: a fraction of d, or an explicit count.
class MaskBudget {
 public:
  static MaskBudget from_ratio(double ratio) {
    if (!(ratio >= 0.0 && ratio <= 1.0)) {
      throw Error(ErrorCode::invalid_argument, "mask ratio must lie in [0, 1]");
    }
    MaskBudget b;
    b.ratio_ = ratio;
    return b;
  }

  static MaskBudget from_count(std::size_t k) {
    MaskBudget b;
    b.count_ = k;
    return b;
  }

  std::optional<double> ratio() const noexcept { return ratio_; }
  std::optional<std::size_t> count() const noexcept { return count_; }

  /// k = round(ratio * d) clamped to [1, d] for ratio > 0; explicit counts clamp to d.
  std::size_t resolve(std::size_t d) const {
    if (count_) return std::min(*count_, d);
    if (*ratio_ == 0.0) return 0;
    const auto k = static_cast<std::size_t>(std::llround(*ratio_ * static_cast<double>(d)));
    return std::clamp<std::size_t>(k, 1, d);
  }

 private:
  MaskBudget() = default;
  std::optional<double> ratio_;
  std::optional<std::size_t> count_;
};

enum class SelectionKind { top_grad, top_grad_times_feature, fisher_weighted, random, reverse };

constexpr std::string_view to_string(SelectionKind k) {
  switch (k) {
    case SelectionKind::top_grad: return "top_grad";
    case SelectionKind::top_grad_times_feature: return "top_grad_times_feature";
    case SelectionKind::fisher_weighted: return "fisher_weighted";
    case SelectionKind::random: return "random";
    case SelectionKind::reverse: return "reverse";
  }
  return "top_grad";
}

inline SelectionKind parse_selection_kind(std::string_view name) {
  for (auto k : {SelectionKind::top_grad, SelectionKind::top_grad_times_feature, SelectionKind::fisher_weighted,
                 SelectionKind::random, SelectionKind::reverse}) {
    if (to_string(k) == name) return k;
  }
  throw Error(ErrorCode::invalid_argument, "unknown selection strategy '" + std::string(name) + "'");
}

struct SelectionStrategy {
  SelectionKind kind = SelectionKind::top_grad;
  MaskBudget budget = MaskBudget::from_ratio(0.05);
  std::optional<std::uint64_t> seed;  // random only
  std::optional<Vector> fisher_diag;  // fisher_weighted only

  void validate() const {
    if (kind == SelectionKind::random && !seed) {
      throw Error(ErrorCode::invalid_argument, "random selection requires a seed");
    }
    if (kind == SelectionKind::fisher_weighted) {
      if (!fisher_diag) throw Error(ErrorCode::invalid_argument, "fisher_weighted selection requires a Fisher diagonal");
      for (double l : *fisher_diag) {
        if (!(l > 0.0)) throw Error(ErrorCode::invalid_argument, "Fisher diagonal entries must be positive");
      }
    }
  }
};

enum class RuleKind { zero, scale, sign_perturb, orth_project, clip };

constexpr std::string_view to_string(RuleKind k) {
  switch (k) {
    case RuleKind::zero: return "zero";
    case RuleKind::scale: return "scale";
    case RuleKind::sign_perturb: return "sign_perturb";
    case RuleKind::orth_project: return "orth_project";
    case RuleKind::clip: return "clip";
  }
  return "zero";
}

inline RuleKind parse_rule_kind(std::string_view name) {
  for (auto k : {RuleKind::zero, RuleKind::scale, RuleKind::sign_perturb, RuleKind::orth_project, RuleKind::clip}) {
    if (to_string(k) == name) return k;
  }
  throw Error(ErrorCode::invalid_argument, "unknown modification rule '" + std::string(name) + "'");
}

/// How the selected coordinates are modified.
class ModificationRule {
 public:
  static ModificationRule zero() { return ModificationRule(RuleKind::zero); }

  static ModificationRule scale(double beta) {
    if (!(beta >= 0.0 && beta < 1.0)) throw Error(ErrorCode::invalid_argument, "scale beta must lie in [0, 1)");
    ModificationRule r(RuleKind::scale);
    r.beta_ = beta;
    return r;
  }

  /// Without an explicit alpha the step is 0.1 * ||F||_inf of the feature it is applied to.
  static ModificationRule sign_perturb(std::optional<double> alpha = std::nullopt) {
    if (alpha && !(*alpha > 0.0)) throw Error(ErrorCode::invalid_argument, "sign_perturb alpha must be positive");
    ModificationRule r(RuleKind::sign_perturb);
    r.alpha_ = alpha;
    return r;
  }

  static ModificationRule orth_project() { return ModificationRule(RuleKind::orth_project); }

  static ModificationRule clip(double bound) {
    if (!(bound > 0.0)) throw Error(ErrorCode::invalid_argument, "clip bound must be positive");
    ModificationRule r(RuleKind::clip);
    r.clip_bound_ = bound;
    return r;
  }

  RuleKind kind() const noexcept { return kind_; }
  double beta() const { return beta_.value(); }
  std::optional<double> alpha() const noexcept { return alpha_; }
  double clip_bound() const { return clip_bound_.value(); }

  double alpha_for(const Vector& features) const { return alpha_.value_or(0.1 * norm_inf(features)); }

  bool masked() const noexcept { return kind_ != RuleKind::orth_project; }

 private:
  explicit ModificationRule(RuleKind kind) : kind_(kind) {}
  RuleKind kind_;
  std::optional<double> beta_;
  std::optional<double> alpha_;
  std::optional<double> clip_bound_;
};

struct ShortCircuitPlan {
  SelectionStrategy strategy;
  ModificationRule rule = ModificationRule::zero();
  std::size_t rounds = 1;

  void validate() const {
    strategy.validate();
    if (rounds < 1) throw Error(ErrorCode::invalid_argument, "plan needs at least one round");
  }
};

/// Sorted, distinct coordinate indices.
struct MaskSet {
  std::vector<std::size_t> indices;
  bool degenerate_gradient = false;

  std::size_t size() const noexcept { return indices.size(); }
  bool contains(std::size_t i) const { return std::binary_search(indices.begin(), indices.end(), i); }
};

namespace detail {

inline bool all_zero(const Vector& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
}

/// Indices of the k largest scores; ties go to the lower index.
inline std::vector<std::size_t> top_k(const std::vector<double>& score, std::size_t k) {
  std::vector<std::size_t> order(score.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const auto by_score = [&](std::size_t a, std::size_t b) {
    return score[a] > score[b] || (score[a] == score[b] && a < b);
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), by_score);
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

}  // namespace detail

/// `exclude` (sorted) lists coordinates that may not be chosen; iterative
/// plans pass the coordinates modified in earlier rounds.
inline MaskSet select(const SelectionStrategy& strategy, const Vector& features, const Vector& grad,
                      std::span<const std::size_t> exclude = {}) {
  strategy.validate();
  const std::size_t d = features.size();
  if (grad.size() != d) throw Error(ErrorCode::dimension, "select: feature and gradient lengths differ");
  if (strategy.fisher_diag && strategy.fisher_diag->size() != d) {
    throw Error(ErrorCode::dimension, "select: Fisher diagonal length differs from d");
  }
  const auto excluded = [&](std::size_t i) { return std::binary_search(exclude.begin(), exclude.end(), i); };
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < d; ++i) {
    if (!excluded(i)) eligible.push_back(i);
  }
  const std::size_t k = std::min(strategy.budget.resolve(d), eligible.size());

  MaskSet mask;
  if (strategy.kind == SelectionKind::random) {
    Rng rng(*strategy.seed);
    for (std::size_t j : rng.sample(eligible.size(), k)) mask.indices.push_back(eligible[j]);
    std::sort(mask.indices.begin(), mask.indices.end());
    return mask;
  }

  std::vector<double> score(d);
  for (std::size_t i = 0; i < d; ++i) {
    switch (strategy.kind) {
      case SelectionKind::top_grad: score[i] = std::abs(grad[i]); break;
      case SelectionKind::top_grad_times_feature: score[i] = std::abs(grad[i] * features[i]); break;
      case SelectionKind::fisher_weighted: score[i] = std::abs(grad[i]) / std::sqrt((*strategy.fisher_diag)[i]); break;
      case SelectionKind::reverse: score[i] = -std::abs(grad[i]); break;
      case SelectionKind::random: break;
    }
  }
  if (detail::all_zero(grad)) {
    // every score ties, so the ranking falls back to the lowest indices
    mask.degenerate_gradient = true;
    std::fill(score.begin(), score.end(), 0.0);
  }
  for (std::size_t i : exclude) {
    if (i < d) score[i] = -std::numeric_limits<double>::infinity();
  }
  mask.indices = detail::top_k(score, k);
  return mask;
}

struct Modification {
  Vector f_prime;
  Vector delta;
  bool degenerate_gradient = false;
};

inline Modification apply(const ModificationRule& rule, const Vector& features, const Vector& grad,
                          const MaskSet& mask) {
  const std::size_t d = features.size();
  if (grad.size() != d) throw Error(ErrorCode::dimension, "apply: feature and gradient lengths differ");
  for (std::size_t i : mask.indices) {
    if (i >= d) throw Error(ErrorCode::index, "mask index " + std::to_string(i) + " out of range");
  }

  std::vector<double> out(features.values());
  bool degenerate = false;
  switch (rule.kind()) {
    case RuleKind::zero:
      for (std::size_t i : mask.indices) out[i] = 0.0;
      break;
    case RuleKind::scale:
      for (std::size_t i : mask.indices) out[i] = rule.beta() * features[i];
      break;
    case RuleKind::sign_perturb: {
      const double alpha = rule.alpha_for(features);
      for (std::size_t i : mask.indices) {
        const double s = grad[i] > 0.0 ? 1.0 : (grad[i] < 0.0 ? -1.0 : 0.0);
        out[i] = features[i] - alpha * s;
      }
      break;
    }
    case RuleKind::clip:
      for (std::size_t i : mask.indices) out[i] = std::clamp(features[i], -rule.clip_bound(), rule.clip_bound());
      break;
    case RuleKind::orth_project: {
      const double gnorm = norm2(grad);
      if (gnorm == 0.0) {
        degenerate = true;
        break;
      }
      double proj = 0.0;
      for (std::size_t i = 0; i < d; ++i) proj += features[i] * (grad[i] / gnorm);
      for (std::size_t i = 0; i < d; ++i) out[i] = features[i] - proj * (grad[i] / gnorm);
      break;
    }
  }

  std::vector<double> delta(d);
  for (std::size_t i = 0; i < d; ++i) delta[i] = out[i] - features[i];
  return Modification{Vector(std::move(out)), Vector(std::move(delta)), degenerate};
}

/// First-order predicted drop of the predicted-class logit.
inline double logit_drop_estimate(const Vector& grad, const Vector& features, const MaskSet& mask,
                                  const ModificationRule& rule) {
  if (grad.size() != features.size()) throw Error(ErrorCode::dimension, "logit_drop_estimate: length mismatch");
  double drop = 0.0;
  switch (rule.kind()) {
    case RuleKind::zero:
      for (std::size_t i : mask.indices) drop += grad[i] * features[i];
      break;
    case RuleKind::scale:
      for (std::size_t i : mask.indices) drop += grad[i] * features[i];
      drop *= 1.0 - rule.beta();
      break;
    case RuleKind::sign_perturb: {
      const double alpha = rule.alpha_for(features);
      for (std::size_t i : mask.indices) drop += std::abs(grad[i]);
      drop *= alpha;
      break;
    }
    case RuleKind::clip:
      for (std::size_t i : mask.indices) {
        drop += grad[i] * (features[i] - std::clamp(features[i], -rule.clip_bound(), rule.clip_bound()));
      }
      break;
    case RuleKind::orth_project: {
      // <F, g_hat> * <g, g_hat> == <F, g>
      drop = dot(features, grad);
      break;
    }
  }
  return drop;
}

struct RoundRecord {
  std::size_t c = 0;
  Vector g;
  MaskSet mask;
};

struct PlanResult {
  Vector f_prime;
  Vector delta_total;
  std::vector<RoundRecord> per_round;
  MaskSet union_mask;
  bool degenerate_gradient = false;
  std::uint64_t flops = 0;  // forward + backward of re-evaluated rounds (round 0 excluded)
};

/// Per-round budgets: k split as evenly as possible, earlier rounds take the remainder.
inline std::vector<std::size_t> split_budget(std::size_t k, std::size_t rounds) {
  std::vector<std::size_t> out(rounds, k / rounds);
  for (std::size_t r = 0; r < k % rounds; ++r) ++out[r];
  return out;
}

/// Runs a (possibly iterative) short-circuit plan. Round 0 uses the supplied
/// predicted class and gradient; later rounds recompute both at the current
/// modified feature and choose among coordinates not modified yet.
inline PlanResult run_plan(const ShortCircuitPlan& plan, const HeadModel& head, const Vector& features,
                           std::size_t initial_class, const Vector& initial_grad) {
  plan.validate();
  const std::size_t d = features.size();
  if (d != head.input_dim()) throw Error(ErrorCode::dimension, "run_plan: feature length differs from head input");
  const std::size_t k = plan.strategy.budget.resolve(d);
  const auto budgets = split_budget(k, plan.rounds);

  PlanResult result;
  Vector current = features;
  std::vector<std::size_t> all_indices;
  for (std::size_t r = 0; r < plan.rounds; ++r) {
    RoundRecord rec;
    if (r == 0) {
      rec.c = initial_class;
      rec.g = initial_grad;
    } else {
      FlopTally tally;
      const ForwardTrace trace(head, current, tally);
      rec.c = argmax(trace.logits());
      rec.g = trace.grad_logit(rec.c, tally);
      result.flops += tally.count;
    }
    SelectionStrategy strategy = plan.strategy;
    strategy.budget = MaskBudget::from_count(budgets[r]);
    if (strategy.kind == SelectionKind::random && r > 0) strategy.seed = Rng::derive(*plan.strategy.seed, r);
    rec.mask = select(strategy, current, rec.g, all_indices);
    Modification mod = apply(plan.rule, current, rec.g, rec.mask);
    result.degenerate_gradient = result.degenerate_gradient || rec.mask.degenerate_gradient || mod.degenerate_gradient;
    all_indices.insert(all_indices.end(), rec.mask.indices.begin(), rec.mask.indices.end());
    std::sort(all_indices.begin(), all_indices.end());
    current = std::move(mod.f_prime);
    result.per_round.push_back(std::move(rec));
  }
  all_indices.erase(std::unique(all_indices.begin(), all_indices.end()), all_indices.end());
  result.union_mask.indices = std::move(all_indices);
  result.union_mask.degenerate_gradient = result.degenerate_gradient;
  result.delta_total = sub(current, features);
  result.f_prime = std::move(current);
  return result;
}

inline PlanResult run_plan(const ShortCircuitPlan& plan, const HeadModel& head, const Vector& features) {
  const LogitBundle initial = evaluate(head, features);
  return run_plan(plan, head, features, initial.c, initial.g);
}

}  // namespace gsc

#endif  // GSC_SHORTCIRCUIT_HPP
