#ifndef GSC_APPROX_HPP
#define GSC_APPROX_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gsc/error.hpp"
#include "gsc/head.hpp"
#include "gsc/numcore.hpp"
#include "gsc/parallel.hpp"
#include "gsc/rng.hpp"
#include "gsc/scoring.hpp"
#include "gsc/shortcircuit.hpp"

namespace gsc {

/// y' ~= y + J(F) * delta, from a trace already taken at F.
inline Vector approx_logits(const ForwardTrace& trace, const Vector& delta, FlopTally& tally) {
  const Vector change = trace.jvp(delta, tally);
  return add(trace.logits(), change);
}

/// Standalone form. `y` must equal forward(head, features); the trace at F is
/// rebuilt here, so callers that already hold one should use the overload above.
inline Vector approx_logits(const HeadModel& head, const Vector& features, const Vector& y, const Vector& delta) {
  if (y.size() != head.output_dim()) throw Error(ErrorCode::dimension, "approx_logits: logit length mismatch");
  if (delta.size() != head.input_dim()) throw Error(ErrorCode::dimension, "approx_logits: delta length mismatch");
  FlopTally tally;
  const ForwardTrace trace(head, features, tally);
  return add(y, trace.jvp(delta, tally));
}

inline Vector exact_logits(const HeadModel& head, const Vector& f_prime, FlopTally& tally) {
  return forward(head, f_prime, tally);
}

inline Vector exact_logits(const HeadModel& head, const Vector& f_prime) { return forward(head, f_prime); }

struct SmoothnessEstimate {
  double l_hat = 0.0;
  std::size_t probe_count = 0;
  bool usable = true;  // false for heads with relu: the bound assumes a smooth head
  std::string direction_policy = "uniform in the l2 ball around F, all pairs including the center";
};

/// Empirical Lipschitz constant of the logit Jacobian near F:
/// max over probe pairs of ||J(u) - J(v)||_F / ||u - v||_2.
///
/// Probe points are drawn sequentially from the seed, so a larger probe
/// count with the same seed evaluates a superset of pairs. Extra points (for
/// example samples along the segment to F') join the pair set and must lie in
/// the ball.
inline SmoothnessEstimate estimate_smoothness(const HeadModel& head, const Vector& features, double radius,
                                              std::size_t probes, std::uint64_t seed,
                                              std::span<const Vector> extra_points = {}) {
  if (!(radius > 0.0)) throw Error(ErrorCode::invalid_argument, "smoothness radius must be positive");
  if (probes < 1) throw Error(ErrorCode::invalid_argument, "smoothness needs at least one probe");
  SmoothnessEstimate est;
  est.probe_count = probes;
  if (head.uses(Activation::relu)) {
    est.usable = false;
    return est;
  }
  const std::size_t d = features.size();
  Rng rng(seed);
  std::vector<Vector> points{features};
  for (std::size_t p = 0; p < probes; ++p) {
    std::vector<double> dir(d);
    for (double& x : dir) x = rng.normal();
    const double n = norm2(dir);
    const double r = radius * std::pow(rng.uniform(), 1.0 / static_cast<double>(d));
    std::vector<double> pt(features.values());
    if (n > 0.0) {
      for (std::size_t i = 0; i < d; ++i) pt[i] += r * dir[i] / n;
    }
    points.emplace_back(std::move(pt));
  }
  for (const auto& p : extra_points) {
    if (p.size() != d) throw Error(ErrorCode::dimension, "smoothness: extra point length differs from d");
    if (norm2(sub(p, features)) > radius * (1.0 + 1e-12)) {
      throw Error(ErrorCode::invalid_argument, "smoothness: extra point lies outside the ball");
    }
    points.push_back(p);
  }
  if (!extra_points.empty()) est.direction_policy += ", plus caller-supplied points";
  std::vector<Matrix> jac;
  jac.reserve(points.size());
  for (const auto& p : points) jac.push_back(jacobian(head, p));
  for (std::size_t a = 0; a < points.size(); ++a) {
    for (std::size_t b = a + 1; b < points.size(); ++b) {
      const double dist = norm2(sub(points[a], points[b]));
      if (dist == 0.0) continue;
      double fro = 0.0;
      const auto& ja = jac[a].values();
      const auto& jb = jac[b].values();
      for (std::size_t i = 0; i < ja.size(); ++i) fro += (ja[i] - jb[i]) * (ja[i] - jb[i]);
      est.l_hat = std::max(est.l_hat, std::sqrt(fro) / dist);
    }
  }
  return est;
}

struct ApproxResult {
  Vector y_approx;
  std::optional<Vector> y_exact;
  double delta_norm2 = 0.0;
  std::optional<double> remainder_bound;
  std::uint64_t flops_approx = 0;
  std::optional<std::uint64_t> flops_exact;
};

/// First-order logits, optionally paired with the exact recompute and the
/// remainder bound from a smoothness estimate over the ball reaching F'.
inline ApproxResult approximate(const ForwardTrace& trace, const Vector& f_prime, const Vector& delta,
                                bool with_exact, std::optional<SmoothnessEstimate> smoothness = std::nullopt) {
  ApproxResult r;
  FlopTally approx_tally;
  r.y_approx = approx_logits(trace, delta, approx_tally);
  r.flops_approx = approx_tally.count;
  r.delta_norm2 = norm2(delta);
  if (with_exact) {
    FlopTally exact_tally;
    r.y_exact = exact_logits(trace.head(), f_prime, exact_tally);
    r.flops_exact = exact_tally.count;
  }
  if (smoothness && smoothness->usable) r.remainder_bound = 0.5 * smoothness->l_hat * r.delta_norm2 * r.delta_norm2;
  return r;
}

struct AuditSample {
  Vector features;
  ShortCircuitPlan plan;
  bool is_ood = false;
};

struct AuditRow {
  std::size_t sample_id = 0;
  bool is_ood = false;
  ScoreKind score_kind = ScoreKind::energy;
  double gap_abs = 0.0;
  double logit_gap_inf = 0.0;
  double delta_norm2 = 0.0;
  std::optional<double> remainder_bound;
  std::uint64_t flops_approx = 0;
  std::uint64_t flops_exact = 0;
  double margin = 0.0;  // |score_exact - tau| when a threshold is supplied
  bool decision_flip = false;
};

struct AuditSummary {
  ScoreKind score_kind = ScoreKind::energy;
  bool is_ood = false;
  std::size_t count = 0;
  double mean = 0.0;
  double stddev = 0.0;
  double max = 0.0;
};

struct AuditTable {
  std::vector<AuditRow> rows;
  std::vector<AuditSummary> summary;
  bool bound_available = true;
};

struct AuditOptions {
  std::size_t probes = 16;
  std::size_t segment_points = 8;  // evenly spaced points on F -> F' added to the probes
  std::uint64_t seed = 0;
  std::map<ScoreKind, Threshold> thresholds;  // enables margin / flip columns for the listed scores
};

namespace detail {

struct SampleAudit {
  Vector y_exact;
  Vector y_approx;
  double delta_norm2 = 0.0;
  std::optional<double> bound;
  std::uint64_t flops_approx = 0;
  std::uint64_t flops_exact = 0;
};

inline SampleAudit audit_one(const HeadModel& head, const AuditSample& s, const AuditOptions& opt, std::size_t idx) {
  FlopTally fwd;
  const ForwardTrace trace(head, s.features, fwd);
  FlopTally bwd;
  const std::size_t c = argmax(trace.logits());
  const Vector g = trace.grad_logit(c, bwd);
  const PlanResult plan = run_plan(s.plan, head, s.features, c, g);

  const bool smooth = !head.uses(Activation::relu);
  const double radius = norm2(plan.delta_total);
  std::optional<SmoothnessEstimate> est;
  if (smooth && radius > 0.0) {
    // the remainder lives on the segment F -> F', so probe it directly as well
    std::vector<Vector> segment;
    for (std::size_t i = 1; i <= opt.segment_points; ++i) {
      const double t = static_cast<double>(i) / static_cast<double>(opt.segment_points);
      segment.push_back(add(s.features, scale(plan.delta_total, t)));
    }
    est = estimate_smoothness(head, s.features, radius, opt.probes, Rng::derive(opt.seed, idx), segment);
  }
  ApproxResult r = approximate(trace, plan.f_prime, plan.delta_total, true, est);

  SampleAudit out;
  out.y_approx = std::move(r.y_approx);
  out.y_exact = std::move(*r.y_exact);
  out.flops_approx = r.flops_approx;
  out.flops_exact = *r.flops_exact;
  out.delta_norm2 = r.delta_norm2;
  if (smooth) out.bound = radius > 0.0 ? r.remainder_bound : std::optional<double>(0.0);
  return out;
}

}  // namespace detail

/// Exact recompute vs first-order logits for each sample, reported per score.
inline AuditTable audit_gap(const HeadModel& head, std::span<const AuditSample> samples,
                            std::span<const ScoreKind> score_fns, const AuditOptions& opt = {}) {
  if (samples.empty()) throw Error(ErrorCode::invalid_argument, "audit needs at least one sample");
  const auto audits = parallel_map(samples.size(), [&](std::size_t i) {
    return detail::audit_one(head, samples[i], opt, i);
  });

  AuditTable table;
  table.bound_available = !head.uses(Activation::relu);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& a = audits[i];
    double logit_gap = 0.0;
    for (std::size_t j = 0; j < a.y_exact.size(); ++j) {
      logit_gap = std::max(logit_gap, std::abs(a.y_exact[j] - a.y_approx[j]));
    }
    for (ScoreKind kind : score_fns) {
      AuditRow row;
      row.sample_id = i;
      row.is_ood = samples[i].is_ood;
      row.score_kind = kind;
      const double se = score(kind, a.y_exact);
      const double sa = score(kind, a.y_approx);
      row.gap_abs = std::abs(se - sa);
      row.logit_gap_inf = logit_gap;
      row.delta_norm2 = a.delta_norm2;
      row.remainder_bound = a.bound;
      row.flops_approx = a.flops_approx;
      row.flops_exact = a.flops_exact;
      if (const auto it = opt.thresholds.find(kind); it != opt.thresholds.end()) {
        row.margin = std::abs(se - it->second.tau);
        row.decision_flip = decide(se, it->second) != decide(sa, it->second);
      }
      table.rows.push_back(row);
    }
  }

  for (ScoreKind kind : score_fns) {
    for (bool ood : {false, true}) {
      AuditSummary sum;
      sum.score_kind = kind;
      sum.is_ood = ood;
      double acc = 0.0;
      double acc2 = 0.0;
      for (const auto& r : table.rows) {
        if (r.score_kind != kind || r.is_ood != ood) continue;
        ++sum.count;
        acc += r.gap_abs;
        acc2 += r.gap_abs * r.gap_abs;
        sum.max = std::max(sum.max, r.gap_abs);
      }
      if (sum.count == 0) continue;
      const double n = static_cast<double>(sum.count);
      sum.mean = acc / n;
      sum.stddev = std::sqrt(std::max(0.0, acc2 / n - sum.mean * sum.mean));
      table.summary.push_back(sum);
    }
  }
  return table;
}

}  // namespace gsc

#endif  // GSC_APPROX_HPP
