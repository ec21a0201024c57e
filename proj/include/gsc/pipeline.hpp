#ifndef GSC_PIPELINE_HPP
#define GSC_PIPELINE_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "gsc/approx.hpp"
#include "gsc/error.hpp"
#include "gsc/head.hpp"
#include "gsc/io.hpp"
#include "gsc/metrics.hpp"
#include "gsc/parallel.hpp"
#include "gsc/rng.hpp"
#include "gsc/scoring.hpp"
#include "gsc/shortcircuit.hpp"

namespace gsc {

enum class ApproxMode { first_order, exact, both };

constexpr std::string_view to_string(ApproxMode m) {
  switch (m) {
    case ApproxMode::first_order: return "first_order";
    case ApproxMode::exact: return "exact";
    case ApproxMode::both: return "both";
  }
  return "first_order";
}

inline ApproxMode parse_approx_mode(std::string_view s) {
  for (auto m : {ApproxMode::first_order, ApproxMode::exact, ApproxMode::both}) {
    if (to_string(m) == s) return m;
  }
  throw Error(ErrorCode::invalid_argument, "unknown approx mode '" + std::string(s) + "'");
}

struct PlanConfig {
  SelectionKind strategy = SelectionKind::top_grad;
  double ratio = 0.05;
  RuleKind rule = RuleKind::zero;
  std::optional<double> beta;        // scale
  std::optional<double> alpha;       // sign_perturb; default 0.1 * ||F||_inf
  std::optional<double> clip_bound;  // clip
  std::size_t rounds = 1;
  double fisher_epsilon = 1e-8;
};

struct RunConfig {
  PlanConfig plan;
  ScoreKind score = ScoreKind::energy;
  double target_tpr = 0.95;
  ApproxMode approx_mode = ApproxMode::first_order;
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  bool calibrate_on_raw = false;  // threshold from untransformed calibration scores
};

inline ModificationRule make_rule(const PlanConfig& p) {
  switch (p.rule) {
    case RuleKind::zero: return ModificationRule::zero();
    case RuleKind::scale:
      if (!p.beta) throw Error(ErrorCode::config, "rule scale needs beta");
      return ModificationRule::scale(*p.beta);
    case RuleKind::sign_perturb: return ModificationRule::sign_perturb(p.alpha);
    case RuleKind::orth_project: return ModificationRule::orth_project();
    case RuleKind::clip:
      if (!p.clip_bound) throw Error(ErrorCode::config, "rule clip needs clip_bound");
      return ModificationRule::clip(*p.clip_bound);
  }
  return ModificationRule::zero();
}

/// Plan shared by every sample; random selection gets its seed per sample.
inline ShortCircuitPlan make_plan(const PlanConfig& p, const Dataset& data) {
  ShortCircuitPlan plan;
  plan.strategy.kind = p.strategy;
  plan.strategy.budget = MaskBudget::from_ratio(p.ratio);
  plan.rule = make_rule(p);
  plan.rounds = p.rounds;
  if (p.strategy == SelectionKind::random) plan.strategy.seed = 0;
  if (p.strategy == SelectionKind::fisher_weighted) {
    const FeatureSet* cal = data.find(SetLabel::calibration);
    if (!cal) throw Error(ErrorCode::config, "fisher_weighted selection needs a calibration set");
    plan.strategy.fisher_diag = estimate_fisher_diag(data.head, cal->features, p.fisher_epsilon).lambda;
  }
  plan.validate();
  return plan;
}

struct EvalRow {
  std::string id;
  SetLabel label = SetLabel::id;
  std::optional<double> raw_score;
  std::optional<double> gsc_score;
  std::optional<Verdict> verdict;
  std::uint64_t flops = 0;
  std::optional<double> gap;         // |exact - first order| score gap, approx_mode both
  std::optional<double> topk_ratio;  // TopKRatio of the raw gradient at the plan's k
  std::string error;

  friend bool operator==(const EvalRow&, const EvalRow&) = default;
};

struct EvalAggregates {
  std::size_t n_id = 0;
  std::size_t n_ood = 0;
  std::size_t n_calibration = 0;
  std::size_t n_errors = 0;
  std::optional<double> fpr95;
  std::optional<double> fpr95_raw;
  std::optional<double> auroc_raw;
  std::optional<double> auroc_gsc;
  std::optional<double> mean_gap;
  std::optional<double> mean_topk_id;
  std::optional<double> mean_topk_ood;
  double mean_flops = 0.0;
  std::optional<Threshold> threshold;

  friend bool operator==(const EvalAggregates& a, const EvalAggregates& b) {
    const auto same_t = [](const std::optional<Threshold>& x, const std::optional<Threshold>& y) {
      if (x.has_value() != y.has_value()) return false;
      if (!x) return true;
      return x->tau == y->tau && x->target_tpr == y->target_tpr && x->calibration_size == y->calibration_size &&
             x->tie_count == y->tie_count && x->degenerate == y->degenerate;
    };
    return a.n_id == b.n_id && a.n_ood == b.n_ood && a.n_calibration == b.n_calibration &&
           a.n_errors == b.n_errors && a.fpr95 == b.fpr95 && a.fpr95_raw == b.fpr95_raw &&
           a.auroc_raw == b.auroc_raw && a.auroc_gsc == b.auroc_gsc && a.mean_gap == b.mean_gap &&
           a.mean_topk_id == b.mean_topk_id && a.mean_topk_ood == b.mean_topk_ood && a.mean_flops == b.mean_flops &&
           same_t(a.threshold, b.threshold);
  }
};

struct EvalReport {
  std::vector<EvalRow> rows;
  EvalAggregates aggregates;
};

namespace detail {

inline std::optional<double> mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::nullopt;
  double acc = 0.0;
  for (double x : v) acc += x;
  return acc / static_cast<double>(v.size());
}

inline EvalRow process_sample(const Dataset& data, const ShortCircuitPlan& base, const RunConfig& cfg,
                              const Vector& f, std::uint64_t sample_seed) {
  EvalRow row;
  try {
    FlopTally tally;
    const ForwardTrace trace(data.head, f, tally);
    const std::size_t c = argmax(trace.logits());
    const Vector g = trace.grad_logit(c, tally);
    row.raw_score = score(cfg.score, trace.logits());
    const std::size_t k = base.strategy.budget.resolve(f.size());
    if (k > 0 && norm1(g) > 0.0) row.topk_ratio = topk_ratio(g, k);

    ShortCircuitPlan plan = base;
    if (plan.strategy.kind == SelectionKind::random) plan.strategy.seed = sample_seed;
    const PlanResult pr = run_plan(plan, data.head, f, c, g);
    tally.count += pr.flops;

    std::optional<Vector> y_approx;
    std::optional<Vector> y_exact;
    if (cfg.approx_mode != ApproxMode::exact) y_approx = approx_logits(trace, pr.delta_total, tally);
    if (cfg.approx_mode != ApproxMode::first_order) y_exact = exact_logits(data.head, pr.f_prime, tally);
    row.gsc_score = score(cfg.score, y_approx ? *y_approx : *y_exact);
    if (y_approx && y_exact) row.gap = std::abs(score(cfg.score, *y_exact) - *row.gsc_score);
    row.flops = tally.count;
  } catch (const Error& e) {
    row.raw_score.reset();
    row.gsc_score.reset();
    row.gap.reset();
    row.topk_ratio.reset();
    row.error = e.what();
  }
  return row;
}

inline std::vector<double> collect(const std::vector<EvalRow>& rows, SetLabel label, bool raw) {
  std::vector<double> out;
  for (const auto& r : rows) {
    if (r.label != label || !r.error.empty()) continue;
    out.push_back(raw ? *r.raw_score : *r.gsc_score);
  }
  return out;
}

}  // namespace detail

/// Aggregates are a pure function of the rows, so a stored report can be
/// checked by recomputing them.
inline EvalAggregates compute_aggregates(const std::vector<EvalRow>& rows, double target_tpr, bool calibrate_on_raw) {
  EvalAggregates a;
  std::vector<double> gaps;
  std::vector<double> topk_id;
  std::vector<double> topk_ood;
  double flops = 0.0;
  std::size_t ok = 0;
  for (const auto& r : rows) {
    if (!r.error.empty()) {
      ++a.n_errors;
      continue;
    }
    ++ok;
    flops += static_cast<double>(r.flops);
    switch (r.label) {
      case SetLabel::id: ++a.n_id; break;
      case SetLabel::ood: ++a.n_ood; break;
      case SetLabel::calibration: ++a.n_calibration; break;
    }
    if (r.gap) gaps.push_back(*r.gap);
    if (r.topk_ratio && r.label == SetLabel::id) topk_id.push_back(*r.topk_ratio);
    if (r.topk_ratio && r.label == SetLabel::ood) topk_ood.push_back(*r.topk_ratio);
  }
  if (ok > 0) a.mean_flops = flops / static_cast<double>(ok);
  a.mean_gap = detail::mean_of(gaps);
  a.mean_topk_id = detail::mean_of(topk_id);
  a.mean_topk_ood = detail::mean_of(topk_ood);

  const ScoredSet gsc{detail::collect(rows, SetLabel::id, false), detail::collect(rows, SetLabel::ood, false)};
  const ScoredSet raw{detail::collect(rows, SetLabel::id, true), detail::collect(rows, SetLabel::ood, true)};
  if (!gsc.id_scores.empty() && !gsc.ood_scores.empty()) {
    a.auroc_gsc = auroc(gsc);
    a.auroc_raw = auroc(raw);
    if (gsc.id_scores.size() >= min_calibration_size) {
      a.fpr95 = fpr_at_tpr(gsc, 0.95);
      a.fpr95_raw = fpr_at_tpr(raw, 0.95);
    }
  }
  const auto cal = detail::collect(rows, SetLabel::calibration, calibrate_on_raw);
  if (a.n_calibration > 0) a.threshold = calibrate(cal, target_tpr);
  return a;
}

/// Runs the short-circuit pipeline over every feature set in manifest order.
/// Failures inside one sample land in that row's error column.
inline EvalReport run_pipeline(const Dataset& data, const RunConfig& cfg) {
  if (!(cfg.target_tpr > 0.0 && cfg.target_tpr < 1.0)) {
    throw Error(ErrorCode::invalid_argument, "target TPR must lie in (0, 1)");
  }
  const ShortCircuitPlan plan = make_plan(cfg.plan, data);

  struct Job {
    const FeatureSet* set;
    std::size_t index;
  };
  std::vector<Job> jobs;
  for (const auto& set : data.sets) {
    for (std::size_t i = 0; i < set.features.size(); ++i) jobs.push_back({&set, i});
  }

  EvalReport report;
  report.rows = parallel_map(jobs.size(), [&](std::size_t j) {
    const Job& job = jobs[j];
    EvalRow row = detail::process_sample(data, plan, cfg, job.set->features[job.index], Rng::derive(cfg.seed, j));
    row.id = job.set->name + ":" + std::to_string(job.index);
    row.label = job.set->label;
    return row;
  });
  report.aggregates = compute_aggregates(report.rows, cfg.target_tpr, cfg.calibrate_on_raw);
  if (report.aggregates.threshold) {
    for (auto& r : report.rows) {
      if (r.error.empty()) r.verdict = decide(*r.gsc_score, *report.aggregates.threshold);
    }
  }
  return report;
}

namespace detail {

inline bool close(const std::optional<double>& a, const std::optional<double>& b, double tol) {
  if (a.has_value() != b.has_value()) return false;
  return !a || std::abs(*a - *b) <= tol;
}

}  // namespace detail

/// Recomputes aggregates and verdicts from the rows; true when everything
/// matches the stored values within `tol`.
inline bool self_consistent(const EvalReport& r, double target_tpr, bool calibrate_on_raw, double tol = 1e-9) {
  const EvalAggregates re = compute_aggregates(r.rows, target_tpr, calibrate_on_raw);
  const EvalAggregates& st = r.aggregates;
  if (re.n_id != st.n_id || re.n_ood != st.n_ood || re.n_calibration != st.n_calibration ||
      re.n_errors != st.n_errors) {
    return false;
  }
  if (!detail::close(re.fpr95, st.fpr95, tol) || !detail::close(re.fpr95_raw, st.fpr95_raw, tol) ||
      !detail::close(re.auroc_raw, st.auroc_raw, tol) || !detail::close(re.auroc_gsc, st.auroc_gsc, tol) ||
      !detail::close(re.mean_gap, st.mean_gap, tol) || !detail::close(re.mean_topk_id, st.mean_topk_id, tol) ||
      !detail::close(re.mean_topk_ood, st.mean_topk_ood, tol) || std::abs(re.mean_flops - st.mean_flops) > tol) {
    return false;
  }
  if (re.threshold.has_value() != st.threshold.has_value()) return false;
  if (re.threshold && std::abs(re.threshold->tau - st.threshold->tau) > tol) return false;
  for (const auto& row : r.rows) {
    if (!row.error.empty() || !re.threshold) {
      if (row.verdict) return false;
      continue;
    }
    if (row.verdict != decide(*row.gsc_score, *re.threshold)) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Serialization

inline constexpr std::string_view report_csv_header = "id,label,raw_score,gsc_score,verdict,flops,gap,topk_ratio,error";

namespace detail {

inline std::string opt_field(const std::optional<double>& x) { return x ? format_double(*x) : std::string(); }

inline std::optional<double> parse_opt(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return parse_double(s);
}

inline std::string sanitize(std::string s) {
  for (char& ch : s) {
    if (ch == ',' || ch == '\n' || ch == '\r') ch = ';';
  }
  return s;
}

inline ojson opt_json(const std::optional<double>& x) { return x ? ojson(*x) : ojson(nullptr); }

inline std::optional<double> json_opt(const ojson& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace detail

inline std::string report_csv(const EvalReport& r) {
  std::string out(report_csv_header);
  out += "\n";
  for (const auto& row : r.rows) {
    out += row.id;
    out += ",";
    out += to_string(row.label);
    out += "," + detail::opt_field(row.raw_score) + "," + detail::opt_field(row.gsc_score) + ",";
    if (row.verdict) out += to_string(*row.verdict);
    out += "," + std::to_string(row.flops) + "," + detail::opt_field(row.gap) + "," +
           detail::opt_field(row.topk_ratio) + "," + detail::sanitize(row.error) + "\n";
  }
  return out;
}

inline std::vector<EvalRow> parse_report_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != report_csv_header) {
    throw Error(ErrorCode::malformed_manifest, "report CSV header mismatch");
  }
  std::vector<EvalRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 9) throw Error(ErrorCode::malformed_manifest, "report CSV row has " + std::to_string(f.size()) + " fields");
    EvalRow row;
    row.id = f[0];
    row.label = parse_set_label(f[1]);
    row.raw_score = detail::parse_opt(f[2]);
    row.gsc_score = detail::parse_opt(f[3]);
    if (f[4] == "ID") row.verdict = Verdict::id;
    if (f[4] == "OOD") row.verdict = Verdict::ood;
    row.flops = std::stoull(f[5]);
    row.gap = detail::parse_opt(f[6]);
    row.topk_ratio = detail::parse_opt(f[7]);
    row.error = f[8];
    rows.push_back(std::move(row));
  }
  return rows;
}

inline ojson to_json(const PlanConfig& p) {
  ojson j;
  j["strategy"] = std::string(to_string(p.strategy));
  j["ratio"] = p.ratio;
  j["rule"] = std::string(to_string(p.rule));
  j["beta"] = detail::opt_json(p.beta);
  j["alpha"] = detail::opt_json(p.alpha);
  j["clip_bound"] = detail::opt_json(p.clip_bound);
  j["rounds"] = p.rounds;
  j["fisher_epsilon"] = p.fisher_epsilon;
  return j;
}

inline ojson to_json(const RunConfig& c) {
  ojson j;
  j["plan"] = to_json(c.plan);
  j["score"] = std::string(to_string(c.score));
  j["target_tpr"] = c.target_tpr;
  j["approx_mode"] = std::string(to_string(c.approx_mode));
  j["seed"] = c.seed;
  j["calibrate_on_raw"] = c.calibrate_on_raw;
  return j;
}

/// Reads a run config; absent keys keep their defaults.
inline RunConfig run_config_from_json(const ojson& j) {
  RunConfig c;
  try {
    if (j.contains("plan")) {
      const auto& p = j.at("plan");
      if (p.contains("strategy")) c.plan.strategy = parse_selection_kind(p.at("strategy").get<std::string>());
      if (p.contains("ratio")) c.plan.ratio = p.at("ratio").get<double>();
      if (p.contains("rule")) c.plan.rule = parse_rule_kind(p.at("rule").get<std::string>());
      c.plan.beta = detail::json_opt(p, "beta");
      c.plan.alpha = detail::json_opt(p, "alpha");
      c.plan.clip_bound = detail::json_opt(p, "clip_bound");
      if (p.contains("rounds")) c.plan.rounds = p.at("rounds").get<std::size_t>();
      if (p.contains("fisher_epsilon")) c.plan.fisher_epsilon = p.at("fisher_epsilon").get<double>();
    }
    if (j.contains("score")) c.score = parse_score_kind(j.at("score").get<std::string>());
    if (j.contains("target_tpr")) c.target_tpr = j.at("target_tpr").get<double>();
    if (j.contains("approx_mode")) c.approx_mode = parse_approx_mode(j.at("approx_mode").get<std::string>());
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    if (j.contains("calibrate_on_raw")) c.calibrate_on_raw = j.at("calibrate_on_raw").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::config, std::string("run config: ") + e.what());
  } catch (const Error& e) {
    throw Error(ErrorCode::config, e.what());
  }
  return c;
}

inline ojson to_json(const EvalAggregates& a) {
  ojson j;
  j["n_id"] = a.n_id;
  j["n_ood"] = a.n_ood;
  j["n_calibration"] = a.n_calibration;
  j["n_errors"] = a.n_errors;
  j["fpr95"] = detail::opt_json(a.fpr95);
  j["fpr95_raw"] = detail::opt_json(a.fpr95_raw);
  j["auroc_raw"] = detail::opt_json(a.auroc_raw);
  j["auroc_gsc"] = detail::opt_json(a.auroc_gsc);
  j["mean_gap"] = detail::opt_json(a.mean_gap);
  j["mean_topk_id"] = detail::opt_json(a.mean_topk_id);
  j["mean_topk_ood"] = detail::opt_json(a.mean_topk_ood);
  j["mean_flops"] = a.mean_flops;
  j["thresholds"] = a.threshold ? to_json(*a.threshold) : ojson(nullptr);
  return j;
}

inline EvalAggregates aggregates_from_json(const ojson& j) {
  EvalAggregates a;
  a.n_id = j.at("n_id").get<std::size_t>();
  a.n_ood = j.at("n_ood").get<std::size_t>();
  a.n_calibration = j.at("n_calibration").get<std::size_t>();
  a.n_errors = j.at("n_errors").get<std::size_t>();
  a.fpr95 = detail::json_opt(j, "fpr95");
  a.fpr95_raw = detail::json_opt(j, "fpr95_raw");
  a.auroc_raw = detail::json_opt(j, "auroc_raw");
  a.auroc_gsc = detail::json_opt(j, "auroc_gsc");
  a.mean_gap = detail::json_opt(j, "mean_gap");
  a.mean_topk_id = detail::json_opt(j, "mean_topk_id");
  a.mean_topk_ood = detail::json_opt(j, "mean_topk_ood");
  a.mean_flops = j.at("mean_flops").get<double>();
  if (!j.at("thresholds").is_null()) a.threshold = threshold_from_json(j.at("thresholds"));
  return a;
}

inline std::string summary_json(const EvalReport& r, const RunConfig& cfg) {
  ojson j;
  j["config"] = to_json(cfg);
  j["aggregates"] = to_json(r.aggregates);
  return j.dump(2) + "\n";
}

/// Rebuilds a report from its CSV and summary JSON.
inline EvalReport load_report(const std::string& csv, const std::string& summary) {
  EvalReport r;
  r.rows = parse_report_csv(csv);
  try {
    r.aggregates = aggregates_from_json(ojson::parse(summary).at("aggregates"));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::malformed_manifest, std::string("summary JSON: ") + e.what());
  }
  return r;
}

}  // namespace gsc

#endif  // GSC_PIPELINE_HPP
