#ifndef GSC_METRICS_HPP
#define GSC_METRICS_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "gsc/error.hpp"
#include "gsc/head.hpp"
#include "gsc/numcore.hpp"
#include "gsc/parallel.hpp"
#include "gsc/scoring.hpp"

namespace gsc {

struct ScoredSet {
  std::vector<double> id_scores;
  std::vector<double> ood_scores;
};

namespace detail {

inline void require_both(const ScoredSet& s, const char* what) {
  if (s.id_scores.empty() || s.ood_scores.empty()) {
    throw Error(ErrorCode::invalid_argument, std::string(what) + ": both ID and OOD scores are required");
  }
}

}  // namespace detail

/// Fraction of OOD scores passing the ID gate (score > tau) when tau is
/// calibrated on the ID scores for the target TPR.
inline double fpr_at_tpr(const ScoredSet& s, double target_tpr = 0.95) {
  detail::require_both(s, "fpr_at_tpr");
  const Threshold t = calibrate(s.id_scores, target_tpr);
  const auto passed = std::count_if(s.ood_scores.begin(), s.ood_scores.end(), [&](double x) { return x > t.tau; });
  return static_cast<double>(passed) / static_cast<double>(s.ood_scores.size());
}

/// Mann-Whitney AUROC with midranks: P(ID > OOD) + 0.5 P(ID == OOD).
inline double auroc(const ScoredSet& s) {
  detail::require_both(s, "auroc");
  struct Entry {
    double score;
    bool is_id;
  };
  std::vector<Entry> all;
  all.reserve(s.id_scores.size() + s.ood_scores.size());
  for (double x : s.id_scores) all.push_back({x, true});
  for (double x : s.ood_scores) all.push_back({x, false});
  std::sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) { return a.score < b.score; });

  // ranks are 1-based; ties share the mean rank, so twice the rank sum stays integral
  double twice_rank_sum = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].score == all[i].score) ++j;
    const double twice_mid = static_cast<double>(i + 1 + j);  // 2 * mean of ranks i+1..j
    for (std::size_t t = i; t < j; ++t) {
      if (all[t].is_id) twice_rank_sum += twice_mid;
    }
    i = j;
  }
  const double n_id = static_cast<double>(s.id_scores.size());
  const double n_ood = static_cast<double>(s.ood_scores.size());
  const double u = twice_rank_sum / 2.0 - n_id * (n_id + 1.0) / 2.0;
  return u / (n_id * n_ood);
}

/// Share of the gradient l1 mass carried by its k largest-magnitude coordinates.
inline double topk_ratio(const Vector& g, std::size_t k) {
  if (k < 1 || k > g.size()) {
    throw Error(ErrorCode::invalid_argument, "topk_ratio: k must lie in [1, d]");
  }
  std::vector<double> mag(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) mag[i] = std::abs(g[i]);
  std::sort(mag.begin(), mag.end(), std::greater<>());
  double top = 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < mag.size(); ++i) {
    total += mag[i];
    if (i + 1 == k) top = total;
  }
  if (total == 0.0) throw Error(ErrorCode::undefined_ratio, "topk_ratio: gradient is identically zero");
  return top / total;
}

struct ConcentrationProfile {
  std::vector<std::size_t> k_values;
  std::vector<double> mean_ratio;
  std::vector<double> std_ratio;
  std::size_t n_samples = 0;  // samples contributing
  std::size_t excluded = 0;   // samples with an all-zero gradient
  std::vector<std::vector<double>> per_sample;  // [sample][k index]
};

/// TopKRatio of each sample's predicted-class gradient at every k.
inline ConcentrationProfile concentration_profile(const HeadModel& head, std::span<const Vector> samples,
                                                  std::span<const std::size_t> k_values) {
  if (samples.empty() || k_values.empty()) {
    throw Error(ErrorCode::invalid_argument, "concentration_profile: samples and k values must be nonempty");
  }
  ConcentrationProfile prof;
  prof.k_values.assign(k_values.begin(), k_values.end());
  if (!std::is_sorted(prof.k_values.begin(), prof.k_values.end())) {
    throw Error(ErrorCode::invalid_argument, "concentration_profile: k values must be ascending");
  }
  auto rows = parallel_map(samples.size(), [&](std::size_t i) -> std::vector<double> {
    const LogitBundle b = evaluate(head, samples[i]);
    if (norm1(b.g) == 0.0) return {};
    std::vector<double> r;
    r.reserve(k_values.size());
    for (std::size_t k : k_values) r.push_back(topk_ratio(b.g, k));
    return r;
  });
  for (auto& r : rows) {
    if (r.empty()) {
      ++prof.excluded;
    } else {
      prof.per_sample.push_back(std::move(r));
    }
  }
  prof.n_samples = prof.per_sample.size();
  prof.mean_ratio.assign(k_values.size(), 0.0);
  prof.std_ratio.assign(k_values.size(), 0.0);
  if (prof.n_samples == 0) return prof;
  const double n = static_cast<double>(prof.n_samples);
  for (std::size_t j = 0; j < k_values.size(); ++j) {
    // shifted by the first sample so identical ratios give an exact mean
    const double shift = prof.per_sample.front()[j];
    double acc = 0.0;
    for (const auto& r : prof.per_sample) acc += r[j] - shift;
    const double mean = shift + acc / n;
    double var = 0.0;
    for (const auto& r : prof.per_sample) var += (r[j] - mean) * (r[j] - mean);
    prof.mean_ratio[j] = mean;
    prof.std_ratio[j] = std::sqrt(var / n);
  }
  return prof;
}

struct HistogramTable {
  std::vector<double> bin_lo;
  std::vector<double> bin_hi;
  std::vector<std::size_t> id_count;
  std::vector<std::size_t> ood_count;
};

/// Shared bins spanning the union of both score sets.
inline HistogramTable export_histogram(const ScoredSet& s, std::size_t bins) {
  if (bins < 2) throw Error(ErrorCode::invalid_argument, "histogram needs at least 2 bins");
  if (s.id_scores.empty() && s.ood_scores.empty()) {
    throw Error(ErrorCode::invalid_argument, "histogram needs at least one score");
  }
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto* set : {&s.id_scores, &s.ood_scores}) {
    for (double x : *set) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
  }
  const double width = (hi - lo) / static_cast<double>(bins);
  HistogramTable h;
  for (std::size_t b = 0; b < bins; ++b) {
    h.bin_lo.push_back(lo + width * static_cast<double>(b));
    h.bin_hi.push_back(b + 1 == bins ? hi : lo + width * static_cast<double>(b + 1));
  }
  h.id_count.assign(bins, 0);
  h.ood_count.assign(bins, 0);
  const auto bin_of = [&](double x) -> std::size_t {
    if (width == 0.0) return 0;
    const auto b = static_cast<std::size_t>(std::floor((x - lo) / width));
    return std::min(b, bins - 1);
  };
  for (double x : s.id_scores) ++h.id_count[bin_of(x)];
  for (double x : s.ood_scores) ++h.ood_count[bin_of(x)];
  return h;
}

}  // namespace gsc

#endif  // GSC_METRICS_HPP
