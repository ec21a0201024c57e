#ifndef GSC_SCORING_HPP
#define GSC_SCORING_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gsc/error.hpp"
#include "gsc/head.hpp"
#include "gsc/numcore.hpp"

namespace gsc {

/// Both scores are oriented higher-is-ID.
enum class ScoreKind { energy, msp };

constexpr std::string_view to_string(ScoreKind k) { return k == ScoreKind::energy ? "energy" : "msp"; }

inline ScoreKind parse_score_kind(std::string_view name) {
  if (name == "energy") return ScoreKind::energy;
  if (name == "msp") return ScoreKind::msp;
  throw Error(ErrorCode::invalid_argument, "unknown score '" + std::string(name) + "'");
}

inline double score(ScoreKind kind, const Vector& logits) {
  if (kind == ScoreKind::energy) return logsumexp(logits);
  const Vector p = softmax(logits);
  return *std::max_element(p.begin(), p.end());
}

enum class Verdict { id, ood };

constexpr std::string_view to_string(Verdict v) { return v == Verdict::id ? "ID" : "OOD"; }

struct Threshold {
  double tau = 0.0;
  double target_tpr = 0.95;
  std::size_t calibration_size = 0;
  std::size_t tie_count = 0;  // calibration scores sitting exactly on tau (these fall on the OOD side)
  bool degenerate = false;    // every calibration score identical
};

/// s > tau is ID; the boundary itself is OOD.
inline Verdict decide(double s, const Threshold& t) { return s > t.tau ? Verdict::id : Verdict::ood; }

inline constexpr std::size_t min_calibration_size = 20;

/// Order index m = floor((1 - target_tpr) * N), guarded against the
/// representation error of 1 - target_tpr.
inline std::size_t calibration_rank(std::size_t n, double target_tpr) {
  const double raw = (1.0 - target_tpr) * static_cast<double>(n);
  auto m = static_cast<std::size_t>(std::floor(raw + 1e-9));
  return std::min(m, n - 1);
}

/// tau is the m-th smallest calibration score (no interpolation).
inline Threshold calibrate(std::span<const double> id_scores, double target_tpr) {
  if (id_scores.size() < min_calibration_size) {
    throw Error(ErrorCode::insufficient_calibration,
                "need at least " + std::to_string(min_calibration_size) + " ID scores, got " +
                    std::to_string(id_scores.size()));
  }
  if (!(target_tpr > 0.0 && target_tpr < 1.0)) {
    throw Error(ErrorCode::invalid_argument, "target TPR must lie in (0, 1)");
  }
  std::vector<double> sorted(id_scores.begin(), id_scores.end());
  std::sort(sorted.begin(), sorted.end());
  Threshold t;
  t.target_tpr = target_tpr;
  t.calibration_size = sorted.size();
  t.tau = sorted[calibration_rank(sorted.size(), target_tpr)];
  t.tie_count = static_cast<std::size_t>(std::count(sorted.begin(), sorted.end(), t.tau));
  t.degenerate = sorted.front() == sorted.back();
  return t;
}

struct FisherDiagonal {
  Vector lambda;
  std::size_t sample_count = 0;
  double epsilon_floor = 0.0;
};

/// Mean squared predicted-class gradient per coordinate, floored at epsilon.
inline FisherDiagonal estimate_fisher_diag(const HeadModel& head, std::span<const Vector> calibration,
                                           double epsilon_floor) {
  if (calibration.empty()) throw Error(ErrorCode::invalid_argument, "Fisher estimate needs calibration samples");
  if (!(epsilon_floor > 0.0)) throw Error(ErrorCode::invalid_argument, "epsilon floor must be positive");
  std::vector<double> acc(head.input_dim(), 0.0);
  for (const Vector& f : calibration) {
    const LogitBundle b = evaluate(head, f);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += b.g[i] * b.g[i];
  }
  for (double& x : acc) x = std::max(x / static_cast<double>(calibration.size()), epsilon_floor);
  return FisherDiagonal{Vector(std::move(acc)), calibration.size(), epsilon_floor};
}

}  // namespace gsc

#endif  // GSC_SCORING_HPP
