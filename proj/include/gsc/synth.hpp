#ifndef GSC_SYNTH_HPP
#define GSC_SYNTH_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gsc/error.hpp"
#include "gsc/head.hpp"
#include "gsc/numcore.hpp"
#include "gsc/rng.hpp"
#include "gsc/scoring.hpp"
#include "gsc/shortcircuit.hpp"

namespace gsc {

/// Head built around the class weight matrix W.
///  - affine:     y = W F
///  - tanh:       y = (kappa W) tanh(F / kappa), a smooth near-affine head
///  - gated_relu: y = [W, -W] relu([I; -I] F - theta), i.e. W applied to the
///                soft-thresholded feature; its gradient depends on which
///                coordinates clear theta
enum class SynthHead { affine, tanh, gated_relu };

constexpr std::string_view to_string(SynthHead h) {
  switch (h) {
    case SynthHead::affine: return "affine";
    case SynthHead::tanh: return "tanh";
    case SynthHead::gated_relu: return "gated_relu";
  }
  return "affine";
}

inline SynthHead parse_synth_head(std::string_view name) {
  for (auto h : {SynthHead::affine, SynthHead::tanh, SynthHead::gated_relu}) {
    if (to_string(h) == name) return h;
  }
  throw Error(ErrorCode::config, "unknown synthetic head preset '" + std::string(name) + "'");
}

/// Defaults are engineering choices sized for desk-scale runs, not values
/// measured on real networks.
struct SynthConfig {
  std::size_t d = 128;
  std::size_t num_classes = 10;
  std::size_t support = 64;        // M: active coordinates per ID sample
  std::size_t spikes = 5;          // s: OOD spike count
  std::optional<double> spike_gain;  // auto-tuned when absent
  double noise_sigma = 0.05;
  std::size_t n_id = 500;
  std::size_t n_ood = 500;
  std::size_t n_calibration = 500;
  std::uint64_t seed = 7;
  SynthHead head = SynthHead::affine;
  double tanh_scale = 16.0;
  double gate_threshold = 0.25;

  void validate() const {
    if (d == 0 || num_classes < 2) throw Error(ErrorCode::config, "need d >= 1 and at least 2 classes");
    if (!(spikes >= 1 && spikes < support && support <= d)) {
      throw Error(ErrorCode::config, "need 1 <= spikes < support <= d");
    }
    if (n_id == 0 || n_ood == 0) throw Error(ErrorCode::config, "sample counts must be positive");
    if (!(noise_sigma >= 0.0)) throw Error(ErrorCode::config, "noise_sigma must be nonnegative");
    if (spike_gain && !(*spike_gain > 0.0)) throw Error(ErrorCode::config, "spike_gain must be positive");
    if (!(tanh_scale > 0.0) || !(gate_threshold >= 0.0)) throw Error(ErrorCode::config, "bad head preset parameters");
  }
};

struct SynthDataset {
  HeadModel head;
  std::vector<Vector> id_features;
  std::vector<Vector> ood_features;
  std::vector<Vector> calibration_features;
  SynthConfig provenance;
  double spike_gain = 0.0;  // resolved value
};

inline constexpr std::size_t synth_retry_budget = 100;
inline constexpr double synth_min_ood_mass = 0.8;

namespace detail {

inline double to_f32(double x) { return static_cast<double>(static_cast<float>(x)); }

inline Matrix class_weights(const SynthConfig& cfg) {
  Rng rng(Rng::derive(cfg.seed, 0));
  std::vector<double> w(cfg.num_classes * cfg.d);
  for (std::size_t c = 0; c < cfg.num_classes; ++c) {
    double norm = 0.0;
    for (std::size_t i = 0; i < cfg.d; ++i) {
      const double mag = rng.uniform(0.75, 1.25);
      const double v = rng.uniform() < 0.5 ? -mag : mag;
      w[c * cfg.d + i] = v;
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (std::size_t i = 0; i < cfg.d; ++i) w[c * cfg.d + i] = to_f32(w[c * cfg.d + i] / norm);
  }
  return Matrix(cfg.num_classes, cfg.d, std::move(w));
}

inline HeadModel build_head(const SynthConfig& cfg, const Matrix& w) {
  const std::size_t d = cfg.d;
  const std::size_t k = cfg.num_classes;
  switch (cfg.head) {
    case SynthHead::affine:
      return HeadModel::affine(w, Vector::zeros(k));
    case SynthHead::tanh: {
      const double kappa = cfg.tanh_scale;
      std::vector<double> first(d * d, 0.0);
      for (std::size_t i = 0; i < d; ++i) first[i * d + i] = to_f32(1.0 / kappa);
      std::vector<double> second(w.values());
      for (double& x : second) x = to_f32(x * kappa);
      std::vector<LayerSpec> layers;
      layers.push_back({Matrix(d, d, std::move(first)), Vector::zeros(d), Activation::tanh});
      layers.push_back({Matrix(k, d, std::move(second)), Vector::zeros(k), Activation::none});
      return HeadModel(std::move(layers));
    }
    case SynthHead::gated_relu: {
      std::vector<double> first(2 * d * d, 0.0);
      for (std::size_t i = 0; i < d; ++i) {
        first[i * d + i] = 1.0;
        first[(d + i) * d + i] = -1.0;
      }
      std::vector<double> second(k * 2 * d);
      for (std::size_t c = 0; c < k; ++c) {
        for (std::size_t i = 0; i < d; ++i) {
          second[c * 2 * d + i] = w(c, i);
          second[c * 2 * d + d + i] = -w(c, i);
        }
      }
      std::vector<double> bias(2 * d, to_f32(-cfg.gate_threshold));
      std::vector<LayerSpec> layers;
      layers.push_back({Matrix(2 * d, d, std::move(first)), Vector(std::move(bias)), Activation::relu});
      layers.push_back({Matrix(k, 2 * d, std::move(second)), Vector::zeros(k), Activation::none});
      return HeadModel(std::move(layers));
    }
  }
  throw Error(ErrorCode::config, "unknown head preset");
}

/// One ID draw: M random coordinates carry sign-aligned values
/// amplitude * [0.75, 1.25], with a per-sample amplitude in [0.7, 1.3].
inline std::vector<double> draw_id(const SynthConfig& cfg, const Matrix& w, Rng& rng) {
  const std::size_t c = rng.index(cfg.num_classes);
  const double amplitude = rng.uniform(0.7, 1.3);
  std::vector<double> f(cfg.d);
  for (double& x : f) x = cfg.noise_sigma * rng.normal();
  for (std::size_t i : rng.sample(cfg.d, cfg.support)) {
    const double sign = w(c, i) < 0.0 ? -1.0 : 1.0;
    f[i] += sign * amplitude * rng.uniform(0.75, 1.25);
  }
  for (double& x : f) x = to_f32(x);
  return f;
}

/// Randomness of one OOD draw, independent of the spike gain.
struct OodDraft {
  std::size_t c = 0;
  std::vector<double> jitter;  // per-spike multiplier, sample amplitude included
  std::vector<double> noise;
};

inline OodDraft draft_ood(const SynthConfig& cfg, Rng& rng) {
  OodDraft draft;
  draft.c = rng.index(cfg.num_classes);
  const double amplitude = rng.uniform(0.7, 1.3);
  draft.jitter.resize(cfg.spikes);
  for (double& j : draft.jitter) j = amplitude * rng.uniform(0.8, 1.2);
  draft.noise.resize(cfg.d);
  for (double& x : draft.noise) x = cfg.noise_sigma * rng.normal();
  return draft;
}

/// Coordinates of class c's s largest |W_ci| (ties to the lower index).
inline std::vector<std::size_t> spike_coords(const Matrix& w, std::size_t c, std::size_t s) {
  std::vector<double> mag(w.cols());
  for (std::size_t i = 0; i < w.cols(); ++i) mag[i] = std::abs(w(c, i));
  return top_k(mag, s);
}

inline std::vector<double> realize_ood(const OodDraft& draft, const Matrix& w, const SynthConfig& cfg, double gain) {
  std::vector<double> f(draft.noise);
  const auto coords = spike_coords(w, draft.c, cfg.spikes);
  for (std::size_t j = 0; j < coords.size(); ++j) {
    const std::size_t i = coords[j];
    const double sign = w(draft.c, i) < 0.0 ? -1.0 : 1.0;
    f[i] += sign * gain * draft.jitter[j];
  }
  for (double& x : f) x = to_f32(x);
  return f;
}

/// |g_i F_i| at the predicted class.
inline std::vector<double> contributions(const HeadModel& head, const Vector& f) {
  const LogitBundle b = evaluate(head, f);
  std::vector<double> out(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) out[i] = std::abs(b.g[i] * f[i]);
  return out;
}

/// Fraction of the contribution mass held by the s largest contributions.
inline double top_mass_fraction(const std::vector<double>& contrib, std::size_t s) {
  std::vector<double> sorted(contrib);
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double top = 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    total += sorted[i];
    if (i < s) top += sorted[i];
  }
  return total > 0.0 ? top / total : 0.0;
}

/// Bounded share over the active set: max_i |g_i F_i| <= (2/M) sum_j |g_j F_j|.
/// The active set is recovered as the M largest contributions, the tightest
/// choice of a size-M support.
inline bool bounded_share(const std::vector<double>& contrib, std::size_t m) {
  std::vector<double> sorted(contrib);
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double support_mass = 0.0;
  for (std::size_t i = 0; i < m && i < sorted.size(); ++i) support_mass += sorted[i];
  return support_mass > 0.0 && sorted.front() <= (2.0 / static_cast<double>(m)) * support_mass;
}

inline std::vector<Vector> generate_id_set(const SynthConfig& cfg, const Matrix& w, const HeadModel& head,
                                           std::uint64_t stream, std::size_t n) {
  std::vector<Vector> out;
  out.reserve(n);
  const std::uint64_t base = Rng::derive(cfg.seed, stream);
  for (std::size_t s = 0; s < n; ++s) {
    Rng rng(Rng::derive(base, s));
    bool ok = false;
    for (std::size_t attempt = 0; attempt < synth_retry_budget && !ok; ++attempt) {
      Vector f(draw_id(cfg, w, rng));
      if (bounded_share(contributions(head, f), cfg.support)) {
        out.push_back(std::move(f));
        ok = true;
      }
    }
    if (!ok) {
      throw Error(ErrorCode::config, "ID bounded-share invariant unattainable within " +
                                         std::to_string(synth_retry_budget) + " retries (sample " +
                                         std::to_string(s) + ")");
    }
  }
  return out;
}

}  // namespace detail

/// Mean energy of the first-attempt OOD drafts at a given gain.
inline double mean_ood_energy(const SynthConfig& cfg, const Matrix& w, const HeadModel& head,
                              const std::vector<detail::OodDraft>& drafts, double gain) {
  double acc = 0.0;
  for (const auto& draft : drafts) acc += logsumexp(forward(head, Vector(detail::realize_ood(draft, w, cfg, gain))));
  return acc / static_cast<double>(drafts.size());
}

/// Builds the head and the ID / OOD / calibration feature sets. Every
/// emitted sample satisfies the construction invariants (OOD top-s
/// contribution share >= 0.8, ID bounded share with alpha = 2/M); a sample
/// failing them is redrawn up to the retry budget.
///
/// Without an explicit spike_gain, the gain is bisected so the mean raw
/// energy of the OOD drafts matches the mean ID energy.
inline SynthDataset generate(const SynthConfig& cfg) {
  cfg.validate();
  SynthDataset ds;
  ds.provenance = cfg;
  const Matrix w = detail::class_weights(cfg);
  ds.head = detail::build_head(cfg, w);

  ds.id_features = detail::generate_id_set(cfg, w, ds.head, 1, cfg.n_id);
  ds.calibration_features = detail::generate_id_set(cfg, w, ds.head, 2, cfg.n_calibration);

  const std::uint64_t ood_base = Rng::derive(cfg.seed, 3);
  std::vector<detail::OodDraft> drafts;
  drafts.reserve(cfg.n_ood);
  for (std::size_t s = 0; s < cfg.n_ood; ++s) {
    Rng rng(Rng::derive(ood_base, s));
    drafts.push_back(detail::draft_ood(cfg, rng));
  }

  if (cfg.spike_gain) {
    ds.spike_gain = *cfg.spike_gain;
  } else {
    double target = 0.0;
    for (const auto& f : ds.id_features) target += logsumexp(forward(ds.head, f));
    target /= static_cast<double>(ds.id_features.size());
    double lo = 0.0;
    double hi = 1.0;
    for (int i = 0; i < 60 && mean_ood_energy(cfg, w, ds.head, drafts, hi) < target; ++i) lo = hi, hi *= 2.0;
    if (mean_ood_energy(cfg, w, ds.head, drafts, hi) < target) {
      throw Error(ErrorCode::config, "spike gain cannot reach the mean ID energy for this head preset");
    }
    for (int i = 0; i < 80; ++i) {
      const double mid = 0.5 * (lo + hi);
      (mean_ood_energy(cfg, w, ds.head, drafts, mid) < target ? lo : hi) = mid;
    }
    ds.spike_gain = 0.5 * (lo + hi);
  }

  ds.ood_features.reserve(cfg.n_ood);
  for (std::size_t s = 0; s < cfg.n_ood; ++s) {
    Rng rng(Rng::derive(ood_base, s));
    bool ok = false;
    for (std::size_t attempt = 0; attempt < synth_retry_budget && !ok; ++attempt) {
      const detail::OodDraft draft = detail::draft_ood(cfg, rng);
      Vector f(detail::realize_ood(draft, w, cfg, ds.spike_gain));
      if (detail::top_mass_fraction(detail::contributions(ds.head, f), cfg.spikes) >= synth_min_ood_mass) {
        ds.ood_features.push_back(std::move(f));
        ok = true;
      }
    }
    if (!ok) {
      throw Error(ErrorCode::config, "OOD sparsity invariant (top-s share >= 0.8) unattainable within " +
                                         std::to_string(synth_retry_budget) + " retries (sample " +
                                         std::to_string(s) + ")");
    }
  }
  return ds;
}

struct PopulationDrop {
  double mean_drop = 0.0;
  double max_drop = 0.0;
  double mean_relative_drop = 0.0;
};

struct TheoryReport {
  std::size_t k = 0;
  double alpha = 0.0;  // bounded-share constant 2/M
  PopulationDrop id;
  PopulationDrop ood;
  double id_bound_violation_fraction = 0.0;  // ID drop > alpha * k * sum_i |g_i F_i|
  double ood_spike_capture_fraction = 0.0;   // OOD drop >= 0.8 * spike contribution
};

namespace detail {

struct SampleDrop {
  double drop = 0.0;
  double relative = 0.0;
  double mass = 0.0;   // sum_i |g_i F_i|
  double spike = 0.0;  // sum of the s largest g_i F_i contributions
};

inline SampleDrop exact_drop(const HeadModel& head, const ShortCircuitPlan& plan, const Vector& f, std::size_t s) {
  const LogitBundle b = evaluate(head, f);
  const PlanResult r = run_plan(plan, head, f, b.c, b.g);
  const Vector y_after = forward(head, r.f_prime);
  SampleDrop out;
  out.drop = b.y[b.c] - y_after[b.c];
  out.relative = b.y[b.c] != 0.0 ? out.drop / b.y[b.c] : 0.0;
  std::vector<double> signed_contrib(f.size());
  std::vector<double> mag(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) {
    signed_contrib[i] = b.g[i] * f[i];
    mag[i] = std::abs(signed_contrib[i]);
    out.mass += mag[i];
  }
  for (std::size_t i : top_k(mag, std::min(s, f.size()))) out.spike += signed_contrib[i];
  return out;
}

}  // namespace detail

/// Exact logit drops of both populations under a plan, checked against the
/// fragility / robustness algebra of the construction.
inline TheoryReport theory_check(const SynthDataset& ds, const ShortCircuitPlan& plan) {
  const SynthConfig& cfg = ds.provenance;
  TheoryReport rep;
  rep.k = plan.strategy.budget.resolve(cfg.d);
  rep.alpha = 2.0 / static_cast<double>(cfg.support);

  const auto summarize = [&](const std::vector<Vector>& set, PopulationDrop& pop, auto&& per_sample) {
    double acc = 0.0;
    double rel = 0.0;
    for (const auto& f : set) {
      const auto sd = detail::exact_drop(ds.head, plan, f, cfg.spikes);
      acc += sd.drop;
      rel += sd.relative;
      pop.max_drop = std::max(pop.max_drop, sd.drop);
      per_sample(sd);
    }
    pop.mean_drop = acc / static_cast<double>(set.size());
    pop.mean_relative_drop = rel / static_cast<double>(set.size());
  };

  std::size_t violations = 0;
  summarize(ds.id_features, rep.id, [&](const detail::SampleDrop& sd) {
    if (sd.drop > rep.alpha * static_cast<double>(rep.k) * sd.mass) ++violations;
  });
  std::size_t captured = 0;
  summarize(ds.ood_features, rep.ood, [&](const detail::SampleDrop& sd) {
    if (sd.drop >= synth_min_ood_mass * sd.spike) ++captured;
  });
  rep.id_bound_violation_fraction = static_cast<double>(violations) / static_cast<double>(ds.id_features.size());
  rep.ood_spike_capture_fraction = static_cast<double>(captured) / static_cast<double>(ds.ood_features.size());
  return rep;
}

}  // namespace gsc

#endif  // GSC_SYNTH_HPP
