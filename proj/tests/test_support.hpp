#ifndef GSC_TEST_SUPPORT_HPP
#define GSC_TEST_SUPPORT_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "gsc/gsc.hpp"

namespace gsc::testing {

inline Vector random_vector(std::mt19937_64& gen, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(gen);
  return Vector(std::move(v));
}

inline Matrix random_matrix(std::mt19937_64& gen, std::size_t rows, std::size_t cols, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> v(rows * cols);
  for (double& x : v) x = n(gen);
  return Matrix(rows, cols, std::move(v));
}

/// dims = {d, hidden..., K}; every hidden layer uses `act`, the last is affine.
inline HeadModel random_head(std::mt19937_64& gen, const std::vector<std::size_t>& dims, Activation act) {
  std::vector<LayerSpec> layers;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(dims[l]));
    const bool last = l + 2 == dims.size();
    layers.push_back({random_matrix(gen, dims[l + 1], dims[l], scale), random_vector(gen, dims[l + 1], -0.1, 0.1),
                      last ? Activation::none : act});
  }
  return HeadModel(std::move(layers));
}

/// Central finite difference of logit `cls` along coordinate i.
inline double fd_partial(const HeadModel& h, const Vector& f, std::size_t cls, std::size_t i, double step) {
  std::vector<double> plus(f.values());
  std::vector<double> minus(f.values());
  plus[i] += step;
  minus[i] -= step;
  return (forward(h, Vector(plus))[cls] - forward(h, Vector(minus))[cls]) / (2.0 * step);
}

/// Direct long-double evaluation; only valid where exp does not overflow.
inline long double lse_oracle(const std::vector<double>& v) {
  long double acc = 0.0L;
  for (double x : v) acc += std::exp(static_cast<long double>(x));
  return std::log(acc);
}

/// O(N^2) Mann-Whitney: wins count 1, ties count 1/2.
inline double pairwise_auroc(const std::vector<double>& id, const std::vector<double>& ood) {
  std::uint64_t twice = 0;
  for (double a : id) {
    for (double b : ood) {
      if (a > b) twice += 2;
      else if (a == b) twice += 1;
    }
  }
  return static_cast<double>(twice) / (2.0 * static_cast<double>(id.size() * ood.size()));
}

/// Threshold by enumeration: the smallest ID score x with more than
/// floor((100 - pct) * N / 100) ID scores at or below it. FPR counts OOD > x.
inline double fpr_oracle(const std::vector<double>& id, const std::vector<double>& ood, int pct) {
  const std::size_t m = static_cast<std::size_t>(100 - pct) * id.size() / 100;
  double tau = 0.0;
  bool found = false;
  for (double x : id) {
    std::size_t at_or_below = 0;
    for (double y : id) at_or_below += y <= x ? 1 : 0;
    if (at_or_below > m && (!found || x < tau)) {
      tau = x;
      found = true;
    }
  }
  std::size_t pass = 0;
  for (double y : ood) pass += y > tau ? 1 : 0;
  return static_cast<double>(pass) / static_cast<double>(ood.size());
}

inline std::vector<double> plain(const Vector& v) { return v.values(); }

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("gsc_test_" + std::to_string(::getpid()) + "_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline SynthConfig small_synth(std::uint64_t seed = 7, SynthHead head = SynthHead::affine) {
  SynthConfig c;
  c.seed = seed;
  c.head = head;
  c.n_id = 120;
  c.n_ood = 120;
  c.n_calibration = 120;
  return c;
}

}  // namespace gsc::testing

#endif  // GSC_TEST_SUPPORT_HPP
