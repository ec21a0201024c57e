#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "test_support.hpp"

using namespace gsc;
using gsc::testing::fpr_oracle;
using gsc::testing::pairwise_auroc;
using gsc::testing::random_head;
using gsc::testing::random_vector;

namespace {

std::vector<double> one_to(int n) {
  std::vector<double> v(n);
  std::iota(v.begin(), v.end(), 1.0);
  return v;
}

}  // namespace

TEST(Fpr, Examples) {
  EXPECT_DOUBLE_EQ(fpr_at_tpr({one_to(20), {0, 1.5, 2.5}}, 0.95), 1.0 / 3.0);
  EXPECT_EQ(fpr_at_tpr({one_to(20), {-3, -2, 0}}, 0.95), 0.0);
}

TEST(Fpr, MirroredSets) {
  // identical multisets: OOD passes the gate exactly as often as ID does
  const auto s = one_to(100);
  EXPECT_EQ(fpr_at_tpr({s, s}, 0.95), 0.94);
}

TEST(Fpr, MatchesEnumerationOracle) {
  std::mt19937_64 gen(61);
  std::uniform_int_distribution<int> coarse(0, 30);
  for (int t = 0; t < 500; ++t) {
    const std::size_t n_id = 20 + t % 80;
    const std::size_t n_ood = 1 + (t * 7) % 90;
    std::vector<double> id(n_id);
    std::vector<double> ood(n_ood);
    for (double& x : id) x = coarse(gen) * 0.5;
    for (double& x : ood) x = coarse(gen) * 0.5 - 2.0;
    for (int pct : {50, 80, 90, 95, 99}) {
      EXPECT_EQ(fpr_at_tpr({id, ood}, pct / 100.0), fpr_oracle(id, ood, pct));
    }
  }
}

TEST(Fpr, MonotoneInTarget) {
  std::mt19937_64 gen(62);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> id(60);
    std::vector<double> ood(60);
    for (double& x : id) x = n(gen) + 1.0;
    for (double& x : ood) x = n(gen);
    double prev = 2.0;
    for (double target : {0.99, 0.95, 0.9, 0.8, 0.6, 0.4}) {
      const double f = fpr_at_tpr({id, ood}, target);
      EXPECT_GE(f, 0.0);
      EXPECT_LE(f, 1.0);
      EXPECT_LE(f, prev);
      prev = f;
    }
  }
}

TEST(Auroc, Examples) {
  EXPECT_EQ(auroc({{2, 3}, {0, 1}}), 1.0);
  EXPECT_EQ(auroc({{1}, {1}}), 0.5);
  EXPECT_EQ(auroc({{3, 1}, {2, 0}}), 0.75);
}

TEST(Auroc, MatchesPairwiseOracleWithTies) {
  std::mt19937_64 gen(63);
  std::uniform_int_distribution<int> coarse(0, 12);
  for (int t = 0; t < 500; ++t) {
    std::vector<double> id(1 + t % 100);
    std::vector<double> ood(1 + (t * 13) % 100);
    for (double& x : id) x = coarse(gen) + 1.0;
    for (double& x : ood) x = coarse(gen);
    EXPECT_NEAR(auroc({id, ood}), pairwise_auroc(id, ood), 1e-12);
  }
}

TEST(Auroc, InvariantUnderMonotoneTransform) {
  std::mt19937_64 gen(64);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> id(40);
    std::vector<double> ood(30);
    for (double& x : id) x = n(gen) + 0.5;
    for (double& x : ood) x = n(gen);
    auto tid = id;
    auto tood = ood;
    for (double& x : tid) x = std::exp(2.0 * x) + 3.0;
    for (double& x : tood) x = std::exp(2.0 * x) + 3.0;
    EXPECT_NEAR(auroc({id, ood}), auroc({tid, tood}), 1e-15);
  }
}

TEST(TopK, Examples) {
  EXPECT_DOUBLE_EQ(topk_ratio(Vector{4, 3, 2, 1}, 2), 0.7);
  EXPECT_EQ(topk_ratio(Vector{4, -3, 2, 1}, 4), 1.0);
  EXPECT_EQ(topk_ratio(Vector{0, 0, -2, 0}, 1), 1.0);
}

TEST(TopK, Errors) {
  try {
    topk_ratio(Vector::zeros(3), 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::undefined_ratio);
  }
  EXPECT_THROW(topk_ratio(Vector{1, 2}, 0), Error);
  EXPECT_THROW(topk_ratio(Vector{1, 2}, 3), Error);
}

TEST(TopK, PermutationAndScaleInvariant) {
  std::mt19937_64 gen(65);
  for (int t = 0; t < 500; ++t) {
    const auto g = random_vector(gen, 20);
    std::vector<double> p(g.values());
    std::shuffle(p.begin(), p.end(), gen);
    const std::size_t k = 1 + t % 20;
    EXPECT_NEAR(topk_ratio(g, k), topk_ratio(Vector(p), k), 1e-12);
    EXPECT_NEAR(topk_ratio(g, k), topk_ratio(scale(g, -4.5), k), 1e-12);
  }
}

TEST(Concentration, AffineSameClassZeroStd) {
  const auto h = HeadModel::affine(Matrix(2, 4, {1, 2, 3, 4, 0, 0, 0, 0}), Vector{0, 0});
  std::vector<Vector> samples{Vector{1, 1, 1, 1}, Vector{2, 1, 0, 3}, Vector{5, 5, 5, 5}};
  const std::vector<std::size_t> ks{1, 2, 4};
  const auto p = concentration_profile(h, samples, ks);
  for (double s : p.std_ratio) EXPECT_EQ(s, 0.0);
  EXPECT_EQ(p.mean_ratio.back(), 1.0);
}

TEST(Concentration, MonotonePerSampleAndExcludesZeroGradients) {
  std::mt19937_64 gen(66);
  const auto h = random_head(gen, {16, 12, 5}, Activation::relu);
  std::vector<Vector> samples;
  for (int i = 0; i < 50; ++i) samples.push_back(random_vector(gen, 16));
  std::vector<std::size_t> ks(16);
  std::iota(ks.begin(), ks.end(), 1u);
  const auto p = concentration_profile(h, samples, ks);
  EXPECT_EQ(p.n_samples + p.excluded, 50u);
  for (const auto& r : p.per_sample) {
    EXPECT_TRUE(std::is_sorted(r.begin(), r.end()));
    EXPECT_EQ(r.back(), 1.0);
  }
}

TEST(Histogram, Examples) {
  const auto same = export_histogram({{2, 2}, {2}}, 4);
  EXPECT_EQ(same.id_count[0], 2u);
  EXPECT_EQ(same.ood_count[0], 1u);

  const auto split = export_histogram({{0, 1}, {10, 11}}, 2);
  EXPECT_EQ(split.id_count, (std::vector<std::size_t>{2, 0}));
  EXPECT_EQ(split.ood_count, (std::vector<std::size_t>{0, 2}));
}

TEST(Histogram, Conserves) {
  std::mt19937_64 gen(67);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int t = 0; t < 100; ++t) {
    ScoredSet s;
    for (int i = 0; i < 37; ++i) s.id_scores.push_back(n(gen));
    for (int i = 0; i < 23; ++i) s.ood_scores.push_back(n(gen) - 1.0);
    const auto h = export_histogram(s, 2 + t % 30);
    EXPECT_EQ(std::accumulate(h.id_count.begin(), h.id_count.end(), std::size_t{0}), 37u);
    EXPECT_EQ(std::accumulate(h.ood_count.begin(), h.ood_count.end(), std::size_t{0}), 23u);
  }
}
