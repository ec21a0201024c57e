#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <random>

#include "test_support.hpp"

using namespace gsc;
using gsc::testing::random_head;
using gsc::testing::random_vector;

namespace {

SelectionStrategy strategy_k(SelectionKind kind, std::size_t k) {
  SelectionStrategy s;
  s.kind = kind;
  s.budget = MaskBudget::from_count(k);
  return s;
}

MaskSet mask_of(std::vector<std::size_t> idx) {
  MaskSet m;
  m.indices = std::move(idx);
  return m;
}

}  // namespace

TEST(Budget, RatioResolution) {
  EXPECT_EQ(MaskBudget::from_ratio(0.05).resolve(128), 6u);
  EXPECT_EQ(MaskBudget::from_ratio(0.001).resolve(128), 1u);
  EXPECT_EQ(MaskBudget::from_ratio(0.0).resolve(128), 0u);
  EXPECT_EQ(MaskBudget::from_ratio(1.0).resolve(128), 128u);
  EXPECT_EQ(MaskBudget::from_count(500).resolve(128), 128u);
  EXPECT_THROW(MaskBudget::from_ratio(1.5), Error);
}

TEST(Select, Examples) {
  const Vector g{0.5, -2, 0.1};
  const Vector f{1, 1, 1};
  EXPECT_EQ(select(strategy_k(SelectionKind::top_grad, 1), f, g).indices, (std::vector<std::size_t>{1}));
  EXPECT_EQ(select(strategy_k(SelectionKind::reverse, 1), f, g).indices, (std::vector<std::size_t>{2}));

  auto fisher = strategy_k(SelectionKind::fisher_weighted, 1);
  fisher.fisher_diag = Vector{16, 1};
  EXPECT_EQ(select(fisher, Vector{1, 1}, Vector{2, 1}).indices, (std::vector<std::size_t>{1}));
}

TEST(Select, TiesGoToLowerIndex) {
  EXPECT_EQ(select(strategy_k(SelectionKind::top_grad, 2), Vector{1, 1, 1, 1}, Vector{1, -3, 3, 3}).indices,
            (std::vector<std::size_t>{1, 2}));
}

TEST(Select, GradientTimesFeature) {
  EXPECT_EQ(select(strategy_k(SelectionKind::top_grad_times_feature, 1), Vector{10, 1, 0}, Vector{1, 5, 9}).indices,
            (std::vector<std::size_t>{0}));
}

TEST(Select, DegenerateGradientFlagged) {
  const auto m = select(strategy_k(SelectionKind::top_grad, 2), Vector{1, 2, 3}, Vector::zeros(3));
  EXPECT_TRUE(m.degenerate_gradient);
  EXPECT_EQ(m.indices, (std::vector<std::size_t>{0, 1}));
}

TEST(Select, RandomNeedsSeedAndIsDeterministic) {
  auto s = strategy_k(SelectionKind::random, 5);
  const auto f = Vector::zeros(40);
  EXPECT_THROW(select(s, f, f), Error);
  s.seed = 99;
  const auto a = select(s, f, f);
  const auto b = select(s, f, f);
  EXPECT_EQ(a.indices, b.indices);
  EXPECT_EQ(a.size(), 5u);
  EXPECT_TRUE(std::is_sorted(a.indices.begin(), a.indices.end()));
}

TEST(Select, ScaleEquivariantForTopGrad) {
  std::mt19937_64 gen(21);
  for (int t = 0; t < 500; ++t) {
    const auto g = random_vector(gen, 30);
    const auto f = random_vector(gen, 30);
    const double c = t % 2 ? -3.7 : 0.02;
    const auto s = strategy_k(SelectionKind::top_grad, 1 + t % 10);
    EXPECT_EQ(select(s, f, g).indices, select(s, f, scale(g, c)).indices);
  }
}

TEST(Apply, Examples) {
  const auto zero = apply(ModificationRule::zero(), Vector{3, 1, 2}, Vector{1, 1, 1}, mask_of({1}));
  EXPECT_EQ(zero.f_prime, (Vector{3, 0, 2}));
  EXPECT_EQ(zero.delta, (Vector{0, -1, 0}));

  EXPECT_EQ(apply(ModificationRule::orth_project(), Vector{1, 0}, Vector{1, 0}, {}).f_prime, (Vector{0, 0}));
  EXPECT_EQ(apply(ModificationRule::orth_project(), Vector{0, 1}, Vector{1, 0}, {}).f_prime, (Vector{0, 1}));

  const auto sp = apply(ModificationRule::sign_perturb(0.1), Vector{1, 1}, Vector{3, -2}, mask_of({0}));
  EXPECT_DOUBLE_EQ(sp.f_prime[0], 0.9);
  EXPECT_EQ(sp.f_prime[1], 1.0);
}

TEST(Apply, ScaleAndClip) {
  EXPECT_EQ(apply(ModificationRule::scale(0.5), Vector{4, -2}, Vector{1, 1}, mask_of({0, 1})).f_prime, (Vector{2, -1}));
  EXPECT_EQ(apply(ModificationRule::clip(1.5), Vector{4, -2, 1}, Vector{1, 1, 1}, mask_of({0, 1, 2})).f_prime,
            (Vector{1.5, -1.5, 1}));
}

TEST(Apply, SignPerturbDefaultAlpha) {
  const auto r = apply(ModificationRule::sign_perturb(), Vector{2, -10}, Vector{1, 1}, mask_of({0}));
  EXPECT_DOUBLE_EQ(r.f_prime[0], 1.0);  // alpha = 0.1 * 10
}

TEST(Apply, OrthProjectZeroGradientIsNoOp) {
  const auto r = apply(ModificationRule::orth_project(), Vector{1, 2}, Vector{0, 0}, {});
  EXPECT_TRUE(r.degenerate_gradient);
  EXPECT_EQ(r.f_prime, (Vector{1, 2}));
}

TEST(Apply, MaskIndexOutOfRange) {
  EXPECT_THROW(apply(ModificationRule::zero(), Vector{1, 2}, Vector{1, 1}, mask_of({2})), Error);
}

TEST(Apply, MaskedRulesTouchOnlyMask) {
  std::mt19937_64 gen(22);
  const std::vector<ModificationRule> rules{ModificationRule::zero(), ModificationRule::scale(0.3),
                                            ModificationRule::sign_perturb(), ModificationRule::clip(0.2)};
  for (int t = 0; t < 400; ++t) {
    const auto f = random_vector(gen, 25);
    const auto g = random_vector(gen, 25);
    const std::size_t k = 1 + t % 8;
    const auto mask = select(strategy_k(SelectionKind::top_grad, k), f, g);
    const auto& rule = rules[t % rules.size()];
    const auto r = apply(rule, f, g, mask);
    std::size_t nnz = 0;
    for (std::size_t i = 0; i < 25; ++i) {
      if (!mask.contains(i)) {
        EXPECT_EQ(std::bit_cast<std::uint64_t>(r.f_prime[i]), std::bit_cast<std::uint64_t>(f[i]));
      }
      nnz += r.delta[i] != 0.0 ? 1 : 0;
    }
    EXPECT_LE(nnz, k);
  }
}

TEST(Apply, OrthProjectIsOrthogonal) {
  std::mt19937_64 gen(23);
  for (int t = 0; t < 500; ++t) {
    const auto f = random_vector(gen, 20, -5, 5);
    const auto g = random_vector(gen, 20);
    EXPECT_NEAR(dot(apply(ModificationRule::orth_project(), f, g, {}).f_prime, g), 0.0, 1e-9);
  }
}

TEST(DropEstimate, Examples) {
  const Vector g{1, 2, 0.5};
  const Vector f{3, 4, 2};
  EXPECT_DOUBLE_EQ(logit_drop_estimate(g, f, mask_of({1}), ModificationRule::zero()), 8.0);
  EXPECT_DOUBLE_EQ(logit_drop_estimate(g, f, mask_of({1}), ModificationRule::scale(0.5)), 4.0);
}

TEST(DropEstimate, ExactForAffineHeads) {
  std::mt19937_64 gen(24);
  const std::vector<ModificationRule> rules{ModificationRule::zero(), ModificationRule::scale(0.25),
                                            ModificationRule::sign_perturb(), ModificationRule::clip(0.3),
                                            ModificationRule::orth_project()};
  for (int t = 0; t < 300; ++t) {
    const auto h = random_head(gen, {16, 5}, Activation::none);
    const auto f = random_vector(gen, 16, -2, 2);
    const auto b = evaluate(h, f);
    const auto mask = select(strategy_k(SelectionKind::top_grad, 1 + t % 5), f, b.g);
    const auto& rule = rules[t % rules.size()];
    const auto mod = apply(rule, f, b.g, mask);
    const double exact = b.y[b.c] - forward(h, mod.f_prime)[b.c];
    EXPECT_NEAR(logit_drop_estimate(b.g, f, mask, rule), exact, 1e-9);
  }
}

TEST(RunPlan, OneRoundEqualsSelectThenApply) {
  std::mt19937_64 gen(25);
  const auto h = random_head(gen, {20, 10, 4}, Activation::tanh);
  const auto f = random_vector(gen, 20);
  ShortCircuitPlan plan;
  plan.strategy = strategy_k(SelectionKind::top_grad, 4);
  const auto b = evaluate(h, f);
  const auto mod = apply(plan.rule, f, b.g, select(plan.strategy, f, b.g));
  const auto r = run_plan(plan, h, f);
  EXPECT_EQ(r.f_prime, mod.f_prime);
  EXPECT_EQ(r.delta_total, mod.delta);
  EXPECT_EQ(r.per_round.size(), 1u);
}

TEST(RunPlan, AffineMultiRoundMatchesOneShot) {
  std::mt19937_64 gen(26);
  for (int t = 0; t < 50; ++t) {
    const auto h = random_head(gen, {24, 3}, Activation::none);
    // positive features keep the predicted class stable while coordinates are zeroed
    const auto f = random_vector(gen, 24, 0.5, 1.0);
    ShortCircuitPlan one;
    one.strategy = strategy_k(SelectionKind::top_grad, 6);
    ShortCircuitPlan two = one;
    two.rounds = 2;
    const auto a = run_plan(one, h, f);
    const auto b = run_plan(two, h, f);
    if (b.per_round[1].c != b.per_round[0].c) continue;
    EXPECT_EQ(a.f_prime, b.f_prime);
  }
}

TEST(RunPlan, LaterRoundsSkipModifiedCoordinates) {
  std::mt19937_64 gen(28);
  const auto h = random_head(gen, {40, 16, 6}, Activation::tanh);
  const auto f = random_vector(gen, 40);
  for (SelectionKind kind : {SelectionKind::top_grad, SelectionKind::reverse, SelectionKind::random}) {
    ShortCircuitPlan plan;
    plan.strategy = strategy_k(kind, 9);
    plan.strategy.seed = 5;
    plan.rounds = 3;
    const auto r = run_plan(plan, h, f);
    EXPECT_EQ(r.union_mask.size(), 9u);
  }
}

TEST(Select, ExcludedCoordinatesNeverChosen) {
  const Vector g{5, 4, 3, 2, 1};
  const Vector f{1, 1, 1, 1, 1};
  const std::vector<std::size_t> skip{0, 2};
  EXPECT_EQ(select(strategy_k(SelectionKind::top_grad, 2), f, g, skip).indices, (std::vector<std::size_t>{1, 3}));
  EXPECT_EQ(select(strategy_k(SelectionKind::top_grad, 2), f, Vector::zeros(5), skip).indices,
            (std::vector<std::size_t>{1, 3}));
}

TEST(RunPlan, SplitBudget) {
  EXPECT_EQ(split_budget(7, 3), (std::vector<std::size_t>{3, 2, 2}));
  EXPECT_EQ(split_budget(6, 3), (std::vector<std::size_t>{2, 2, 2}));
}

TEST(RunPlan, DeterministicBytes) {
  std::mt19937_64 gen(27);
  const auto h = random_head(gen, {30, 12, 5}, Activation::relu);
  const auto f = random_vector(gen, 30);
  ShortCircuitPlan plan;
  plan.strategy = strategy_k(SelectionKind::random, 5);
  plan.strategy.seed = 1234;
  plan.rounds = 2;
  plan.rule = ModificationRule::sign_perturb();
  const auto a = run_plan(plan, h, f);
  const auto b = run_plan(plan, h, f);
  EXPECT_EQ(a.union_mask.indices, b.union_mask.indices);
  for (std::size_t i = 0; i < 30; ++i) {
    EXPECT_EQ(std::bit_cast<std::uint64_t>(a.f_prime[i]), std::bit_cast<std::uint64_t>(b.f_prime[i]));
  }
}

TEST(RunPlan, IterativeReluAtLeastOneShotDrop) {
  // 2-layer relu head, d = 32, k = 6 split over 3 rounds
  std::size_t wins = 0;
  const std::size_t seeds = 20;
  for (std::size_t seed = 0; seed < seeds; ++seed) {
    SynthConfig cfg;
    cfg.d = 32;
    cfg.support = 16;
    cfg.spikes = 3;
    cfg.n_id = 20;
    cfg.n_ood = 60;
    cfg.n_calibration = 0;
    cfg.head = SynthHead::gated_relu;
    cfg.seed = 100 + seed;
    const auto ds = generate(cfg);
    ShortCircuitPlan one;
    one.strategy = strategy_k(SelectionKind::top_grad, 6);
    ShortCircuitPlan three = one;
    three.rounds = 3;
    double drop_one = 0.0;
    double drop_three = 0.0;
    for (const auto& f : ds.ood_features) {
      const auto b = evaluate(ds.head, f);
      const auto r1 = run_plan(one, ds.head, f, b.c, b.g);
      const auto r3 = run_plan(three, ds.head, f, b.c, b.g);
      EXPECT_LE(r3.union_mask.size(), 6u);
      drop_one += b.y[b.c] - forward(ds.head, r1.f_prime)[b.c];
      drop_three += b.y[b.c] - forward(ds.head, r3.f_prime)[b.c];
    }
    if (drop_three >= drop_one - 1e-9) ++wins;
  }
  EXPECT_GE(wins * 10, seeds * 9);
}
