#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "test_support.hpp"

using namespace gsc;
using gsc::testing::lse_oracle;
using gsc::testing::random_vector;

TEST(Dot, Examples) {
  EXPECT_EQ(dot(Vector{1, 2}, Vector{3, 4}), 11.0);
  EXPECT_EQ(dot(Vector{0, 0}, Vector{5, 7}), 0.0);
  EXPECT_DOUBLE_EQ(dot(Vector{1.5, -2, 0.5}, Vector{2, 1, 4}), 3.0);
}

TEST(Dot, LengthMismatchThrows) {
  EXPECT_THROW(dot(Vector{1, 2}, Vector{1, 2, 3}), Error);
}

TEST(Matvec, Examples) {
  EXPECT_EQ(matvec(Matrix::identity(2), Vector{3, 4}), (Vector{3, 4}));
  EXPECT_EQ(matvec(Matrix(2, 2, {1, 2, 0, 1}), Vector{1, 1}), (Vector{3, 1}));
  EXPECT_EQ(matvec(Matrix::zeros(2, 3), Vector{1, 2, 3}), (Vector{0, 0}));
}

TEST(Matvec, ShapeMismatchThrows) {
  try {
    matvec(Matrix::zeros(2, 3), Vector{1, 2});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::dimension);
  }
}

TEST(Vector, RejectsEmptyAndNonFinite) {
  EXPECT_THROW(Vector(std::vector<double>{}), Error);
  EXPECT_THROW((Vector{1.0, std::nan("")}), Error);
  EXPECT_THROW((Vector{std::numeric_limits<double>::infinity()}), Error);
}

TEST(Logsumexp, Examples) {
  EXPECT_NEAR(logsumexp(Vector{0, 0}), std::log(2.0), 1e-15);
  EXPECT_NEAR(logsumexp(Vector{1000, 1000}), 1000.0 + std::log(2.0), 1e-12);
  // the long-double oracle gives 3.40760596444438
  EXPECT_NEAR(logsumexp(Vector{1, 2, 3}), 3.40760596444438, 1e-13);
  EXPECT_NEAR(logsumexp(Vector{1, 2, 3}), static_cast<double>(lse_oracle({1, 2, 3})), 1e-14);
}

TEST(Logsumexp, MatchesLongDoubleOracle) {
  std::mt19937_64 gen(11);
  for (int t = 0; t < 2000; ++t) {
    const auto v = random_vector(gen, 1 + t % 17, -30.0, 30.0);
    EXPECT_NEAR(logsumexp(v), static_cast<double>(lse_oracle(v.values())), 1e-12);
  }
}

TEST(Logsumexp, ShiftInvariance) {
  std::mt19937_64 gen(12);
  std::uniform_real_distribution<double> shift(-1e4, 1e4);
  for (int t = 0; t < 2000; ++t) {
    const auto v = random_vector(gen, 8, -10.0, 10.0);
    const double c = shift(gen);
    std::vector<double> s(v.values());
    for (double& x : s) x += c;
    EXPECT_NEAR(logsumexp(Vector(s)), logsumexp(v) + c, 1e-9 * std::max(1.0, std::abs(c)));
  }
}

TEST(Logsumexp, OneLipschitzInSupNorm) {
  std::mt19937_64 gen(13);
  for (int t = 0; t < 5000; ++t) {
    const auto a = random_vector(gen, 6, -20.0, 20.0);
    const auto b = random_vector(gen, 6, -20.0, 20.0);
    EXPECT_LE(std::abs(logsumexp(a) - logsumexp(b)), norm_inf(sub(a, b)) + 1e-12);
  }
}

TEST(Softmax, Examples) {
  const auto u = softmax(Vector{0, 0, 0, 0});
  for (double p : u) EXPECT_DOUBLE_EQ(p, 0.25);
  const auto big = softmax(Vector{1000, 0});
  EXPECT_NEAR(big[0], 1.0, 1e-15);
  EXPECT_NEAR(big[1], 0.0, 1e-15);
  const auto s = softmax(Vector{1, 2});
  EXPECT_NEAR(s[0], 0.268941, 5e-7);
  EXPECT_NEAR(s[1], 0.731059, 5e-7);
}

TEST(Softmax, SumsToOneAcrossMagnitudes) {
  std::mt19937_64 gen(14);
  std::uniform_real_distribution<double> expo(-6.0, 6.0);
  for (int t = 0; t < 10000; ++t) {
    const double mag = std::pow(10.0, expo(gen));
    const auto v = random_vector(gen, 1 + t % 12, -mag, mag);
    double sum = 0.0;
    for (double p : softmax(v)) sum += p;
    ASSERT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Argmax, Examples) {
  EXPECT_EQ(argmax(Vector{1, 3, 2}), 1u);
  EXPECT_EQ(argmax(Vector{5, 5}), 0u);
  EXPECT_EQ(argmax(Vector{-1, -2, -0.5}), 2u);
}

TEST(Norms, Basic) {
  const Vector v{3, -4};
  EXPECT_DOUBLE_EQ(norm2(v), 5.0);
  EXPECT_DOUBLE_EQ(norm_inf(v), 4.0);
  EXPECT_DOUBLE_EQ(norm1(v), 7.0);
}
