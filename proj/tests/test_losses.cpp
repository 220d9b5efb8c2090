#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "dualde/losses.hpp"

using namespace dualde;

namespace {

using Vec = std::vector<double>;

std::span<const double> s(const Vec& v) { return v; }

Vec random_vec(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Vec v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// Rotates coordinates (0, 1) by theta.
Vec rotate(Vec v, double theta) {
  const double a = v[0], b = v[1];
  v[0] = std::cos(theta) * a - std::sin(theta) * b;
  v[1] = std::sin(theta) * a + std::cos(theta) * b;
  return v;
}

Vec scale(Vec v, double c) {
  for (auto& x : v) x *= c;
  return v;
}

}  // namespace

TEST(Huber, Examples) {
  EXPECT_EQ(huber(0.3, 0.3), 0.0);
  EXPECT_DOUBLE_EQ(huber(0.0, 0.5), 0.125);
  EXPECT_DOUBLE_EQ(huber(0.0, 2.0), 1.5);
}

TEST(Huber, SymmetricNonNegativeContinuous) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  for (int i = 0; i < 1000; ++i) {
    const double a = u(rng), b = u(rng);
    EXPECT_EQ(huber(a, b), huber(b, a));
    EXPECT_GE(huber(a, b), 0.0);
    if (a != b) {
      EXPECT_GT(huber(a, b), 0.0);
    }
  }
  EXPECT_DOUBLE_EQ(huber(0.0, 1.0), 0.5);
  EXPECT_NEAR(huber(0.0, 1.0 + 1e-12), 0.5, 1e-11);
  EXPECT_NEAR(huber(0.0, 1.0 - 1e-12), 0.5, 1e-11);
}

TEST(Huber, OneLipschitzOutsideQuadraticRegion) {
  for (double d = 1.0; d < 10.0; d += 0.37) {
    EXPECT_NEAR(huber(0.0, d + 0.1) - huber(0.0, d), 0.1, 1e-12);
    EXPECT_EQ(std::abs(huber_grad(d + 0.5, 0.0)), 1.0);
  }
}

TEST(HardLoss, Examples) {
  EXPECT_NEAR(hard_loss(0.0, 1), 0.69314718055994531, 1e-15);
  EXPECT_NEAR(hard_loss(0.0, 0), 0.69314718055994531, 1e-15);
  EXPECT_NEAR(hard_loss(800.0, 1), 0.0, 1e-300);
  EXPECT_TRUE(std::isfinite(hard_loss(-800.0, 1)));
  EXPECT_DOUBLE_EQ(hard_loss(-800.0, 1), 800.0);
}

TEST(HardLoss, MonotoneInScore) {
  double prev_pos = INFINITY, prev_neg = -INFINITY;
  for (double sc = -30.0; sc <= 30.0; sc += 0.25) {
    const double pos = hard_loss(sc, 1), neg = hard_loss(sc, 0);
    EXPECT_LT(pos, prev_pos);
    EXPECT_GT(neg, prev_neg);
    prev_pos = pos;
    prev_neg = neg;
  }
}

TEST(HardLoss, GradientMatchesFiniteDifference) {
  for (double sc = -6.0; sc <= 6.0; sc += 0.5)
    for (int y : {0, 1}) {
      const double fd = (hard_loss(sc + 1e-5, y) - hard_loss(sc - 1e-5, y)) / 2e-5;
      EXPECT_NEAR(hard_loss_grad(sc, y), fd, 1e-8);
    }
}

TEST(DScore, Examples) {
  EXPECT_EQ(d_score(2.0, 2.0), 0.0);
  EXPECT_DOUBLE_EQ(d_score(1.0, 0.5), 0.125);
  EXPECT_EQ(d_score(3.0, -1.5), d_score(-1.5, 3.0));
}

TEST(Angle, Examples) {
  const Vec a{1, 0}, b{1, 1}, c{0, 1};
  EXPECT_DOUBLE_EQ(angle(s(b), s(b)), 1.0);
  EXPECT_EQ(angle(s(a), s(c)), 0.0);
  EXPECT_NEAR(angle(s(a), s(b)), std::sqrt(2.0) / 2.0, 1e-15);
  const Vec z{0, 0};
  EXPECT_THROW(angle(s(z), s(a)), DegenerateEmbedding);
  EXPECT_THROW(angle(s(a), s(z)), DegenerateEmbedding);
}

TEST(Angle, ClampedToUnitInterval) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 200; ++i) {
    const auto v = random_vec(rng, 7);
    const double c = angle(s(v), s(scale(v, 3.7)));
    EXPECT_LE(c, 1.0);
    EXPECT_GE(angle(s(v), s(scale(v, -0.3))), -1.0);
  }
}

TEST(LengthRatio, Examples) {
  const Vec a{1, 2}, b{2, 4}, c{3, 4}, d{1, 0}, z{0, 0};
  EXPECT_DOUBLE_EQ(length_ratio(s(a), s(a)), 1.0);
  EXPECT_DOUBLE_EQ(length_ratio(s(b), s(a)), 2.0);
  EXPECT_DOUBLE_EQ(length_ratio(s(c), s(d)), 5.0);
  EXPECT_THROW(length_ratio(s(a), s(z)), DegenerateEmbedding);
}

TEST(DStructure, Examples) {
  const Vec hT{1, 0}, tT{0, 1}, hS{1, 0}, tS{1, 0};
  EXPECT_DOUBLE_EQ(d_structure(s(hT), s(tT), s(hS), s(tS)), 0.5);
  EXPECT_EQ(d_structure(s(hT), s(tT), s(hT), s(tT)), 0.0);
}

TEST(DStructure, DimensionAgnostic) {
  std::mt19937_64 rng(5);
  const auto hT = random_vec(rng, 16), tT = random_vec(rng, 16);
  const auto hS = random_vec(rng, 4), tS = random_vec(rng, 4);
  const double expected = huber(angle(s(hT), s(tT)), angle(s(hS), s(tS))) +
                          huber(length_ratio(s(hT), s(tT)), length_ratio(s(hS), s(tS)));
  EXPECT_DOUBLE_EQ(d_structure(s(hT), s(tT), s(hS), s(tS)), expected);
}

TEST(DStructure, InvariantToScalingAndRotation) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 100; ++i) {
    const auto hT = random_vec(rng, 6), tT = random_vec(rng, 6);
    EXPECT_NEAR(d_structure(s(hT), s(tT), s(scale(hT, 2.5)), s(scale(tT, 2.5))), 0.0, 1e-12);
    const auto hS = random_vec(rng, 6), tS = random_vec(rng, 6);
    const double base = d_structure(s(hT), s(tT), s(hS), s(tS));
    EXPECT_NEAR(d_structure(s(rotate(hT, 0.7)), s(rotate(tT, 0.7)), s(hS), s(tS)), base, 1e-12);
    EXPECT_NEAR(d_structure(s(hT), s(tT), s(scale(hS, 0.2)), s(scale(tS, 0.2))), base, 1e-12);
  }
}

TEST(DSoft, IsSumOfParts) {
  const Vec hT{1, 0}, tT{0, 1}, hS{1, 0}, tS{1, 0};
  EXPECT_DOUBLE_EQ(d_soft(1.0, 0.5, s(hT), s(tT), s(hS), s(tS)), 0.625);
  EXPECT_EQ(d_soft(0.3, 0.3, s(hT), s(tT), s(hT), s(tT)), 0.0);
  std::mt19937_64 rng(9);
  for (int i = 0; i < 50; ++i) {
    const auto a = random_vec(rng, 5), b = random_vec(rng, 5), c = random_vec(rng, 3), d = random_vec(rng, 3);
    const double ft = 3.0 * a[0], fs = 2.0 * b[1];
    EXPECT_DOUBLE_EQ(d_soft(ft, fs, s(a), s(b), s(c), s(d)),
                     d_score(ft, fs) + d_structure(s(a), s(b), s(c), s(d)));
  }
}

TEST(StructureBackward, MatchesFiniteDifferences) {
  std::mt19937_64 rng(13);
  const double eps = 1e-6;
  for (int i = 0; i < 100; ++i) {
    const auto hT = random_vec(rng, 8), tT = random_vec(rng, 8);
    auto h = random_vec(rng, 6), t = random_vec(rng, 6);
    for (bool self_first : {false, true}) {
      const double oa = angle(s(hT), s(tT)), orr = length_ratio(s(hT), s(tT));
      auto f = [&] {
        return self_first ? huber(angle(s(h), s(t)), oa) + huber(length_ratio(s(h), s(t)), orr)
                          : huber(oa, angle(s(h), s(t))) + huber(orr, length_ratio(s(h), s(t)));
      };
      Vec dh(6, 0.0), dt(6, 0.0);
      structure_backward(s(h), s(t), oa, orr, self_first, 1.0, dh, dt);
      for (std::size_t k = 0; k < 6; ++k) {
        for (auto* v : {&h, &t}) {
          const double saved = (*v)[k];
          (*v)[k] = saved + eps;
          const double up = f();
          (*v)[k] = saved - eps;
          const double down = f();
          (*v)[k] = saved;
          const double fd = (up - down) / (2 * eps);
          const double an = v == &h ? dh[k] : dt[k];
          EXPECT_NEAR(an, fd, 1e-6 * std::max(1.0, std::abs(fd)));
        }
      }
    }
  }
}
