#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dualde/models.hpp"
#include "gradcheck.hpp"
#include "test_util.hpp"

using namespace dualde;
using dualde::testkit::check_params;
using dualde::testkit::random_triples;
using dualde::testkit::randomize;

namespace {

BasicModelParams<double> blank(Family f, std::size_t dim, std::size_t ne = 2, std::size_t nr = 1) {
  auto p = init_params<double>(ModelFamily{f}, dim, ne, nr, 0);
  std::fill(p.entities.begin(), p.entities.end(), 0.0);
  std::fill(p.relations.begin(), p.relations.end(), 0.0);
  return p;
}

template <class T>
void set(std::span<T> row, std::initializer_list<double> values) {
  std::size_t i = 0;
  for (double v : values) row[i++] = static_cast<T>(v);
}

}  // namespace

TEST(InitParams, DeterministicUnderSeed) {
  for (Family f : kAllFamilies) {
    const auto a = init_params(ModelFamily{f}, 16, 30, 4, 9);
    const auto b = init_params(ModelFamily{f}, 16, 30, 4, 9);
    EXPECT_EQ(a.entities, b.entities);
    EXPECT_EQ(a.relations, b.relations);
  }
}

TEST(InitParams, ComplExStoresTwoRealsPerCoordinate) {
  const auto p = init_params(ModelFamily{Family::kComplEx}, 32, 5, 2, 1);
  EXPECT_EQ(p.entity(0).size(), 64u);
  EXPECT_EQ(p.entities.size(), 5u * 64u);
}

TEST(InitParams, TransECoordinatesWithinBound) {
  const auto p = init_params(ModelFamily{Family::kTransE}, 8, 200, 20, 3);
  const double bound = 6.0 / std::sqrt(8.0);
  for (float v : p.entities) EXPECT_LE(std::abs(v), bound);
  for (float v : p.relations) EXPECT_LE(std::abs(v), bound);
}

TEST(InitParams, RotatEPhasesInOneTurn) {
  const auto p = init_params(ModelFamily{Family::kRotatE}, 8, 10, 20, 3);
  for (float v : p.relations) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, static_cast<float>(2.0 * std::numbers::pi));
  }
}

TEST(InitParams, RejectsDegenerateShapes) {
  EXPECT_THROW(init_params(ModelFamily{Family::kTransE}, 0, 3, 1, 0), ConfigError);
  EXPECT_THROW(init_params(ModelFamily{Family::kTransE}, 4, 0, 1, 0), DataError);
  EXPECT_THROW(init_params(ModelFamily{Family::kTransE}, 4, 3, 0, 0), DataError);
}

TEST(Score, TransEExactTranslationIsZero) {
  auto p = blank(Family::kTransE, 2, 2);
  set(p.entity(0), {1, 0});
  set(p.entity(1), {1, 1});
  set(p.relation(0), {0, 1});
  EXPECT_DOUBLE_EQ(score_triple(p, Triple{0, 0, 1}), 0.0);
}

TEST(Score, ComplExHandEvaluation) {
  auto p = blank(Family::kComplEx, 1, 1);
  set(p.entity(0), {0, 1});  // i
  set(p.relation(0), {1, 0});
  // Re(i * 1 * conj(i)) = Re(i * -i) = 1
  EXPECT_DOUBLE_EQ(score_triple(p, Triple{0, 0, 0}), 1.0);
}

TEST(Score, RotatEExactRotationIsZero) {
  auto p = blank(Family::kRotatE, 1, 2);
  set(p.entity(0), {1, 0});
  set(p.entity(1), {0, 1});
  set(p.relation(0), {std::numbers::pi / 2});
  EXPECT_NEAR(score_triple(p, Triple{0, 0, 1}), 0.0, 1e-24);
}

TEST(Score, SimplEHandEvaluation) {
  auto p = blank(Family::kSimplE, 1, 2);
  set(p.entity(0), {2, 4});  // h^(H), h^(T)
  set(p.entity(1), {0, 1});  // t^(H), t^(T)
  set(p.relation(0), {3, 5});
  EXPECT_DOUBLE_EQ(score_triple(p, Triple{0, 0, 1}), 3.0);
}

TEST(Score, TransEL1) {
  ModelFamily fam{Family::kTransE};
  fam.p_norm = 1;
  auto p = init_params<double>(fam, 2, 2, 1, 0);
  set(p.entity(0), {1, 0});
  set(p.entity(1), {0, 0});
  set(p.relation(0), {1, -2});
  EXPECT_DOUBLE_EQ(score_triple(p, Triple{0, 0, 1}), -4.0);
}

TEST(Score, RotatEUnsquaredOption) {
  ModelFamily fam{Family::kRotatE};
  fam.rotate_squared = false;
  auto p = init_params<double>(fam, 1, 2, 1, 0);
  set(p.entity(0), {1, 0});
  set(p.entity(1), {0, 0});
  set(p.relation(0), {0});
  EXPECT_DOUBLE_EQ(score_triple(p, Triple{0, 0, 1}), -1.0);
  fam.rotate_squared = true;
  p.family = fam;
  set(p.entity(0), {2, 0});
  EXPECT_DOUBLE_EQ(score_triple(p, Triple{0, 0, 1}), -4.0);
}

TEST(Score, OutOfRangeIdThrows) {
  const auto p = init_params(ModelFamily{Family::kTransE}, 4, 3, 2, 0);
  EXPECT_THROW(score_triple(p, Triple{3, 0, 0}), std::out_of_range);
  EXPECT_THROW(score_triple(p, Triple{0, 2, 0}), std::out_of_range);
  const std::vector<Triple> batch{{0, 0, 1}, {0, 0, 7}};
  EXPECT_THROW(score(p, batch), std::out_of_range);
}

TEST(Score, BatchMatchesPerTripleAndIsPermutationEquivariant) {
  for (Family f : kAllFamilies) {
    const auto p = init_params(ModelFamily{f}, 8, 20, 3, 4);
    auto triples = random_triples(50, 20, 3, 6);
    const auto fwd = score(p, triples);
    ASSERT_EQ(fwd.scores.size(), triples.size());
    for (std::size_t i = 0; i < triples.size(); ++i) EXPECT_EQ(fwd.scores[i], score_triple(p, triples[i]));
    std::vector<std::size_t> perm(triples.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(1);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<Triple> shuffled;
    for (auto i : perm) shuffled.push_back(triples[i]);
    const auto fwd2 = score(p, shuffled);
    for (std::size_t i = 0; i < perm.size(); ++i) EXPECT_EQ(fwd2.scores[i], fwd.scores[perm[i]]);
  }
}

TEST(Score, RotatEInvariantToFullTurn) {
  auto p = init_params<double>(ModelFamily{Family::kRotatE}, 6, 10, 3, 2);
  const auto triples = random_triples(40, 10, 3, 3);
  const auto before = score(p, triples);
  for (auto& v : p.relation(1)) v += 2.0 * std::numbers::pi;
  const auto after = score(p, triples);
  for (std::size_t i = 0; i < triples.size(); ++i) EXPECT_NEAR(before.scores[i], after.scores[i], 1e-12);
}

TEST(Score, ComplExWithRealEmbeddingsIsDistMult) {
  auto p = init_params<double>(ModelFamily{Family::kComplEx}, 6, 10, 3, 2);
  for (std::size_t i = 1; i < p.entities.size(); i += 2) p.entities[i] = 0.0;
  for (std::size_t i = 1; i < p.relations.size(); i += 2) p.relations[i] = 0.0;
  for (const auto& t : random_triples(40, 10, 3, 8)) {
    const auto h = p.entity(t.head), r = p.relation(t.relation), tl = p.entity(t.tail);
    double distmult = 0.0;
    for (std::size_t k = 0; k < 6; ++k) distmult += h[2 * k] * r[2 * k] * tl[2 * k];
    EXPECT_NEAR(score_triple(p, t), distmult, 1e-12);
  }
}

TEST(ScoreBackward, ZeroUpstreamGivesZeroGradient) {
  for (Family f : kAllFamilies) {
    const auto p = init_params(ModelFamily{f}, 6, 10, 3, 1);
    const auto triples = random_triples(20, 10, 3, 2);
    const auto fwd = score(p, triples);
    ParamGrad g(p);
    const std::vector<double> zeros(triples.size(), 0.0);
    score_backward(p, fwd, zeros, g);
    for (std::size_t s = 0; s < g.entities.size(); ++s)
      for (double v : g.entities.at(s)) EXPECT_EQ(v, 0.0);
    for (std::size_t s = 0; s < g.relations.size(); ++s)
      for (double v : g.relations.at(s)) EXPECT_EQ(v, 0.0);
  }
}

TEST(ScoreBackward, MissingForwardCacheIsRejected) {
  const auto p = init_params(ModelFamily{Family::kTransE}, 4, 5, 1, 1);
  ScoreBatch fwd;
  fwd.triples = {{0, 0, 1}};
  ParamGrad g(p);
  const std::vector<double> up{1.0};
  EXPECT_THROW(score_backward(p, fwd, up, g), std::logic_error);
}

TEST(ScoreBackward, RepeatedTripleDoublesGradient) {
  for (Family f : kAllFamilies) {
    const auto p = init_params(ModelFamily{f}, 6, 10, 3, 5);
    const Triple t{1, 2, 4};
    const std::vector<Triple> once{t}, twice{t, t};
    ParamGrad g1(p), g2(p);
    score_backward(p, score(p, once), std::vector<double>{0.7}, g1);
    score_backward(p, score(p, twice), std::vector<double>{0.7, 0.7}, g2);
    for (EntityId e : {t.head, t.tail}) {
      const auto a = g1.entities.find(e), b = g2.entities.find(e);
      for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(b[k], 2.0 * a[k]);
    }
    const auto a = g1.relations.find(t.relation), b = g2.relations.find(t.relation);
    for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(b[k], 2.0 * a[k]);
  }
}

TEST(ScoreBackward, TransEZeroDistanceHasZeroGradient) {
  auto p = blank(Family::kTransE, 2, 2);
  set(p.entity(0), {1, 0});
  set(p.entity(1), {1, 1});
  set(p.relation(0), {0, 1});
  ParamGrad g(p);
  const std::vector<Triple> batch{{0, 0, 1}};
  score_backward(p, score(p, batch), std::vector<double>{1.0}, g);
  for (std::size_t s = 0; s < g.entities.size(); ++s)
    for (double v : g.entities.at(s)) EXPECT_EQ(v, 0.0);
}

TEST(ScoreBackward, TransEL1SignOfZeroIsZero) {
  ModelFamily fam{Family::kTransE};
  fam.p_norm = 1;
  auto p = init_params<double>(fam, 2, 2, 1, 0);
  set(p.entity(0), {1, 0});
  set(p.entity(1), {1, 3});
  set(p.relation(0), {0, 1});
  ParamGrad g(p);
  const std::vector<Triple> batch{{0, 0, 1}};
  score_backward(p, score(p, batch), std::vector<double>{1.0}, g);
  // h + r - t = (0, -2): first coordinate at the kink, second negative.
  const auto gh = g.entities.find(0);
  EXPECT_EQ(gh[0], 0.0);
  EXPECT_EQ(gh[1], 1.0);
}

TEST(ScoreBackward, MatchesFiniteDifferencesForEveryFamily) {
  for (Family f : kAllFamilies) {
    for (int p_norm : {1, 2}) {
      if (p_norm == 1 && f != Family::kTransE) continue;
      ModelFamily fam{f};
      fam.p_norm = p_norm;
      auto p = init_params<double>(fam, 6, 12, 3, 7);
      randomize(p, 11);
      const auto triples = random_triples(100, 12, 3, 13);
      testkit::GradCheck total;
      for (const auto& t : triples) {
        const std::vector<Triple> one{t};
        ParamGrad g(p);
        score_backward(p, score(p, one), std::vector<double>{1.0}, g);
        total.merge(check_params(p, g, one, 1e-4, [&] { return score_triple(p, t); }));
      }
      EXPECT_LT(total.max_rel_error, 1e-4) << family_name(f) << " p=" << p_norm;
      EXPECT_GT(total.checked, 100u * 6u);
      EXPECT_LT(total.skipped, total.checked / 20);
    }
  }
}

TEST(EntityView, LayoutPerFamily) {
  auto te = blank(Family::kTransE, 3, 1);
  set(te.entity(0), {1, 2, 3});
  const auto v = entity_view(te, 0);
  EXPECT_EQ(std::vector<double>(v.begin(), v.end()), (std::vector<double>{1, 2, 3}));

  auto ce = blank(Family::kComplEx, 1, 1);
  set(ce.entity(0), {0.5, 0.5});
  const auto c = entity_view(ce, 0);
  EXPECT_EQ(std::vector<double>(c.begin(), c.end()), (std::vector<double>{0.5, 0.5}));

  auto se = blank(Family::kSimplE, 2, 1);
  set(se.entity(0), {1, 0, 0, 1});
  const auto s = entity_view(se, 0);
  EXPECT_EQ(std::vector<double>(s.begin(), s.end()), (std::vector<double>{1, 0, 0, 1}));

  EXPECT_THROW(entity_view(se, 1), std::out_of_range);
}
