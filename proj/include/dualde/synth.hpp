#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "dualde/kg_data.hpp"

namespace dualde {

enum class LatentRule {
  kBilinear,       // plausibility z_h^T W_r z_t
  kTranslational,  // plausibility -||z_h + w_r - z_t||
};

// A graph whose facts follow a hidden low-rank rule: each entity has a latent
// vector z, each relation a latent matrix or offset, and (h, r, t) holds for
// the top `density` fraction of ordered pairs by plausibility.
struct LatentGraphSpec {
  LatentRule rule = LatentRule::kBilinear;
  std::size_t entities = 100;
  std::size_t relations = 12;
  std::size_t latent_dim = 6;
  double density = 0.03;
  double valid_fraction = 0.1;
  double test_fraction = 0.1;
  std::uint64_t seed = 7;
};

inline KnowledgeGraph make_latent_graph(const LatentGraphSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t n = spec.entities, k = spec.latent_dim;
  std::vector<double> z(n * k);
  for (auto& v : z) v = normal(rng);

  std::vector<Triple> facts;
  std::vector<std::pair<double, std::size_t>> scored;
  for (RelationId r = 0; r < spec.relations; ++r) {
    const bool bilinear = spec.rule == LatentRule::kBilinear;
    std::vector<double> w(bilinear ? k * k : k);
    for (auto& v : w) v = normal(rng);
    scored.clear();
    for (std::size_t h = 0; h < n; ++h) {
      for (std::size_t t = 0; t < n; ++t) {
        if (h == t) continue;
        double s = 0.0;
        if (bilinear) {
          for (std::size_t a = 0; a < k; ++a)
            for (std::size_t b = 0; b < k; ++b) s += z[h * k + a] * w[a * k + b] * z[t * k + b];
        } else {
          for (std::size_t a = 0; a < k; ++a) {
            const double d = z[h * k + a] + w[a] - z[t * k + a];
            s -= d * d;
          }
        }
        scored.emplace_back(s, h * n + t);
      }
    }
    const auto keep = std::max<std::size_t>(1, static_cast<std::size_t>(spec.density * double(scored.size())));
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep), scored.end(),
                      [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; i < keep; ++i) {
      const auto pair = scored[i].second;
      facts.push_back(Triple{static_cast<EntityId>(pair / n), r, static_cast<EntityId>(pair % n)});
    }
  }

  std::shuffle(facts.begin(), facts.end(), rng);
  const auto n_valid = static_cast<std::size_t>(spec.valid_fraction * double(facts.size()));
  const auto n_test = static_cast<std::size_t>(spec.test_fraction * double(facts.size()));
  std::vector<Triple> valid(facts.begin(), facts.begin() + static_cast<std::ptrdiff_t>(n_valid));
  std::vector<Triple> test(facts.begin() + static_cast<std::ptrdiff_t>(n_valid),
                           facts.begin() + static_cast<std::ptrdiff_t>(n_valid + n_test));
  std::vector<Triple> train(facts.begin() + static_cast<std::ptrdiff_t>(n_valid + n_test), facts.end());
  return make_graph(Vocabulary::numbered(n, spec.relations), std::move(train), std::move(valid), std::move(test));
}

// Uniformly random distinct triples with the given split sizes; only the
// shape matters (inference timing, ranking oracles).
inline KnowledgeGraph make_random_graph(std::size_t entities, std::size_t relations, std::size_t train,
                                        std::size_t valid, std::size_t test, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<EntityId> ent(0, static_cast<EntityId>(entities - 1));
  std::uniform_int_distribution<RelationId> rel(0, static_cast<RelationId>(relations - 1));
  const std::size_t total = train + valid + test;
  if (total > entities * entities * relations) throw ConfigError("make_random_graph: too many triples requested");
  TripleSet seen;
  std::vector<Triple> facts;
  facts.reserve(total);
  while (facts.size() < total) {
    const Triple t{ent(rng), rel(rng), ent(rng)};
    if (seen.insert(t).second) facts.push_back(t);
  }
  std::vector<Triple> tr(facts.begin(), facts.begin() + static_cast<std::ptrdiff_t>(train));
  std::vector<Triple> va(facts.begin() + static_cast<std::ptrdiff_t>(train),
                         facts.begin() + static_cast<std::ptrdiff_t>(train + valid));
  std::vector<Triple> te(facts.begin() + static_cast<std::ptrdiff_t>(train + valid), facts.end());
  return make_graph(Vocabulary::numbered(entities, relations), std::move(tr), std::move(va), std::move(te));
}

}  // namespace dualde
