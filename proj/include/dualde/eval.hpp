#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dualde/kg_data.hpp"
#include "dualde/models.hpp"

namespace dualde {

// Ties count half: rank = 1 + #greater + #equal / 2.
inline constexpr const char* kTiePolicy = "mean";

struct TripleRank {
  Triple triple;
  double head = 1.0;
  double tail = 1.0;

  double final_rank() const { return 0.5 * (head + tail); }
};

struct RankReport {
  std::vector<TripleRank> ranks;
  double mrr = 0.0;
  double hits1 = 0.0;
  double hits3 = 0.0;
  double hits10 = 0.0;
  bool filtered = true;
  // Head and tail ranks pooled as separate queries instead of averaged.
  bool pooled = false;
  std::string tie_policy = kTiePolicy;
  std::size_t candidates = 0;
};

struct RankOptions {
  bool filtered = true;
};

// Reusable scratch space for ranking one query at a time.
struct RankWorkspace {
  std::vector<double> scores;
  std::vector<std::uint8_t> excluded;

  void resize(std::size_t n) {
    scores.resize(n);
    excluded.assign(n, 0);
  }
};

namespace detail {

// Position of `truth` among candidates with `excluded` ones removed.
inline double rank_of(std::span<const double> scores, std::span<const std::uint8_t> excluded, EntityId truth) {
  const double target = scores[truth];
  std::size_t greater = 0, equal = 0;
  for (std::size_t e = 0; e < scores.size(); ++e) {
    if (e == truth || excluded[e]) continue;
    if (scores[e] > target)
      ++greater;
    else if (scores[e] == target)
      ++equal;
  }
  return 1.0 + static_cast<double>(greater) + 0.5 * static_cast<double>(equal);
}

}  // namespace detail

// (rank_h, rank_t) of `triple` against every head and tail replacement,
// dropping known-true candidates other than the triple itself when filtered.
template <class T>
std::pair<double, double> filtered_rank(const BasicModelParams<T>& params, const Triple& triple,
                                        const KnowledgeGraph& kg, RankOptions options, RankWorkspace& ws) {
  const std::size_t n = kg.num_entities();
  if (triple.head >= n || triple.tail >= n || triple.relation >= kg.num_relations())
    throw std::logic_error("filtered_rank: test triple is not among the candidates");
  if (params.num_entities != n) throw ConfigError("filtered_rank: model and graph entity counts differ");

  ws.resize(n);
  for (EntityId e = 0; e < n; ++e) ws.scores[e] = score_triple(params, Triple{e, triple.relation, triple.tail});
  if (options.filtered)
    for (EntityId e : kg.filter_index.heads(triple.relation, triple.tail)) ws.excluded[e] = 1;
  const double rank_h = detail::rank_of(ws.scores, ws.excluded, triple.head);

  std::fill(ws.excluded.begin(), ws.excluded.end(), 0);
  for (EntityId e = 0; e < n; ++e) ws.scores[e] = score_triple(params, Triple{triple.head, triple.relation, e});
  if (options.filtered)
    for (EntityId e : kg.filter_index.tails(triple.head, triple.relation)) ws.excluded[e] = 1;
  const double rank_t = detail::rank_of(ws.scores, ws.excluded, triple.tail);
  return {rank_h, rank_t};
}

template <class T>
std::pair<double, double> filtered_rank(const BasicModelParams<T>& params, const Triple& triple,
                                        const KnowledgeGraph& kg, RankOptions options = {}) {
  RankWorkspace ws;
  return filtered_rank(params, triple, kg, options, ws);
}

// MRR and Hits@{1,3,10}. Averaged mode uses (rank_h + rank_t)/2 per triple,
// kept fractional; pooled mode treats both ranks as separate queries.
inline RankReport metrics(std::span<const TripleRank> ranks, bool pooled = false) {
  if (ranks.empty()) throw std::invalid_argument("metrics: empty rank list");
  RankReport r;
  r.ranks.assign(ranks.begin(), ranks.end());
  r.pooled = pooled;
  std::size_t queries = 0;
  auto add = [&](double rank) {
    r.mrr += 1.0 / rank;
    r.hits1 += rank <= 1.0 ? 1.0 : 0.0;
    r.hits3 += rank <= 3.0 ? 1.0 : 0.0;
    r.hits10 += rank <= 10.0 ? 1.0 : 0.0;
    ++queries;
  };
  for (const auto& tr : ranks) {
    if (pooled) {
      add(tr.head);
      add(tr.tail);
    } else {
      add(tr.final_rank());
    }
  }
  const double inv = 1.0 / static_cast<double>(queries);
  r.mrr *= inv;
  r.hits1 *= inv;
  r.hits3 *= inv;
  r.hits10 *= inv;
  return r;
}

struct EvalOptions {
  bool filtered = true;
  bool pooled = false;
  // Evaluate a seeded random subset of this many triples; 0 means all.
  std::size_t max_triples = 0;
  std::uint64_t sample_seed = 0;
};

template <class T>
RankReport evaluate(const BasicModelParams<T>& params, const KnowledgeGraph& kg, std::span<const Triple> triples,
                    const EvalOptions& options = {}) {
  std::vector<Triple> chosen(triples.begin(), triples.end());
  if (options.max_triples > 0 && options.max_triples < chosen.size()) {
    std::mt19937_64 rng(options.sample_seed);
    std::shuffle(chosen.begin(), chosen.end(), rng);
    chosen.resize(options.max_triples);
  }
  std::vector<TripleRank> ranks;
  ranks.reserve(chosen.size());
  RankWorkspace ws;
  for (const auto& tr : chosen) {
    const auto [h, t] = filtered_rank(params, tr, kg, RankOptions{options.filtered}, ws);
    ranks.push_back(TripleRank{tr, h, t});
  }
  RankReport report = metrics(ranks, options.pooled);
  report.filtered = options.filtered;
  report.candidates = kg.num_entities();
  return report;
}

template <class T>
RankReport evaluate(const BasicModelParams<T>& params, const KnowledgeGraph& kg, Split split,
                    const EvalOptions& options = {}) {
  return evaluate(params, kg, std::span<const Triple>(kg.split(split)), options);
}

}  // namespace dualde
