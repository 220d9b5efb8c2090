#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <spdlog/spdlog.h>

#include "dualde/error.hpp"

namespace dualde {

using EntityId = std::uint32_t;
using RelationId = std::uint32_t;

struct Triple {
  EntityId head = 0;
  RelationId relation = 0;
  EntityId tail = 0;

  friend bool operator==(const Triple&, const Triple&) = default;
  friend auto operator<=>(const Triple&, const Triple&) = default;
};

struct TripleHash {
  std::size_t operator()(const Triple& t) const noexcept {
    std::uint64_t x = (std::uint64_t{t.head} << 32) ^ t.tail;
    x ^= std::uint64_t{t.relation} * 0x9E3779B97F4A7C15ull;
    x ^= x >> 33;
    x *= 0xff51afd7ed558ccdull;
    x ^= x >> 33;
    return static_cast<std::size_t>(x);
  }
};

using TripleSet = std::unordered_set<Triple, TripleHash>;

class Vocabulary {
 public:
  Vocabulary() = default;

  // Returns the id of `name`, appending it if unseen.
  EntityId add_entity(std::string_view name) { return add(name, entity_names_, entity_ids_); }
  RelationId add_relation(std::string_view name) { return add(name, relation_names_, relation_ids_); }

  std::size_t num_entities() const noexcept { return entity_names_.size(); }
  std::size_t num_relations() const noexcept { return relation_names_.size(); }

  const std::vector<std::string>& entity_names() const noexcept { return entity_names_; }
  const std::vector<std::string>& relation_names() const noexcept { return relation_names_; }

  std::optional<EntityId> entity_id(std::string_view name) const { return find(name, entity_ids_); }
  std::optional<RelationId> relation_id(std::string_view name) const { return find(name, relation_ids_); }

  // Anonymous vocabulary with names "0".."n-1"; used by synthetic graphs.
  static Vocabulary numbered(std::size_t entities, std::size_t relations) {
    Vocabulary v;
    for (std::size_t i = 0; i < entities; ++i) v.add_entity(std::to_string(i));
    for (std::size_t i = 0; i < relations; ++i) v.add_relation(std::to_string(i));
    return v;
  }

 private:
  using IdMap = std::unordered_map<std::string, std::uint32_t>;

  static std::uint32_t add(std::string_view name, std::vector<std::string>& names, IdMap& ids) {
    auto [it, inserted] = ids.try_emplace(std::string(name), static_cast<std::uint32_t>(names.size()));
    if (inserted) names.emplace_back(name);
    return it->second;
  }

  static std::optional<std::uint32_t> find(std::string_view name, const IdMap& ids) {
    auto it = ids.find(std::string(name));
    if (it == ids.end()) return std::nullopt;
    return it->second;
  }

  std::vector<std::string> entity_names_;
  std::vector<std::string> relation_names_;
  IdMap entity_ids_;
  IdMap relation_ids_;
};

// Known-true triples over all splits, queryable by (h,r,?) and (?,r,t).
class FilterIndex {
 public:
  FilterIndex() = default;

  void insert(const Triple& t) {
    if (!all_.insert(t).second) return;
    tails_[pair_key(t.head, t.relation)].push_back(t.tail);
    heads_[pair_key(t.tail, t.relation)].push_back(t.head);
  }

  bool contains(const Triple& t) const { return all_.contains(t); }
  std::size_t size() const noexcept { return all_.size(); }

  // Known tails for (h, r, ?). Unordered.
  std::span<const EntityId> tails(EntityId head, RelationId rel) const { return lookup(tails_, pair_key(head, rel)); }
  // Known heads for (?, r, t). Unordered.
  std::span<const EntityId> heads(RelationId rel, EntityId tail) const { return lookup(heads_, pair_key(tail, rel)); }

 private:
  using Adjacency = std::unordered_map<std::uint64_t, std::vector<EntityId>>;

  static std::uint64_t pair_key(std::uint32_t entity, std::uint32_t rel) {
    return (std::uint64_t{entity} << 32) | rel;
  }
  static std::span<const EntityId> lookup(const Adjacency& adj, std::uint64_t key) {
    auto it = adj.find(key);
    if (it == adj.end()) return {};
    return it->second;
  }

  TripleSet all_;
  Adjacency tails_;
  Adjacency heads_;
};

enum class Split { kTrain, kValid, kTest };

struct KnowledgeGraph {
  Vocabulary vocab;
  std::vector<Triple> train;
  std::vector<Triple> valid;
  std::vector<Triple> test;
  FilterIndex filter_index;
  TripleSet train_set;
  std::size_t duplicates_dropped = 0;

  std::size_t num_entities() const noexcept { return vocab.num_entities(); }
  std::size_t num_relations() const noexcept { return vocab.num_relations(); }

  const std::vector<Triple>& split(Split s) const {
    switch (s) {
      case Split::kTrain: return train;
      case Split::kValid: return valid;
      case Split::kTest: return test;
    }
    return train;
  }

  bool in_range(const Triple& t) const noexcept {
    return t.head < num_entities() && t.tail < num_entities() && t.relation < num_relations();
  }

  // Rebuilds filter_index and train_set from the split lists.
  void rebuild_indexes() {
    filter_index = FilterIndex{};
    train_set = TripleSet(train.begin(), train.end());
    for (const auto* s : {&train, &valid, &test})
      for (const auto& t : *s) filter_index.insert(t);
  }
};

// Builds a graph from id-coded splits: drops in-split duplicates, removes
// valid/test triples already present in an earlier split, builds indexes.
inline KnowledgeGraph make_graph(Vocabulary vocab, std::vector<Triple> train, std::vector<Triple> valid,
                                 std::vector<Triple> test) {
  KnowledgeGraph kg;
  kg.vocab = std::move(vocab);
  TripleSet seen;
  auto take = [&](std::vector<Triple>& in, std::vector<Triple>& out, const char* name) {
    TripleSet local;
    out.reserve(in.size());
    for (const auto& t : in) {
      if (!kg.in_range(t)) throw DataError(std::string(name) + ": triple id out of vocabulary range");
      if (!local.insert(t).second) {
        ++kg.duplicates_dropped;
        continue;
      }
      if (seen.contains(t)) {
        spdlog::warn("{}: triple ({}, {}, {}) already present in an earlier split; dropped", name, t.head,
                     t.relation, t.tail);
        continue;
      }
      out.push_back(t);
    }
    seen.insert(out.begin(), out.end());
  };
  take(train, kg.train, "train");
  take(valid, kg.valid, "valid");
  take(test, kg.test, "test");
  if (kg.duplicates_dropped > 0)
    spdlog::warn("dropped {} duplicate triple(s) within splits", kg.duplicates_dropped);
  kg.rebuild_indexes();
  return kg;
}

enum class DatasetFormat { kOpenKeId, kRawTsv };

namespace detail {

inline std::ifstream open_or_throw(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw DataError("missing file: " + p.string());
  return in;
}

[[noreturn]] inline void malformed(const std::filesystem::path& p, std::size_t line, const std::string& what) {
  throw DataError(p.string() + ":" + std::to_string(line) + ": " + what);
}

inline std::uint64_t parse_count(const std::filesystem::path& p, std::size_t line, std::string_view s) {
  std::uint64_t v = 0;
  std::istringstream ss{std::string(s)};
  if (!(ss >> v)) malformed(p, line, "expected a non-negative integer");
  std::string rest;
  if (ss >> rest) malformed(p, line, "unexpected trailing token '" + rest + "'");
  return v;
}

inline void strip_cr(std::string& s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
}

// "name<TAB>id" or "name id"; splits at the last tab, else last space.
inline Vocabulary read_id_file(const std::filesystem::path& p, bool entities, Vocabulary vocab) {
  auto in = open_or_throw(p);
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line)) malformed(p, 1, "empty file, expected a count line");
  strip_cr(line);
  const auto count = parse_count(p, 1, line);
  std::vector<std::string> names(count);
  std::vector<bool> filled(count, false);
  std::uint64_t rows = 0;
  while (std::getline(in, line)) {
    ++lineno;
    strip_cr(line);
    if (line.empty()) continue;
    auto cut = line.rfind('\t');
    if (cut == std::string::npos) cut = line.rfind(' ');
    if (cut == std::string::npos || cut == 0) malformed(p, lineno, "expected 'name<TAB>id'");
    const auto id = parse_count(p, lineno, std::string_view(line).substr(cut + 1));
    if (id >= count)
      malformed(p, lineno, "id " + std::to_string(id) + " out of declared range " + std::to_string(count));
    if (filled[id]) malformed(p, lineno, "id " + std::to_string(id) + " assigned twice");
    names[id] = line.substr(0, cut);
    filled[id] = true;
    ++rows;
  }
  if (rows != count)
    malformed(p, lineno, "declared " + std::to_string(count) + " rows, found " + std::to_string(rows));
  for (const auto& n : names) {
    const auto before = entities ? vocab.num_entities() : vocab.num_relations();
    const auto id = entities ? vocab.add_entity(n) : vocab.add_relation(n);
    if (id != before) malformed(p, 0, "duplicate name '" + n + "'");
  }
  return vocab;
}

// Count line, then "h t r" rows.
inline std::vector<Triple> read_triple_file(const std::filesystem::path& p, std::size_t num_entities,
                                            std::size_t num_relations) {
  auto in = open_or_throw(p);
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line)) malformed(p, 1, "empty file, expected a count line");
  strip_cr(line);
  const auto count = parse_count(p, 1, line);
  std::vector<Triple> out;
  out.reserve(count);
  while (std::getline(in, line)) {
    ++lineno;
    strip_cr(line);
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::istringstream ss(line);
    std::int64_t h = -1, t = -1, r = -1;
    if (!(ss >> h >> t >> r)) malformed(p, lineno, "expected 'head tail relation'");
    std::string rest;
    if (ss >> rest) malformed(p, lineno, "unexpected trailing token '" + rest + "'");
    if (h < 0 || t < 0 || static_cast<std::size_t>(h) >= num_entities || static_cast<std::size_t>(t) >= num_entities)
      malformed(p, lineno, "entity id out of declared range " + std::to_string(num_entities));
    if (r < 0 || static_cast<std::size_t>(r) >= num_relations)
      malformed(p, lineno, "relation id out of declared range " + std::to_string(num_relations));
    out.push_back(Triple{static_cast<EntityId>(h), static_cast<RelationId>(r), static_cast<EntityId>(t)});
  }
  if (out.size() != count)
    malformed(p, lineno, "declared " + std::to_string(count) + " rows, found " + std::to_string(out.size()));
  return out;
}

inline std::vector<Triple> read_tsv_split(const std::filesystem::path& p, Vocabulary& vocab) {
  auto in = open_or_throw(p);
  std::string line;
  std::size_t lineno = 0;
  std::vector<Triple> out;
  while (std::getline(in, line)) {
    ++lineno;
    strip_cr(line);
    if (line.empty()) continue;
    const auto a = line.find('\t');
    const auto b = a == std::string::npos ? a : line.find('\t', a + 1);
    if (b == std::string::npos || line.find('\t', b + 1) != std::string::npos)
      malformed(p, lineno, "expected 'head<TAB>relation<TAB>tail'");
    const auto head = std::string_view(line).substr(0, a);
    const auto rel = std::string_view(line).substr(a + 1, b - a - 1);
    const auto tail = std::string_view(line).substr(b + 1);
    if (head.empty() || rel.empty() || tail.empty()) malformed(p, lineno, "empty field");
    Triple t;
    t.head = vocab.add_entity(head);
    t.relation = vocab.add_relation(rel);
    t.tail = vocab.add_entity(tail);
    out.push_back(t);
  }
  return out;
}

}  // namespace detail

inline KnowledgeGraph load_dataset(const std::filesystem::path& dir, DatasetFormat format) {
  if (format == DatasetFormat::kRawTsv) {
    Vocabulary vocab;
    auto train = detail::read_tsv_split(dir / "train.tsv", vocab);
    auto valid = detail::read_tsv_split(dir / "valid.tsv", vocab);
    auto test = detail::read_tsv_split(dir / "test.tsv", vocab);
    return make_graph(std::move(vocab), std::move(train), std::move(valid), std::move(test));
  }
  auto vocab = detail::read_id_file(dir / "entity2id.txt", true, Vocabulary{});
  vocab = detail::read_id_file(dir / "relation2id.txt", false, std::move(vocab));
  const auto ne = vocab.num_entities(), nr = vocab.num_relations();
  auto train = detail::read_triple_file(dir / "train2id.txt", ne, nr);
  auto valid = detail::read_triple_file(dir / "valid2id.txt", ne, nr);
  auto test = detail::read_triple_file(dir / "test2id.txt", ne, nr);
  return make_graph(std::move(vocab), std::move(train), std::move(valid), std::move(test));
}

// Writes the openke-id layout (entity2id, relation2id, {train,valid,test}2id).
inline void save_openke(const KnowledgeGraph& kg, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw DataError("cannot write " + (dir / name).string());
    return out;
  };
  auto write_names = [&](const char* name, const std::vector<std::string>& names) {
    auto out = open(name);
    out << names.size() << '\n';
    for (std::size_t i = 0; i < names.size(); ++i) out << names[i] << '\t' << i << '\n';
  };
  auto write_triples = [&](const char* name, const std::vector<Triple>& triples) {
    auto out = open(name);
    out << triples.size() << '\n';
    for (const auto& t : triples) out << t.head << ' ' << t.tail << ' ' << t.relation << '\n';
  };
  write_names("entity2id.txt", kg.vocab.entity_names());
  write_names("relation2id.txt", kg.vocab.relation_names());
  write_triples("train2id.txt", kg.train);
  write_triples("valid2id.txt", kg.valid);
  write_triples("test2id.txt", kg.test);
}

// ---------------------------------------------------------------------------
// Negative sampling

enum class CorruptionMode { kHead, kTail, kUniformBoth };

struct NegativeBatch {
  Triple positive;
  std::vector<Triple> corruptions;
  // labels[0] is the positive, then one 0 per corruption.
  std::vector<std::uint8_t> labels;
  // Fewer than k corruptions were possible.
  bool exhausted = false;
};

namespace detail {

inline Triple corrupt(const Triple& t, bool head, EntityId e) {
  Triple c = t;
  (head ? c.head : c.tail) = e;
  return c;
}

// Legal replacements for one site: != original and not in train.
inline std::vector<EntityId> legal_replacements(const Triple& t, bool head, const KnowledgeGraph& kg) {
  std::vector<EntityId> out;
  const EntityId orig = head ? t.head : t.tail;
  for (EntityId e = 0; e < kg.num_entities(); ++e)
    if (e != orig && !kg.train_set.contains(corrupt(t, head, e))) out.push_back(e);
  return out;
}

}  // namespace detail

inline constexpr int kNegativeRetries = 64;

// Draws k corruptions of `positive`, replacing head or tail with an entity
// uniform over E \ {original}; corruptions found in the training split are
// resampled. Sites with no legal replacement at all are skipped and flagged.
template <class Rng>
NegativeBatch sample_negatives(const Triple& positive, std::size_t k, CorruptionMode mode, Rng& rng,
                               const KnowledgeGraph& kg) {
  if (k < 1) throw ConfigError("sample_negatives: k must be >= 1");
  const auto n = kg.num_entities();
  if (n < 2) throw ConfigError("sample_negatives: need at least two entities");

  NegativeBatch batch;
  batch.positive = positive;
  batch.corruptions.reserve(k);
  std::uniform_int_distribution<EntityId> pick(0, static_cast<EntityId>(n - 2));
  std::bernoulli_distribution coin(0.5);
  // Sites proven to have no legal replacement (0 head, 1 tail).
  bool dead[2] = {false, false};
  std::vector<EntityId> fallback[2];
  bool fallback_ready[2] = {false, false};

  std::size_t slots = 0;
  while (slots < k) {
    bool head = mode == CorruptionMode::kHead || (mode == CorruptionMode::kUniformBoth && coin(rng));
    if (mode == CorruptionMode::kUniformBoth && dead[head ? 0 : 1]) head = !head;
    const int site = head ? 0 : 1;
    if (dead[site]) {
      batch.exhausted = true;
      ++slots;
      continue;
    }
    const EntityId orig = head ? positive.head : positive.tail;
    bool accepted = false;
    for (int attempt = 0; attempt < kNegativeRetries && !accepted; ++attempt) {
      EntityId e = pick(rng);
      if (e >= orig) ++e;
      const Triple c = detail::corrupt(positive, head, e);
      if (!kg.train_set.contains(c)) {
        batch.corruptions.push_back(c);
        accepted = true;
      }
    }
    if (!accepted) {
      if (!fallback_ready[site]) {
        fallback[site] = detail::legal_replacements(positive, head, kg);
        fallback_ready[site] = true;
      }
      if (fallback[site].empty()) {
        dead[site] = true;
        spdlog::warn("no legal corruption for ({}, {}, {}) at the {} site", positive.head, positive.relation,
                     positive.tail, head ? "head" : "tail");
        continue;  // the slot is retried, possibly on the other site
      }
      std::uniform_int_distribution<std::size_t> pick_legal(0, fallback[site].size() - 1);
      batch.corruptions.push_back(detail::corrupt(positive, head, fallback[site][pick_legal(rng)]));
    }
    ++slots;
  }
  batch.labels.assign(1 + batch.corruptions.size(), 0);
  batch.labels[0] = 1;
  return batch;
}

// One sampler per worker; owns its generator.
class NegativeSampler {
 public:
  NegativeSampler(const KnowledgeGraph& kg, CorruptionMode mode, std::uint64_t seed)
      : kg_(&kg), mode_(mode), rng_(seed) {}

  NegativeBatch operator()(const Triple& positive, std::size_t k) {
    return sample_negatives(positive, k, mode_, rng_, *kg_);
  }

  std::mt19937_64& rng() noexcept { return rng_; }

 private:
  const KnowledgeGraph* kg_;
  CorruptionMode mode_;
  std::mt19937_64 rng_;
};

}  // namespace dualde
