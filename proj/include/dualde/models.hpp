#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dualde/error.hpp"
#include "dualde/kg_data.hpp"

namespace dualde {

enum class Family : std::uint32_t { kTransE = 0, kSimplE = 1, kComplEx = 2, kRotatE = 3 };

inline constexpr Family kAllFamilies[] = {Family::kTransE, Family::kSimplE, Family::kComplEx, Family::kRotatE};

inline std::string_view family_name(Family f) {
  switch (f) {
    case Family::kTransE: return "TransE";
    case Family::kSimplE: return "SimplE";
    case Family::kComplEx: return "ComplEx";
    case Family::kRotatE: return "RotatE";
  }
  return "?";
}

inline std::optional<Family> parse_family(std::string_view s) {
  std::string lower(s);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "transe") return Family::kTransE;
  if (lower == "simple") return Family::kSimplE;
  if (lower == "complex") return Family::kComplEx;
  if (lower == "rotate") return Family::kRotatE;
  return std::nullopt;
}

struct ModelFamily {
  Family tag = Family::kTransE;
  // TransE distance norm, 1 or 2.
  int p_norm = 2;
  // RotatE uses -||h o r - t||^2; false selects the unsquared distance.
  bool rotate_squared = true;

  friend bool operator==(const ModelFamily&, const ModelFamily&) = default;
};

// Entity and relation tables for one model. Row layouts:
//   TransE   entity d reals,                  relation d reals
//   ComplEx  entity d complex (re,im pairs),  relation d complex
//   RotatE   entity d complex (re,im pairs),  relation d phases
//   SimplE   entity [h^(H) | h^(T)],          relation [r | r^(inv)]
template <class T>
struct BasicModelParams {
  using value_type = T;

  ModelFamily family;
  std::size_t dim = 0;
  std::size_t num_entities = 0;
  std::size_t num_relations = 0;
  std::uint64_t seed = 0;
  std::vector<T> entities;
  std::vector<T> relations;

  static std::size_t entity_width_for(Family f, std::size_t dim) {
    return f == Family::kTransE ? dim : 2 * dim;
  }
  static std::size_t relation_width_for(Family f, std::size_t dim) {
    return (f == Family::kTransE || f == Family::kRotatE) ? dim : 2 * dim;
  }

  std::size_t entity_width() const noexcept { return entity_width_for(family.tag, dim); }
  std::size_t relation_width() const noexcept { return relation_width_for(family.tag, dim); }

  std::span<const T> entity(EntityId id) const {
    check_entity(id);
    return {entities.data() + std::size_t{id} * entity_width(), entity_width()};
  }
  std::span<T> entity(EntityId id) {
    check_entity(id);
    return {entities.data() + std::size_t{id} * entity_width(), entity_width()};
  }
  std::span<const T> relation(RelationId id) const {
    check_relation(id);
    return {relations.data() + std::size_t{id} * relation_width(), relation_width()};
  }
  std::span<T> relation(RelationId id) {
    check_relation(id);
    return {relations.data() + std::size_t{id} * relation_width(), relation_width()};
  }

  void check_entity(EntityId id) const {
    if (id >= num_entities) throw std::out_of_range("entity id " + std::to_string(id) + " out of range");
  }
  void check_relation(RelationId id) const {
    if (id >= num_relations) throw std::out_of_range("relation id " + std::to_string(id) + " out of range");
  }
  void check_triple(const Triple& t) const {
    check_entity(t.head);
    check_entity(t.tail);
    check_relation(t.relation);
  }

  bool all_finite() const {
    auto finite = [](T v) { return std::isfinite(v); };
    return std::all_of(entities.begin(), entities.end(), finite) &&
           std::all_of(relations.begin(), relations.end(), finite);
  }

  template <class U>
  BasicModelParams<U> cast() const {
    BasicModelParams<U> out;
    out.family = family;
    out.dim = dim;
    out.num_entities = num_entities;
    out.num_relations = num_relations;
    out.seed = seed;
    out.entities.assign(entities.begin(), entities.end());
    out.relations.assign(relations.begin(), relations.end());
    return out;
  }
};

using ModelParams = BasicModelParams<float>;

// Entity/relation tables ~ U[-6/sqrt(d), 6/sqrt(d)]; RotatE phases ~ U[0, 2pi).
template <class T = float>
BasicModelParams<T> init_params(ModelFamily family, std::size_t dim, std::size_t num_entities,
                                std::size_t num_relations, std::uint64_t seed) {
  if (dim < 1) throw ConfigError("init_params: dim must be >= 1");
  if (num_entities == 0 || num_relations == 0) throw DataError("init_params: graph has no entities or relations");
  if (family.tag == Family::kTransE && family.p_norm != 1 && family.p_norm != 2)
    throw ConfigError("init_params: TransE p-norm must be 1 or 2");
  BasicModelParams<T> p;
  p.family = family;
  p.dim = dim;
  p.num_entities = num_entities;
  p.num_relations = num_relations;
  p.seed = seed;
  p.entities.resize(num_entities * p.entity_width());
  p.relations.resize(num_relations * p.relation_width());

  std::mt19937_64 rng(seed);
  const double bound = 6.0 / std::sqrt(static_cast<double>(dim));
  std::uniform_real_distribution<double> uni(-bound, bound);
  for (auto& v : p.entities) v = static_cast<T>(uni(rng));
  if (family.tag == Family::kRotatE) {
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    for (auto& v : p.relations) v = static_cast<T>(phase(rng));
  } else {
    for (auto& v : p.relations) v = static_cast<T>(uni(rng));
  }
  return p;
}

// Row-sparse gradient accumulator. Rows are zero on first touch and kept in
// first-touch order, so merges and optimizer steps are deterministic.
class SparseRows {
 public:
  SparseRows() = default;
  explicit SparseRows(std::size_t width) : width_(width) {}

  std::size_t width() const noexcept { return width_; }
  std::size_t size() const noexcept { return ids_.size(); }
  bool empty() const noexcept { return ids_.empty(); }

  // Slot index for `id`, allocating a zero row if needed. Slots stay valid;
  // spans from at() are invalidated by the next allocation.
  std::size_t slot(std::uint32_t id) {
    auto [it, inserted] = slots_.try_emplace(id, ids_.size());
    if (inserted) {
      ids_.push_back(id);
      values_.resize(values_.size() + width_, 0.0);
    }
    return it->second;
  }

  std::span<double> at(std::size_t slot) { return {values_.data() + slot * width_, width_}; }
  std::span<const double> at(std::size_t slot) const { return {values_.data() + slot * width_, width_}; }
  std::span<double> row(std::uint32_t id) { return at(slot(id)); }

  // Empty span when the row was never touched.
  std::span<const double> find(std::uint32_t id) const {
    auto it = slots_.find(id);
    if (it == slots_.end()) return {};
    return at(it->second);
  }

  std::uint32_t id_at(std::size_t slot) const { return ids_[slot]; }
  std::span<const std::uint32_t> ids() const noexcept { return ids_; }

  void add(const SparseRows& other, double scale = 1.0) {
    for (std::size_t s = 0; s < other.size(); ++s) {
      auto dst = row(other.ids_[s]);
      auto src = other.at(s);
      for (std::size_t i = 0; i < width_; ++i) dst[i] += scale * src[i];
    }
  }

  void clear() {
    ids_.clear();
    values_.clear();
    slots_.clear();
  }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
  }

 private:
  std::size_t width_ = 0;
  std::vector<std::uint32_t> ids_;
  std::vector<double> values_;
  std::unordered_map<std::uint32_t, std::size_t> slots_;
};

struct ParamGrad {
  SparseRows entities;
  SparseRows relations;

  ParamGrad() = default;
  template <class T>
  explicit ParamGrad(const BasicModelParams<T>& p) : entities(p.entity_width()), relations(p.relation_width()) {}

  bool empty() const noexcept { return entities.empty() && relations.empty(); }
  void clear() {
    entities.clear();
    relations.clear();
  }
};

struct ScoreBatch {
  std::vector<Triple> triples;
  std::vector<double> scores;
};

namespace detail {

template <class T>
double transe_score(std::span<const T> h, std::span<const T> r, std::span<const T> t, int p) {
  double acc = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double x = double(h[i]) + double(r[i]) - double(t[i]);
    acc += p == 1 ? std::abs(x) : x * x;
  }
  return p == 1 ? -acc : -std::sqrt(acc);
}

template <class T>
double complex_score(std::span<const T> h, std::span<const T> r, std::span<const T> t) {
  double acc = 0.0;
  for (std::size_t i = 0; i < h.size(); i += 2) {
    const double a = h[i], b = h[i + 1], c = r[i], s = r[i + 1], u = t[i], v = t[i + 1];
    acc += a * c * u + b * c * v + a * s * v - b * s * u;
  }
  return acc;
}

template <class T>
double rotate_distance_sq(std::span<const T> h, std::span<const T> phase, std::span<const T> t) {
  double acc = 0.0;
  for (std::size_t i = 0; i < phase.size(); ++i) {
    const double a = h[2 * i], b = h[2 * i + 1], u = t[2 * i], v = t[2 * i + 1];
    const double c = std::cos(double(phase[i])), s = std::sin(double(phase[i]));
    const double xr = a * c - b * s - u;
    const double xi = a * s + b * c - v;
    acc += xr * xr + xi * xi;
  }
  return acc;
}

template <class T>
double simple_score(std::span<const T> h, std::span<const T> r, std::span<const T> t, std::size_t d) {
  double fwd = 0.0, inv = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    fwd += double(h[i]) * double(r[i]) * double(t[d + i]);
    inv += double(t[i]) * double(r[d + i]) * double(h[d + i]);
  }
  return 0.5 * (fwd + inv);
}

}  // namespace detail

// Plausibility of one triple; higher is more plausible.
template <class T>
double score_triple(const BasicModelParams<T>& p, const Triple& tr) {
  p.check_triple(tr);
  const auto h = p.entity(tr.head);
  const auto r = p.relation(tr.relation);
  const auto t = p.entity(tr.tail);
  switch (p.family.tag) {
    case Family::kTransE: return detail::transe_score(h, r, t, p.family.p_norm);
    case Family::kComplEx: return detail::complex_score(h, r, t);
    case Family::kRotatE: {
      const double sq = detail::rotate_distance_sq(h, r, t);
      return p.family.rotate_squared ? -sq : -std::sqrt(sq);
    }
    case Family::kSimplE: return detail::simple_score(h, r, t, p.dim);
  }
  return 0.0;
}

template <class T>
ScoreBatch score(const BasicModelParams<T>& p, std::span<const Triple> batch) {
  ScoreBatch out;
  out.triples.assign(batch.begin(), batch.end());
  out.scores.reserve(batch.size());
  for (const auto& tr : batch) out.scores.push_back(score_triple(p, tr));
  return out;
}

// Accumulates upstream * d(score)/d(params) for one triple.
template <class T>
void backward_triple(const BasicModelParams<T>& p, const Triple& tr, double score_value, double upstream,
                     ParamGrad& grad) {
  if (upstream == 0.0) return;
  p.check_triple(tr);
  const auto h = p.entity(tr.head);
  const auto r = p.relation(tr.relation);
  const auto t = p.entity(tr.tail);
  const std::size_t hs = grad.entities.slot(tr.head);
  const std::size_t ts = grad.entities.slot(tr.tail);
  const std::size_t rs = grad.relations.slot(tr.relation);
  auto gh = grad.entities.at(hs);
  auto gt = grad.entities.at(ts);
  auto gr = grad.relations.at(rs);
  const double g = upstream;

  switch (p.family.tag) {
    case Family::kTransE: {
      if (p.family.p_norm == 1) {
        for (std::size_t i = 0; i < h.size(); ++i) {
          const double x = double(h[i]) + double(r[i]) - double(t[i]);
          const double sgn = x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0);
          gh[i] -= g * sgn;
          gr[i] -= g * sgn;
          gt[i] += g * sgn;
        }
      } else {
        const double norm = -score_value;
        if (norm == 0.0) return;
        const double c = -g / norm;
        for (std::size_t i = 0; i < h.size(); ++i) {
          const double x = double(h[i]) + double(r[i]) - double(t[i]);
          gh[i] += c * x;
          gr[i] += c * x;
          gt[i] -= c * x;
        }
      }
      return;
    }
    case Family::kComplEx: {
      for (std::size_t i = 0; i < h.size(); i += 2) {
        const double a = h[i], b = h[i + 1], c = r[i], s = r[i + 1], u = t[i], v = t[i + 1];
        gh[i] += g * (c * u + s * v);
        gh[i + 1] += g * (c * v - s * u);
        gr[i] += g * (a * u + b * v);
        gr[i + 1] += g * (a * v - b * u);
        gt[i] += g * (a * c - b * s);
        gt[i + 1] += g * (a * s + b * c);
      }
      return;
    }
    case Family::kRotatE: {
      // score = -S (squared) or -sqrt(S); k = d(score)/dS.
      double k = -g;
      if (!p.family.rotate_squared) {
        const double dist = -score_value;
        if (dist == 0.0) return;
        k = -g / (2.0 * dist);
      }
      for (std::size_t i = 0; i < r.size(); ++i) {
        const double a = h[2 * i], b = h[2 * i + 1], u = t[2 * i], v = t[2 * i + 1];
        const double c = std::cos(double(r[i])), s = std::sin(double(r[i]));
        const double dxr = 2.0 * (a * c - b * s - u);
        const double dxi = 2.0 * (a * s + b * c - v);
        gh[2 * i] += k * (dxr * c + dxi * s);
        gh[2 * i + 1] += k * (-dxr * s + dxi * c);
        gt[2 * i] -= k * dxr;
        gt[2 * i + 1] -= k * dxi;
        gr[i] += k * (dxr * (-a * s - b * c) + dxi * (a * c - b * s));
      }
      return;
    }
    case Family::kSimplE: {
      const std::size_t d = p.dim;
      const double hg = 0.5 * g;
      for (std::size_t i = 0; i < d; ++i) {
        const double hH = h[i], hT = h[d + i], tH = t[i], tT = t[d + i], rf = r[i], ri = r[d + i];
        gh[i] += hg * rf * tT;
        gt[d + i] += hg * hH * rf;
        gr[i] += hg * hH * tT;
        gt[i] += hg * ri * hT;
        gr[d + i] += hg * tH * hT;
        gh[d + i] += hg * tH * ri;
      }
      return;
    }
  }
}

// Gradient of sum_i upstream[i] * score_i, accumulated into `grad`.
template <class T>
void score_backward(const BasicModelParams<T>& p, const ScoreBatch& forward, std::span<const double> upstream,
                    ParamGrad& grad) {
  if (forward.scores.size() != forward.triples.size())
    throw std::logic_error("score_backward: missing forward cache");
  if (upstream.size() != forward.scores.size())
    throw std::invalid_argument("score_backward: upstream length does not match the forward batch");
  if (grad.entities.width() != p.entity_width() || grad.relations.width() != p.relation_width()) {
    if (!grad.empty()) throw std::invalid_argument("score_backward: gradient buffer shaped for another model");
    grad = ParamGrad(p);
  }
  for (std::size_t i = 0; i < upstream.size(); ++i)
    backward_triple(p, forward.triples[i], forward.scores[i], upstream[i], grad);
}

// Real vector compared by the structure loss: the entity row itself (see the
// layout table above).
template <class T>
std::span<const T> entity_view(const BasicModelParams<T>& p, EntityId id) {
  return p.entity(id);
}

}  // namespace dualde
