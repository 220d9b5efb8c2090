#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dualde/kg_data.hpp"
#include "dualde/models.hpp"

namespace dualde {

// Batched (h, r, ?) scoring against every entity. Each family is rewritten
// as one matrix product Q * E^T plus an elementwise epilogue:
//   ComplEx  Re(<h o r, conj t>)           = q . t,  q = h o r
//   RotatE   -||h o r - t||^2              = -(|q|^2 + |t|^2 - 2 q . t)
//   TransE   -||h + r - t||_2              = -sqrt(|q|^2 + |t|^2 - 2 q . t)
//   SimplE   (<hH,r,tT> + <tH,rinv,hT>)/2  = q . [tH | tT],  q = [rinv o hT, hH o r]/2
// TransE with the L1 norm has no product form and is scored directly.
class TailPredictor {
 public:
  using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  explicit TailPredictor(const ModelParams& params)
      : params_(&params),
        table_(params.entities.data(), static_cast<Eigen::Index>(params.num_entities),
               static_cast<Eigen::Index>(params.entity_width())) {
    if (needs_norms()) sq_norms_ = table_.rowwise().squaredNorm();
  }

  std::size_t num_entities() const { return params_->num_entities; }

  // scores(i, j) = f(queries[i].head, queries[i].relation, first + j).
  void score(std::span<const Triple> queries, std::size_t first, std::size_t count, RowMatrix& scores) {
    const auto& p = *params_;
    const auto b = static_cast<Eigen::Index>(queries.size());
    const auto w = static_cast<Eigen::Index>(p.entity_width());
    const auto c = static_cast<Eigen::Index>(count);
    scores.resize(b, c);

    if (p.family.tag == Family::kTransE && p.family.p_norm == 1) {
      for (Eigen::Index i = 0; i < b; ++i) {
        const auto h = p.entity(queries[i].head);
        const auto r = p.relation(queries[i].relation);
        Eigen::VectorXf q(w);
        for (Eigen::Index k = 0; k < w; ++k) q[k] = h[k] + r[k];
        for (Eigen::Index j = 0; j < c; ++j)
          scores(i, j) = -(table_.row(static_cast<Eigen::Index>(first) + j).transpose() - q).lpNorm<1>();
      }
      return;
    }

    q_.resize(b, w);
    for (Eigen::Index i = 0; i < b; ++i) build_query(queries[i], q_.row(i));
    scores.noalias() = q_ * table_.middleRows(static_cast<Eigen::Index>(first), c).transpose();

    if (!needs_norms()) return;
    const Eigen::VectorXf q_norms = q_.rowwise().squaredNorm();
    const bool take_root = p.family.tag == Family::kTransE || !p.family.rotate_squared;
    for (Eigen::Index i = 0; i < b; ++i) {
      for (Eigen::Index j = 0; j < c; ++j) {
        const float sq = std::max(0.0f, q_norms[i] + sq_norms_[static_cast<Eigen::Index>(first) + j] - 2.0f * scores(i, j));
        scores(i, j) = take_root ? -std::sqrt(sq) : -sq;
      }
    }
  }

 private:
  bool needs_norms() const {
    return params_->family.tag == Family::kTransE || params_->family.tag == Family::kRotatE;
  }

  template <class Row>
  void build_query(const Triple& t, Row&& q) const {
    const auto& p = *params_;
    const auto h = p.entity(t.head);
    const auto r = p.relation(t.relation);
    const std::size_t d = p.dim;
    switch (p.family.tag) {
      case Family::kTransE:
        for (std::size_t k = 0; k < d; ++k) q[k] = h[k] + r[k];
        break;
      case Family::kComplEx:
        for (std::size_t k = 0; k < d; ++k) {
          const float a = h[2 * k], bb = h[2 * k + 1], c = r[2 * k], s = r[2 * k + 1];
          q[2 * k] = a * c - bb * s;
          q[2 * k + 1] = a * s + bb * c;
        }
        break;
      case Family::kRotatE:
        for (std::size_t k = 0; k < d; ++k) {
          const float a = h[2 * k], bb = h[2 * k + 1], c = std::cos(r[k]), s = std::sin(r[k]);
          q[2 * k] = a * c - bb * s;
          q[2 * k + 1] = a * s + bb * c;
        }
        break;
      case Family::kSimplE:
        for (std::size_t k = 0; k < d; ++k) {
          q[k] = 0.5f * r[d + k] * h[d + k];
          q[d + k] = 0.5f * h[k] * r[k];
        }
        break;
    }
  }

  const ModelParams* params_;
  Eigen::Map<const RowMatrix> table_;
  Eigen::VectorXf sq_norms_;
  RowMatrix q_;
};

struct BenchReport {
  std::string family;
  std::size_t dim = 0;
  std::size_t queries = 0;
  std::size_t candidates_scored = 0;
  std::size_t batch_size = 0;
  int repetitions = 0;
  std::vector<double> sweep_seconds;
  double mean_seconds = 0.0;
  // reference.mean_seconds / mean_seconds; 1 when no reference is given.
  double speedup = 1.0;
  // Unfiltered tail MRR of the sweep; keeps the work observable.
  double raw_tail_mrr = 0.0;
};

namespace detail {

inline double tail_sweep(TailPredictor& predictor, std::span<const Triple> queries, std::size_t batch_size) {
  constexpr std::size_t kQueryBlock = 64;
  const std::size_t n = predictor.num_entities();
  TailPredictor::RowMatrix chunk, all;
  double mrr = 0.0;
  for (std::size_t q0 = 0; q0 < queries.size(); q0 += kQueryBlock) {
    const auto block = queries.subspan(q0, std::min(kQueryBlock, queries.size() - q0));
    all.resize(static_cast<Eigen::Index>(block.size()), static_cast<Eigen::Index>(n));
    for (std::size_t c0 = 0; c0 < n; c0 += batch_size) {
      const std::size_t count = std::min(batch_size, n - c0);
      predictor.score(block, c0, count, chunk);
      all.middleCols(static_cast<Eigen::Index>(c0), static_cast<Eigen::Index>(count)) = chunk;
    }
    for (std::size_t i = 0; i < block.size(); ++i) {
      const auto row = all.row(static_cast<Eigen::Index>(i));
      const float target = row[static_cast<Eigen::Index>(block[i].tail)];
      const auto greater = static_cast<double>((row.array() > target).count());
      const auto equal = static_cast<double>((row.array() == target).count());
      mrr += 1.0 / (1.0 + greater + 0.5 * (equal - 1.0));
    }
  }
  return queries.empty() ? 0.0 : mrr / static_cast<double>(queries.size());
}

}  // namespace detail

// Times full tail-prediction sweeps over `queries` (every entity scored as a
// candidate tail, `batch_size` candidates per product). One warm-up sweep is
// discarded; `repetitions` timed sweeps are averaged.
inline BenchReport bench_inference(const ModelParams& params, std::span<const Triple> queries, std::size_t batch_size,
                                   int repetitions, const BenchReport* reference = nullptr) {
  if (repetitions < 1) throw ConfigError("bench_inference: repetitions must be >= 1");
  if (batch_size == 0) batch_size = params.num_entities;
  BenchReport report;
  report.family = std::string(family_name(params.family.tag));
  report.dim = params.dim;
  report.queries = queries.size();
  report.candidates_scored = queries.size() * params.num_entities;
  report.batch_size = batch_size;
  report.repetitions = repetitions;

  using Clock = std::chrono::steady_clock;
  for (int rep = -1; rep < repetitions; ++rep) {
    const auto start = Clock::now();
    TailPredictor predictor(params);
    const double mrr = detail::tail_sweep(predictor, queries, batch_size);
    const double secs = std::chrono::duration<double>(Clock::now() - start).count();
    if (rep < 0) continue;
    report.sweep_seconds.push_back(secs);
    report.raw_tail_mrr = mrr;
  }
  report.mean_seconds = 0.0;
  for (double s : report.sweep_seconds) report.mean_seconds += s;
  report.mean_seconds /= static_cast<double>(report.sweep_seconds.size());
  if (reference != nullptr && report.mean_seconds > 0.0) report.speedup = reference->mean_seconds / report.mean_seconds;
  return report;
}

inline BenchReport bench_inference(const ModelParams& params, const KnowledgeGraph& kg, std::size_t batch_size,
                                   int repetitions, const BenchReport* reference = nullptr) {
  return bench_inference(params, std::span<const Triple>(kg.test), batch_size, repetitions, reference);
}

}  // namespace dualde
