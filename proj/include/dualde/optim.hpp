#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include <spdlog/spdlog.h>

#include "dualde/models.hpp"

namespace dualde {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam over one model's tables plus a handful of dense scalars (the gates a
// side owns). Embedding rows are updated lazily: moments and bias correction
// advance only when the row has a gradient, so updates to disjoint rows
// commute. Scalars use the global step count.
class AdamState {
 public:
  AdamState() = default;

  template <class T>
  AdamState(const BasicModelParams<T>& params, std::size_t num_scalars, AdamConfig config)
      : config_(config),
        m_ent_(params.entities.size(), 0.0),
        v_ent_(params.entities.size(), 0.0),
        m_rel_(params.relations.size(), 0.0),
        v_rel_(params.relations.size(), 0.0),
        m_scalar_(num_scalars, 0.0),
        v_scalar_(num_scalars, 0.0),
        t_ent_(params.num_entities, 0),
        t_rel_(params.num_relations, 0) {}

  double lr() const noexcept { return config_.lr; }
  void set_lr(double lr) noexcept { config_.lr = lr; }
  const AdamConfig& config() const noexcept { return config_; }
  std::uint64_t steps() const noexcept { return step_; }
  std::uint64_t skipped() const noexcept { return skipped_; }

  // Applies one update. Returns false (and leaves everything untouched apart
  // from the skip counter) when the gradient holds a non-finite value.
  template <class T>
  bool step(BasicModelParams<T>& params, const ParamGrad& grad, std::span<double> scalars = {},
            std::span<const double> scalar_grad = {}) {
    if (!grad.entities.all_finite() || !grad.relations.all_finite() || !all_finite(scalar_grad)) {
      ++skipped_;
      spdlog::warn("adam: non-finite gradient, step skipped ({} so far)", skipped_);
      return false;
    }
    ++step_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
    apply_rows(grad.entities, params.entities, m_ent_, v_ent_, t_ent_);
    apply_rows(grad.relations, params.relations, m_rel_, v_rel_, t_rel_);
    for (std::size_t i = 0; i < scalars.size() && i < m_scalar_.size(); ++i) {
      const double g = i < scalar_grad.size() ? scalar_grad[i] : 0.0;
      scalars[i] -= update(g, m_scalar_[i], v_scalar_[i], bc1, bc2);
    }
    return true;
  }

 private:
  double update(double g, double& m, double& v, double bc1, double bc2) const {
    m = config_.beta1 * m + (1.0 - config_.beta1) * g;
    v = config_.beta2 * v + (1.0 - config_.beta2) * g * g;
    return config_.lr * (m / bc1) / (std::sqrt(v / bc2) + config_.eps);
  }

  template <class T>
  void apply_rows(const SparseRows& rows, std::vector<T>& table, std::vector<double>& m, std::vector<double>& v,
                  std::vector<std::uint64_t>& row_steps) const {
    const std::size_t w = rows.width();
    for (std::size_t s = 0; s < rows.size(); ++s) {
      const auto t = static_cast<double>(++row_steps[rows.id_at(s)]);
      const double bc1 = 1.0 - std::pow(config_.beta1, t);
      const double bc2 = 1.0 - std::pow(config_.beta2, t);
      const std::size_t base = std::size_t{rows.id_at(s)} * w;
      const auto g = rows.at(s);
      for (std::size_t k = 0; k < w; ++k)
        table[base + k] = static_cast<T>(double(table[base + k]) - update(g[k], m[base + k], v[base + k], bc1, bc2));
    }
  }

  static bool all_finite(std::span<const double> xs) {
    for (double x : xs)
      if (!std::isfinite(x)) return false;
    return true;
  }

  AdamConfig config_;
  std::vector<double> m_ent_, v_ent_, m_rel_, v_rel_, m_scalar_, v_scalar_;
  std::vector<std::uint64_t> t_ent_, t_rel_;
  std::uint64_t step_ = 0;
  std::uint64_t skipped_ = 0;
};

// Multiplies the learning rate by `factor` whenever the monitored metric has
// not improved for `patience` consecutive checkpoints.
struct PlateauState {
  double lr = 1e-3;
  double factor = 0.96;
  int patience = 10;
  double best = -std::numeric_limits<double>::infinity();
  int since_best = 0;

  // Returns true when this checkpoint triggered a decay.
  bool observe(double metric) {
    if (metric > best) {
      best = metric;
      since_best = 0;
      return false;
    }
    if (++since_best >= patience) {
      lr *= factor;
      since_best = 0;
      return true;
    }
    return false;
  }
};

// Counts validation checkpoints since the metric last improved.
struct Patience {
  int limit = 10;
  double best = -std::numeric_limits<double>::infinity();
  int since_best = 0;

  // True once `limit` consecutive checkpoints failed to improve.
  bool observe(double metric) {
    if (metric > best) {
      best = metric;
      since_best = 0;
      return false;
    }
    return ++since_best >= limit;
  }
};

// Feeds a validation trace through the plateau rule; returns the resulting rate.
inline double lr_schedule(PlateauState& state, std::span<const double> validation_mrr_trace) {
  for (double mrr : validation_mrr_trace) state.observe(mrr);
  return state.lr;
}

}  // namespace dualde
