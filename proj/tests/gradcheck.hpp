#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <set>
#include <span>
#include <vector>

#include "dualde/models.hpp"
#include "test_util.hpp"

namespace dualde::testkit {

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  // Coordinates where the one-sided differences disagree (a kink within eps).
  std::size_t skipped = 0;

  void merge(const GradCheck& o) {
    max_rel_error = std::max(max_rel_error, o.max_rel_error);
    checked += o.checked;
    skipped += o.skipped;
  }
};

// Compares `analytic` against central differences of `loss` for one scalar
// held at `x`. A coordinate is skipped when the forward and backward
// one-sided slopes differ by more than 10% (the function is not
// differentiable within eps of x).
inline void check_scalar(double& x, double analytic, double eps, const std::function<double()>& loss, GradCheck& out) {
  const double saved = x;
  const double f0 = loss();
  x = saved + eps;
  const double up = loss();
  x = saved - eps;
  const double down = loss();
  x = saved;
  const double fwd = (up - f0) / eps, bwd = (f0 - down) / eps;
  if (std::abs(fwd - bwd) > 0.1 * std::max({std::abs(fwd), std::abs(bwd), 1e-3})) {
    ++out.skipped;
    return;
  }
  const double numeric = (up - down) / (2.0 * eps);
  out.max_rel_error = std::max(out.max_rel_error, relative_error(analytic, numeric));
  ++out.checked;
}

// Checks every coordinate of every entity and relation row the triples
// touch. Rows absent from `grad` are expected to have zero gradient.
inline GradCheck check_params(BasicModelParams<double>& p, const ParamGrad& grad, std::span<const Triple> triples,
                              double eps, const std::function<double()>& loss) {
  std::set<EntityId> ents;
  std::set<RelationId> rels;
  for (const auto& t : triples) {
    ents.insert(t.head);
    ents.insert(t.tail);
    rels.insert(t.relation);
  }
  GradCheck out;
  const std::size_t ew = p.entity_width(), rw = p.relation_width();
  for (EntityId e : ents) {
    const auto g = grad.entities.find(e);
    for (std::size_t k = 0; k < ew; ++k)
      check_scalar(p.entities[std::size_t{e} * ew + k], g.empty() ? 0.0 : g[k], eps, loss, out);
  }
  for (RelationId r : rels) {
    const auto g = grad.relations.find(r);
    for (std::size_t k = 0; k < rw; ++k)
      check_scalar(p.relations[std::size_t{r} * rw + k], g.empty() ? 0.0 : g[k], eps, loss, out);
  }
  return out;
}

}  // namespace dualde::testkit
