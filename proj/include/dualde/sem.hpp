#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "dualde/error.hpp"
#include "dualde/losses.hpp"

namespace dualde {

enum class Polarity { kPositive, kNegative };
enum class Side { kStudent, kTeacher };
enum class Stage { kOne = 1, kTwo = 2 };

inline Polarity polarity_of(std::uint8_t label) { return label ? Polarity::kPositive : Polarity::kNegative; }

// One sigmoid gate sigma(alpha * (score + beta)).
struct GatePair {
  double alpha = 1.0;
  double beta = 0.0;

  friend bool operator==(const GatePair&, const GatePair&) = default;
};

// The two gates read by one side: (alpha1, beta1), (alpha2, beta2) for the
// student; (alpha3, beta3), (alpha4, beta4) for the teacher.
struct SideGates {
  GatePair positive;
  GatePair negative;

  friend bool operator==(const SideGates&, const SideGates&) = default;

  std::array<double, 4> flat() const { return {positive.alpha, positive.beta, negative.alpha, negative.beta}; }
  static SideGates from_flat(std::span<const double, 4> v) { return {{v[0], v[1]}, {v[2], v[3]}}; }
};

struct SemGate {
  SideGates student;
  SideGates teacher;

  friend bool operator==(const SemGate&, const SemGate&) = default;

  const SideGates& side(Side s) const { return s == Side::kStudent ? student : teacher; }
  SideGates& side(Side s) { return s == Side::kStudent ? student : teacher; }

  // alpha1, beta1, alpha2, beta2, alpha3, beta3, alpha4, beta4
  std::array<double, 8> flat() const {
    return {student.positive.alpha, student.positive.beta, student.negative.alpha, student.negative.beta,
            teacher.positive.alpha, teacher.positive.beta, teacher.negative.alpha, teacher.negative.beta};
  }
  static SemGate from_flat(std::span<const double, 8> v) {
    return {{{v[0], v[1]}, {v[2], v[3]}}, {{v[4], v[5]}, {v[6], v[7]}}};
  }
};

// Soft-label weight for a triple given the other side's (the grader's) score.
// Positive triples: sigma(alpha1 (f + beta1)). Negative triples:
// 1 - sigma(alpha2 (f + beta2)), so a negative the grader scores high gets
// little soft weight.
inline double soft_weight(const SideGates& gates, double grader_score, Polarity polarity) {
  const GatePair& g = polarity == Polarity::kPositive ? gates.positive : gates.negative;
  const double z = g.alpha * (grader_score + g.beta);
  return polarity == Polarity::kPositive ? sigmoid(z) : sigmoid(-z);
}

// d soft_weight / d(alpha, beta) of the gate selected by `polarity`.
inline GatePair soft_weight_grad(const SideGates& gates, double grader_score, Polarity polarity) {
  const GatePair& g = polarity == Polarity::kPositive ? gates.positive : gates.negative;
  const double s = sigmoid(g.alpha * (grader_score + g.beta));
  const double dz = (polarity == Polarity::kPositive ? 1.0 : -1.0) * s * (1.0 - s);
  return {dz * (grader_score + g.beta), dz * g.alpha};
}

// How soft weights are produced: learned gates, or one constant p for every
// triple (the fixed-weight ablation).
struct WeightPolicy {
  bool adaptive = true;
  double fixed_p = 0.5;

  static WeightPolicy fixed(double p) { return {false, p}; }
};

struct TripleWeight {
  double soft = 0.5;
  double hard = 0.5;
  Polarity polarity = Polarity::kPositive;
  Side grader = Side::kTeacher;
};

using WeightedBatch = std::vector<TripleWeight>;

// Weights for the side being trained (`trained`); the grader is the other side.
inline WeightedBatch weigh_batch(Side trained, std::span<const std::uint8_t> labels,
                                 std::span<const double> grader_scores, const SideGates& gates,
                                 const WeightPolicy& policy = {}) {
  if (labels.size() != grader_scores.size()) throw std::invalid_argument("weigh_batch: length mismatch");
  WeightedBatch out(labels.size());
  const Side grader = trained == Side::kStudent ? Side::kTeacher : Side::kStudent;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto pol = polarity_of(labels[i]);
    const double p = policy.adaptive ? soft_weight(gates, grader_scores[i], pol) : policy.fixed_p;
    out[i] = TripleWeight{p, 1.0 - p, pol, grader};
  }
  return out;
}

struct WeightedLoss {
  double soft = 0.0;  // sum p * d_soft
  double hard = 0.0;  // sum (1 - p) * BCE
  double total() const { return soft + hard; }
};

namespace detail {

inline WeightedLoss weighted_loss(Side trained, std::span<const std::uint8_t> labels,
                                  std::span<const double> teacher_scores, std::span<const double> student_scores,
                                  std::span<const double> d_soft_values, const SideGates& gates,
                                  const WeightPolicy& policy) {
  const auto n = labels.size();
  if (teacher_scores.size() != n || student_scores.size() != n || d_soft_values.size() != n)
    throw std::invalid_argument("weighted loss: batch and score lengths differ");
  const auto& grader = trained == Side::kStudent ? teacher_scores : student_scores;
  const auto& own = trained == Side::kStudent ? student_scores : teacher_scores;
  const auto weights = weigh_batch(trained, labels, grader, gates, policy);
  WeightedLoss out;
  for (std::size_t i = 0; i < n; ++i) {
    out.soft += weights[i].soft * d_soft_values[i];
    out.hard += weights[i].hard * hard_loss(own[i], labels[i]);
  }
  return out;
}

}  // namespace detail

// Student objective: sum over triples of p * d_soft + (1 - p) * BCE(student),
// p read off the teacher's score through gates (alpha1..beta2).
inline WeightedLoss weighted_student_loss(std::span<const std::uint8_t> labels, std::span<const double> teacher_scores,
                                          std::span<const double> student_scores,
                                          std::span<const double> d_soft_values, const SideGates& student_gates,
                                          const WeightPolicy& policy = {}) {
  return detail::weighted_loss(Side::kStudent, labels, teacher_scores, student_scores, d_soft_values, student_gates,
                               policy);
}

// Teacher objective, only defined once the teacher is unfrozen: gates
// (alpha3..beta4) read the student's score, the hard term uses the teacher's.
inline WeightedLoss weighted_teacher_loss(Stage stage, std::span<const std::uint8_t> labels,
                                          std::span<const double> teacher_scores,
                                          std::span<const double> student_scores,
                                          std::span<const double> d_soft_values, const SideGates& teacher_gates,
                                          const WeightPolicy& policy = {}) {
  if (stage != Stage::kTwo) throw StageViolation("teacher loss requested while the teacher is frozen (stage one)");
  return detail::weighted_loss(Side::kTeacher, labels, teacher_scores, student_scores, d_soft_values, teacher_gates,
                               policy);
}

}  // namespace dualde
