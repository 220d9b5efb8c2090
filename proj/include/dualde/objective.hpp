#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "dualde/kg_data.hpp"
#include "dualde/losses.hpp"
#include "dualde/models.hpp"
#include "dualde/sem.hpp"

namespace dualde {

// Positives and their corruptions, flattened, with 0/1 labels.
struct LabeledBatch {
  std::vector<Triple> triples;
  std::vector<std::uint8_t> labels;

  std::size_t size() const noexcept { return triples.size(); }
  void clear() {
    triples.clear();
    labels.clear();
  }
  void append(const NegativeBatch& nb) {
    triples.push_back(nb.positive);
    triples.insert(triples.end(), nb.corruptions.begin(), nb.corruptions.end());
    labels.insert(labels.end(), nb.labels.begin(), nb.labels.end());
  }
};

// Gradient for one side: its embedding rows plus the four gate scalars it
// owns, in SideGates::flat() order.
struct SideGradients {
  ParamGrad params;
  std::array<double, 4> gates{};

  void reset() {
    params.clear();
    gates.fill(0.0);
  }
  bool empty() const { return params.empty() && gates == std::array<double, 4>{}; }
};

// Batch-mean values of the distillation objective.
struct ObjectiveValue {
  WeightedLoss student;  // L_Stu = soft + hard
  WeightedLoss teacher;  // L_Tea, zero in stage one
  double gamma = 0.0;
  double loss = 0.0;  // L_Stu + gamma * L_Tea
  double mean_d_score = 0.0;
  double mean_d_structure = 0.0;
};

inline double gamma_for(Stage stage) { return stage == Stage::kTwo ? 1.0 : 0.0; }

// Hard-label (BCE) objective, averaged over the batch. Used for teacher
// pretraining and for students trained without distillation.
template <class T>
double hard_objective(const BasicModelParams<T>& params, const LabeledBatch& batch, ParamGrad* grad) {
  if (batch.labels.size() != batch.triples.size()) throw std::invalid_argument("hard_objective: label mismatch");
  if (batch.size() == 0) return 0.0;
  if (grad && grad->empty() && grad->entities.width() != params.entity_width()) *grad = ParamGrad(params);
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& tr = batch.triples[i];
    const double s = score_triple(params, tr);
    total += hard_loss(s, batch.labels[i]);
    if (grad) backward_triple(params, tr, s, inv_n * hard_loss_grad(s, batch.labels[i]), *grad);
  }
  return total * inv_n;
}

// L = L_Stu + gamma * L_Tea over one batch, normalised by batch size.
//
// Each side's loss is differentiated only with respect to that side's own
// embeddings and gates: in L_Stu the teacher's score, structure and gate
// input are constants; in L_Tea the student's are. In stage one gamma = 0
// and the teacher gradient is identically empty.
template <class T>
ObjectiveValue distill_objective(const BasicModelParams<T>& teacher, const BasicModelParams<T>& student,
                                 const SemGate& gates, const WeightPolicy& policy, Stage stage,
                                 const LabeledBatch& batch, SideGradients* student_grad,
                                 SideGradients* teacher_grad) {
  if (batch.labels.size() != batch.triples.size()) throw std::invalid_argument("distill_objective: label mismatch");
  if (teacher.family.tag != student.family.tag)
    throw ConfigError("distill_objective: teacher and student families differ");
  ObjectiveValue out;
  out.gamma = gamma_for(stage);
  if (batch.size() == 0) return out;

  const bool train_teacher = stage == Stage::kTwo;
  if (student_grad && student_grad->params.empty() && student_grad->params.entities.width() != student.entity_width())
    student_grad->params = ParamGrad(student);
  if (teacher_grad) {
    if (teacher_grad->params.empty() && teacher_grad->params.entities.width() != teacher.entity_width())
      teacher_grad->params = ParamGrad(teacher);
  }

  const double inv_n = 1.0 / static_cast<double>(batch.size());
  std::vector<double> dh_s(student.entity_width()), dt_s(student.entity_width());
  std::vector<double> dh_t(teacher.entity_width()), dt_t(teacher.entity_width());

  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Triple& tr = batch.triples[i];
    const std::uint8_t y = batch.labels[i];
    const Polarity pol = polarity_of(y);

    const double f_t = score_triple(teacher, tr);
    const double f_s = score_triple(student, tr);
    const auto h_t = entity_view(teacher, tr.head), t_t = entity_view(teacher, tr.tail);
    const auto h_s = entity_view(student, tr.head), t_s = entity_view(student, tr.tail);

    const double angle_t = angle(h_t, t_t), ratio_t = length_ratio(h_t, t_t);
    const double angle_s = angle(h_s, t_s), ratio_s = length_ratio(h_s, t_s);
    const double dsc = huber(f_t, f_s);
    const double dst = huber(angle_t, angle_s) + huber(ratio_t, ratio_s);
    const double dsoft = dsc + dst;
    out.mean_d_score += dsc * inv_n;
    out.mean_d_structure += dst * inv_n;

    // Student side: weights graded by the teacher's score.
    {
      const double p = policy.adaptive ? soft_weight(gates.student, f_t, pol) : policy.fixed_p;
      const double hard = hard_loss(f_s, y);
      out.student.soft += p * dsoft * inv_n;
      out.student.hard += (1.0 - p) * hard * inv_n;
      if (student_grad) {
        const double g_score = inv_n * (-p * huber_grad(f_t, f_s) + (1.0 - p) * hard_loss_grad(f_s, y));
        backward_triple(student, tr, f_s, g_score, student_grad->params);
        std::fill(dh_s.begin(), dh_s.end(), 0.0);
        std::fill(dt_s.begin(), dt_s.end(), 0.0);
        structure_backward(h_s, t_s, angle_t, ratio_t, /*self_first=*/false, inv_n * p, std::span<double>(dh_s),
                           std::span<double>(dt_s));
        auto& rows = student_grad->params.entities;
        const std::size_t hs = rows.slot(tr.head), ts = rows.slot(tr.tail);
        auto gh = rows.at(hs);
        for (std::size_t k = 0; k < dh_s.size(); ++k) gh[k] += dh_s[k];
        auto gt = rows.at(ts);
        for (std::size_t k = 0; k < dt_s.size(); ++k) gt[k] += dt_s[k];
        if (policy.adaptive) {
          const GatePair dp = soft_weight_grad(gates.student, f_t, pol);
          const double g_p = inv_n * (dsoft - hard);
          const std::size_t off = pol == Polarity::kPositive ? 0 : 2;
          student_grad->gates[off] += g_p * dp.alpha;
          student_grad->gates[off + 1] += g_p * dp.beta;
        }
      }
    }

    // Teacher side: weights graded by the student's score.
    if (train_teacher) {
      const double q = policy.adaptive ? soft_weight(gates.teacher, f_s, pol) : policy.fixed_p;
      const double hard = hard_loss(f_t, y);
      out.teacher.soft += q * dsoft * inv_n;
      out.teacher.hard += (1.0 - q) * hard * inv_n;
      if (teacher_grad) {
        const double g_score = inv_n * (q * huber_grad(f_t, f_s) + (1.0 - q) * hard_loss_grad(f_t, y));
        backward_triple(teacher, tr, f_t, g_score, teacher_grad->params);
        std::fill(dh_t.begin(), dh_t.end(), 0.0);
        std::fill(dt_t.begin(), dt_t.end(), 0.0);
        structure_backward(h_t, t_t, angle_s, ratio_s, /*self_first=*/true, inv_n * q, std::span<double>(dh_t),
                           std::span<double>(dt_t));
        auto& rows = teacher_grad->params.entities;
        const std::size_t hs = rows.slot(tr.head), ts = rows.slot(tr.tail);
        auto gh = rows.at(hs);
        for (std::size_t k = 0; k < dh_t.size(); ++k) gh[k] += dh_t[k];
        auto gt = rows.at(ts);
        for (std::size_t k = 0; k < dt_t.size(); ++k) gt[k] += dt_t[k];
        if (policy.adaptive) {
          const GatePair dq = soft_weight_grad(gates.teacher, f_s, pol);
          const double g_q = inv_n * (dsoft - hard);
          const std::size_t off = pol == Polarity::kPositive ? 0 : 2;
          teacher_grad->gates[off] += g_q * dq.alpha;
          teacher_grad->gates[off + 1] += g_q * dq.beta;
        }
      }
    }
  }
  out.loss = out.student.total() + out.gamma * out.teacher.total();
  return out;
}

}  // namespace dualde
