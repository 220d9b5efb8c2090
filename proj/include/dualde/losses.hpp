#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>

#include "dualde/error.hpp"

namespace dualde {

// Huber distance with delta = 1.
inline double huber(double a, double b) {
  const double d = std::abs(a - b);
  return d <= 1.0 ? 0.5 * d * d : d - 0.5;
}

// d huber(a, b) / da; the derivative in b is the negation.
inline double huber_grad(double a, double b) {
  const double d = a - b;
  if (d > 1.0) return 1.0;
  if (d < -1.0) return -1.0;
  return d;
}

// log(1 + e^x) without overflow.
inline double softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Binary cross-entropy of sigma(score) against a 0/1 label.
inline double hard_loss(double score, int label) {
  return label ? softplus(-score) : softplus(score);
}

inline double hard_loss_grad(double score, int label) { return sigmoid(score) - (label ? 1.0 : 0.0); }

inline double d_score(double teacher_score, double student_score) { return huber(teacher_score, student_score); }

namespace detail {

template <class T>
double sq_norm(std::span<const T> v) {
  double acc = 0.0;
  for (auto x : v) acc += double(x) * double(x);
  return acc;
}

template <class T, class U>
double dot(std::span<const T> a, std::span<const U> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += double(a[i]) * double(b[i]);
  return acc;
}

inline void require_nonzero(double sq, const char* what) {
  if (!(sq > 0.0)) throw DegenerateEmbedding(std::string(what) + ": zero-length embedding");
}

}  // namespace detail

// Cosine between h and t, clamped to [-1, 1].
template <class T>
double angle(std::span<const T> h, std::span<const T> t) {
  if (h.size() != t.size()) throw std::invalid_argument("angle: length mismatch");
  const double hh = detail::sq_norm(h), tt = detail::sq_norm(t);
  detail::require_nonzero(hh, "angle");
  detail::require_nonzero(tt, "angle");
  return std::clamp(detail::dot(h, t) / std::sqrt(hh * tt), -1.0, 1.0);
}

template <class T>
double length_ratio(std::span<const T> h, std::span<const T> t) {
  const double tt = detail::sq_norm(t);
  detail::require_nonzero(tt, "length_ratio");
  return std::sqrt(detail::sq_norm(h) / tt);
}

// Teacher and student vectors may have different lengths; only the scalar
// angle and length ratio of each (h, t) pair are compared.
template <class T, class U>
double d_structure(std::span<const T> h_teacher, std::span<const T> t_teacher, std::span<const U> h_student,
                   std::span<const U> t_student) {
  return huber(angle(h_teacher, t_teacher), angle(h_student, t_student)) +
         huber(length_ratio(h_teacher, t_teacher), length_ratio(h_student, t_student));
}

template <class T, class U>
double d_soft(double teacher_score, double student_score, std::span<const T> h_teacher, std::span<const T> t_teacher,
              std::span<const U> h_student, std::span<const U> t_student) {
  return d_score(teacher_score, student_score) + d_structure(h_teacher, t_teacher, h_student, t_student);
}

// Gradient of upstream * (huber(angle(hT,tT), angle(h,t)) + huber(lr(hT,tT), lr(h,t)))
// with respect to one side's (h, t), given the other side's fixed angle and
// length ratio. `self_first` is true when (h, t) is the first argument of
// both Huber terms. Results are added into dh, dt.
template <class T>
void structure_backward(std::span<const T> h, std::span<const T> t, double other_angle, double other_ratio,
                        bool self_first, double upstream, std::span<double> dh, std::span<double> dt) {
  if (upstream == 0.0) return;
  const double hh = detail::sq_norm(h), tt = detail::sq_norm(t);
  detail::require_nonzero(hh, "d_structure");
  detail::require_nonzero(tt, "d_structure");
  const double hn = std::sqrt(hh), tn = std::sqrt(tt);
  const double cos_raw = detail::dot(h, t) / (hn * tn);
  const double cos = std::clamp(cos_raw, -1.0, 1.0);
  const double ratio = hn / tn;

  const double g_angle =
      upstream * (self_first ? huber_grad(cos, other_angle) : -huber_grad(other_angle, cos));
  const double g_ratio =
      upstream * (self_first ? huber_grad(ratio, other_ratio) : -huber_grad(other_ratio, ratio));

  // d cos/dh = t/(|h||t|) - cos h/|h|^2 ; d ratio/dh = h/(|h||t|) ; d ratio/dt = -ratio t/|t|^2
  const double inv_ht = 1.0 / (hn * tn);
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double hi = h[i], ti = t[i];
    dh[i] += g_angle * (ti * inv_ht - cos_raw * hi / hh) + g_ratio * hi * inv_ht;
    dt[i] += g_angle * (hi * inv_ht - cos_raw * ti / tt) - g_ratio * ratio * ti / tt;
  }
}

}  // namespace dualde
