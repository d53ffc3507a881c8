#include "sard/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sard {

double clamp_probability(double p) { return std::clamp(p, kProbFloor, 1.0 - kProbFloor); }

namespace {

// Soft-target weighted cross-entropy and its derivative in the student probability.
LossValue weighted_xent(double target, double student_p, double class_weight) {
  if (!std::isfinite(student_p) || !std::isfinite(target)) {
    throw std::domain_error("loss: non-finite probability");
  }
  const double f = clamp_probability(student_p);
  LossValue v;
  v.loss = -class_weight * target * std::log(f) - (1.0 - target) * std::log(1.0 - f);
  if (student_p == f) {
    v.d_student = -class_weight * target / f + (1.0 - target) / (1.0 - f);
  }
  return v;
}

}  // namespace

double loss_rd(double teacher_p, double student_p, double class_weight) {
  return weighted_xent(clamp_probability(teacher_p), student_p, class_weight).loss;
}

double loss_ce(int label, double student_p, double class_weight) {
  return weighted_xent(label == 1 ? 1.0 : 0.0, student_p, class_weight).loss;
}

double loss_tune(int label, double teacher_p, double student_p, double class_weight,
                 double alpha) {
  return loss_ce(label, student_p, class_weight) + alpha * loss_rd(teacher_p, student_p, class_weight);
}

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::rd: return "rd";
    case LossKind::ce: return "ce";
    case LossKind::tune: return "tune";
  }
  return "?";
}

LossKind parse_loss_kind(std::string_view s) {
  if (s == "rd") return LossKind::rd;
  if (s == "ce") return LossKind::ce;
  if (s == "tune") return LossKind::tune;
  throw std::invalid_argument("unknown loss kind '" + std::string(s) + "'");
}

void LossSpec::validate() const {
  if (!(class_weight > 0.0) || !std::isfinite(class_weight)) {
    throw std::invalid_argument("class weight must be positive");
  }
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw std::invalid_argument("alpha must be >= 0");
}

LossValue evaluate_loss(const LossSpec& spec, int label, double teacher_p, double student_p) {
  const double y = label == 1 ? 1.0 : 0.0;
  switch (spec.kind) {
    case LossKind::rd:
      return weighted_xent(clamp_probability(teacher_p), student_p, spec.class_weight);
    case LossKind::ce:
      return weighted_xent(y, student_p, spec.class_weight);
    case LossKind::tune: {
      auto ce = weighted_xent(y, student_p, spec.class_weight);
      if (spec.alpha == 0.0) return ce;
      const auto rd = weighted_xent(clamp_probability(teacher_p), student_p, spec.class_weight);
      ce.loss += spec.alpha * rd.loss;
      ce.d_student += spec.alpha * rd.d_student;
      return ce;
    }
  }
  throw std::logic_error("unreachable loss kind");
}

}  // namespace sard
