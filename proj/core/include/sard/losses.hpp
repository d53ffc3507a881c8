#pragma once

#include <string>
#include <string_view>

namespace sard {

/// Probabilities entering a logarithm are clamped to [kProbFloor, 1 - kProbFloor].
inline constexpr double kProbFloor = 1e-7;

double clamp_probability(double p);

/// Reverse-distillation loss: -p_c g log f - (1 - g) log(1 - f).
double loss_rd(double teacher_p, double student_p, double class_weight);
/// Weighted cross-entropy against a hard label.
double loss_ce(int label, double student_p, double class_weight);
/// loss_ce + alpha * loss_rd.
double loss_tune(int label, double teacher_p, double student_p, double class_weight, double alpha);

enum class LossKind { rd, ce, tune };

std::string to_string(LossKind kind);
LossKind parse_loss_kind(std::string_view s);

struct LossSpec {
  LossKind kind = LossKind::ce;
  double class_weight = 1.0;  // p_c
  double alpha = 0.0;         // tune only

  void validate() const;
};

struct LossValue {
  double loss = 0.0;
  /// d loss / d student probability; zero where the clamp is active.
  double d_student = 0.0;
};

LossValue evaluate_loss(const LossSpec& spec, int label, double teacher_p, double student_p);

}  // namespace sard
