#pragma once

#include <iosfwd>
#include <vector>

#include "sard/corpus.hpp"
#include "sard/sard_model.hpp"
#include "sard/windowed_linear.hpp"

namespace sard {

/// Truncated Fourier series of a periodic interval indicator:
/// a0 + sum_n a_n cos(2 pi n t / P) + b_n sin(2 pi n t / P).
struct FourierWindow {
  double lo = 0.0;  // indicator of [lo, hi] repeated with period P
  double hi = 0.0;
  double period = 0.0;
  double a0 = 0.0;
  std::vector<double> a;  // a[n - 1]
  std::vector<double> b;

  std::size_t harmonics() const noexcept { return a.size(); }
};

/// Coefficients for the indicator of [0, T] on a period P.
FourierWindow fourier_window_coeffs(double T, double P, std::size_t n_max);
/// Coefficients for the indicator of [lo, hi] with hi - lo <= P.
FourierWindow fourier_interval_coeffs(double lo, double hi, double P, std::size_t n_max);

double indicator_approx(double t, const FourierWindow& fw);

struct ConstructionOptions {
  double sharpness = 20.0;  // s: attention logits are s^2 times the approximated indicator
  /// Kernel gain; 0 means s^2 / 4.
  double gain = 0.0;
  std::size_t max_visits = 64;
  int time_clip_days = 365;
};

/// Builds a one-layer self-attention SARD model with a convolutional head whose
/// logit approximates the teacher's. Window offsets must be below the time clip or
/// unbounded; period must exceed time_clip_days + 1.
SardModel construct_replicating_sard(const LinearModel& teacher, const CodeVocab& vocab,
                                     double period, std::size_t n_freq,
                                     ConstructionOptions options = {});

struct ReplicationError {
  double max_abs = 0.0;   // max |p_sard - p_teacher|
  double mean_abs = 0.0;
  double spearman = 1.0;  // between logits
};

ReplicationError replication_error(const SardModel& sard, const LinearModel& teacher,
                                   const Cohort& cohort);
/// Teacher against itself, or any pair of probability/logit vectors.
ReplicationError replication_error(std::span<const double> logits_a, std::span<const double> logits_b);

struct SweepRow {
  std::size_t n_freq = 0;
  double sharpness = 0.0;
  ReplicationError error;
};

std::vector<SweepRow> replication_sweep(const LinearModel& teacher, const Cohort& cohort,
                                        double period, std::span<const std::size_t> n_freqs,
                                        std::span<const double> sharpnesses,
                                        ConstructionOptions base = {});

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows);

}  // namespace sard
