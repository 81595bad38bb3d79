#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dbsfm/linalg.hpp"

namespace dbsfm {

/// Gaussian bump added to the log10 spectrum.
struct SpectralPeak {
  double center_hz = 0.0;
  double height_log10 = 0.0;
  double width_hz = 1.0;
};

/// Log-spectrum model: offset - beta * log10(f) plus Gaussian peaks.
struct AperiodicModel {
  double beta = 1.0;
  double offset = 0.0;
  std::vector<SpectralPeak> peaks;

  /// Throws ValidationError when beta < 0, a width is not positive, or a
  /// peak center lies outside (0, nyquist_hz).
  void validate(double nyquist_hz) const;
};

/// Per-bin mean of log10 PSD across training spectra.
struct MeanLogProfile {
  std::vector<double> p;
};

/// Per-frequency loss weights plus the weight for the trailing hour feature.
struct ScalingVector {
  std::vector<double> freqs;
  std::vector<double> k;
  double hour_weight = 0.0;

  /// k followed by hour_weight: one weight per token feature.
  std::vector<double> extended() const;
};

/// Evaluates the log10 spectrum model at each frequency (all freqs >= 1).
std::vector<double> synth_log_psd(const AperiodicModel& model, std::span<const double> freqs);

/// Column-wise mean of an N x F matrix of log10 spectra.
MeanLogProfile mean_log_profile(const Matrix& spectra);

/// k_i = log10(f_i) + mean(p). Throws DomainError for any f < 1.
ScalingVector scaling_vector(const MeanLogProfile& p, std::span<const double> freqs, double hour_weight = 0.0);

/// Population standard deviation over bins of log10(f_i) + p_i. Zero when the
/// mean spectrum is exactly c - log10(f).
double alignment_residual(const MeanLogProfile& p, std::span<const double> freqs);

/// Mean over all masked-row elements of |w_j * (target_tj - prediction_tj)|.
/// `weights` has one entry per column. Rows outside `masked_rows` never
/// contribute. Throws ValidationError on an empty mask, out-of-range rows, or
/// mismatched shapes.
double scaled_masked_mae(const Matrix& target, const Matrix& prediction, std::span<const double> weights,
                         std::span<const std::size_t> masked_rows);
double scaled_masked_mae(const Matrix& target, const Matrix& prediction, const ScalingVector& k,
                         std::span<const std::size_t> masked_rows);

/// Integer frequency grid lo, lo+1, ..., hi.
std::vector<double> frequency_grid(double lo_hz, double hi_hz, double step_hz = 1.0);

}  // namespace dbsfm
