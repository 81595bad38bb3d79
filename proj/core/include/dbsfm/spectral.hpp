#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace dbsfm {

enum class Taper {
  kHann,  ///< periodic raised-cosine
  kRectangular,
};

/// Welch estimator settings. The defaults give 1 Hz bins from 0 to 125 Hz.
struct WelchConfig {
  double fs_hz = 250.0;
  std::size_t segment_len = 250;
  double overlap = 0.5;
  Taper taper = Taper::kHann;
  double log_floor = 1e-12;

  /// Throws ValidationError on a degenerate configuration.
  void validate() const;
  std::size_t step() const;
  /// Number of one-sided bins (segment_len / 2 + 1).
  std::size_t n_bins() const { return segment_len / 2 + 1; }
};

/// One-sided power spectral density in signal-units^2 / Hz.
struct PsdEstimate {
  std::vector<double> freqs;
  std::vector<double> power;
};

/// Smallest floor accepted by log_power; smaller values are raised to it.
inline constexpr double kMinLogFloor = 1e-12;

/// Averaged modified periodogram over overlapping tapered segments. Each
/// segment has its mean removed before tapering. Bins other than DC and
/// Nyquist carry the one-sided doubling factor.
///
/// Throws LengthError when the signal is shorter than one segment and
/// ValidationError on non-finite samples.
PsdEstimate welch_psd(std::span<const double> signal, const WelchConfig& cfg);
PsdEstimate welch_psd(std::span<const float> signal, const WelchConfig& cfg);

/// Element-wise log10(power + floor). The floor is raised to kMinLogFloor
/// when smaller; negative or non-finite floors are rejected.
std::vector<double> log_power(const PsdEstimate& psd, double log_floor);

/// Taper coefficients for a segment of length n.
std::vector<double> taper_window(Taper taper, std::size_t n);

}  // namespace dbsfm
