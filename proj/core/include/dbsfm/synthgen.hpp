#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dbsfm/loss_scaling.hpp"
#include "dbsfm/rng.hpp"
#include "dbsfm/tokenizer.hpp"

namespace dbsfm {

/// Peaks centred inside [band_lo_hz, band_hi_hz] have their height scaled by
/// 1 + depth * cos(2 pi (h - acrophase_hour) / 24) at local hour h.
struct CircadianSpec {
  double band_lo_hz = 13.0;
  double band_hi_hz = 30.0;
  double depth = 0.0;
  double acrophase_hour = 0.0;
};

/// Label = gain * (standardized mean log-power in the band) + N(0, noise_sd).
/// driver_sd is the per-window latent fluctuation added to the height of the
/// peaks centred inside the band; it is what makes the band power (and so
/// the label) vary from window to window.
struct LabelModel {
  double band_lo_hz = 13.0;
  double band_hi_hz = 30.0;
  double gain = 1.0;
  double noise_sd = 0.0;
  double driver_sd = 0.0;
};

struct SubjectSpec {
  std::string subject_id = "S01";
  AperiodicModel spectrum;
  CircadianSpec circadian;
  std::array<LabelModel, kNumSymptoms> labels{};
  double days = 1.0;
  std::uint64_t seed = 0;
  std::int64_t start_unix_s = 1704067200;  // 2024-01-01T00:00:00Z
  std::int64_t timezone_offset_s = 0;
  double fs_hz = 250.0;
  std::int64_t window_s = 120;

  /// Throws ValidationError on bands outside (0, fs/2), depth outside [0, 1),
  /// negative noise, or a recording shorter than one window.
  void validate() const;
  std::size_t n_windows() const;
  std::size_t window_samples() const;
};

struct SynthSubject {
  Recording recording;
  LabelStream labels;
  /// Generating band log-power per window and symptom (before standardizing).
  std::vector<SymptomScores> band_power;
};

struct SynthDataset {
  std::vector<SubjectSpec> specs;
  std::vector<SynthSubject> subjects;
};

/// Random-phase inverse-FFT synthesis. `target_log_psd` holds log10 one-sided
/// PSD values at `freqs` (ascending); each rFFT bin gets the amplitude of the
/// target interpolated linearly in log10, clamped to the end values outside
/// the grid, and a uniform random phase. DC is zero.
std::vector<double> synth_segment(std::span<const double> target_log_psd, std::span<const double> freqs,
                                  std::size_t n_samples, double fs_hz, Rng& rng);

/// Convenience overload on the 1..124 Hz grid at 250 Hz.
std::vector<double> synth_segment(std::span<const double> target_log_psd, std::size_t n_samples, Rng& rng);

/// Local hour of day as a real number in [0, 24).
double local_hour(std::int64_t t_unix_s, std::int64_t timezone_offset_s);

SynthSubject synth_subject(const SubjectSpec& spec);

/// Labels only (no signal synthesis); identical to synth_subject(spec).labels.
SynthSubject synth_subject_labels(const SubjectSpec& spec);

/// Per-subject specs of the default cohort: aperiodic exponent U(1, 2), a beta
/// peak near 20 Hz driving bradykinesia with circadian modulation, a gamma
/// peak near 65 Hz driving dyskinesia. Throws ValidationError for n < 2.
std::vector<SubjectSpec> default_cohort_specs(std::size_t n_subjects, double days, std::uint64_t master_seed);

SynthDataset default_cohort(std::size_t n_subjects = 8, double days = 2.0, std::uint64_t master_seed = 0);

/// Closed-form Pearson correlation between a label and its generating band
/// power: gain / sqrt(gain^2 + noise_sd^2).
double label_r_ceiling(const LabelModel& model);

}  // namespace dbsfm
