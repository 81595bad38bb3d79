#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dbsfm/linalg.hpp"
#include "dbsfm/spectral.hpp"

namespace dbsfm {

inline constexpr std::size_t kNumSymptoms = 2;
inline constexpr std::array<std::string_view, kNumSymptoms> kSymptomNames{"bradykinesia", "dyskinesia"};

/// Index of a symptom name in kSymptomNames; throws ValidationError for an
/// unknown name.
std::size_t symptom_index(std::string_view name);

using SymptomScores = std::array<double, kNumSymptoms>;

/// Continuous single-channel recording. Non-finite samples mark data gaps.
struct Recording {
  std::string subject_id;
  double fs_hz = 250.0;
  std::int64_t start_unix_s = 0;
  std::int64_t timezone_offset_s = 0;
  std::vector<float> samples;
};

struct LabelSample {
  double t_unix_s = 0.0;
  SymptomScores scores{};
};
using LabelStream = std::vector<LabelSample>;

/// One window: log10 power bins (DC and Nyquist dropped) followed by the
/// local hour of the window start.
struct Token {
  std::vector<double> features;
  std::int64_t t_start_unix_s = 0;
  std::string subject_id;
};

struct Sequence {
  std::vector<Token> tokens;
  /// One score pair per token when the recording came with labels.
  std::optional<std::vector<SymptomScores>> labels;
  std::string subject_id;

  /// tokens.size() x feature_dim matrix of token features.
  Matrix feature_matrix() const;
};

struct TokenizerConfig {
  WelchConfig welch;
  std::int64_t window_s = 120;
  std::size_t tokens_per_sequence = 15;
  double label_tolerance_s = 1.0;

  /// Spectral bins per token (segment bins minus DC and Nyquist).
  std::size_t spectral_bins() const;
  /// spectral_bins() + 1 for the hour feature.
  std::size_t feature_dim() const { return spectral_bins() + 1; }
  /// Centre frequencies of the kept bins.
  std::vector<double> bin_freqs() const;
  std::size_t window_samples(double fs_hz) const;
};

/// Local hour of day in 0..23.
int hour_feature(std::int64_t t_unix_s, std::int64_t timezone_offset_s);

/// Features for one window of samples starting at t_start.
std::vector<double> token_features(std::span<const float> window, std::int64_t t_start_unix_s,
                                   std::int64_t timezone_offset_s, const TokenizerConfig& cfg);

/// Splits a recording into non-overlapping sequences of consecutive windows
/// anchored at the recording start. Sequences touching a gap (non-finite
/// samples, or a window without a label when labels are supplied) are
/// dropped. A recording shorter than one sequence yields an empty result.
///
/// Throws AlignmentError when a label timestamp is not within
/// label_tolerance_s of a window start.
std::vector<Sequence> tokenize(const Recording& recording, const LabelStream* labels, const TokenizerConfig& cfg);

struct MaskPlan {
  std::vector<std::size_t> masked_indices;  ///< sorted token positions
  std::uint64_t seed_used = 0;
};

/// round_half_up(ratio * n_tokens).
std::size_t masked_token_count(std::size_t n_tokens, double ratio);

/// Uniform selection without replacement, deterministic in the seed.
MaskPlan draw_mask(std::size_t n_tokens, double ratio, std::uint64_t seed);

/// Zeroes the full feature rows of the selected tokens. The sequence itself
/// is untouched. Throws ValidationError for a ratio outside [0, 1].
std::pair<Matrix, MaskPlan> apply_mask(const Sequence& seq, double ratio, std::uint64_t seed);

}  // namespace dbsfm
