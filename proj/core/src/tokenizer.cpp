#include "dbsfm/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>

#include "dbsfm/error.hpp"
#include "dbsfm/rng.hpp"

namespace dbsfm {

std::size_t symptom_index(std::string_view name) {
  for (std::size_t i = 0; i < kSymptomNames.size(); ++i) {
    if (kSymptomNames[i] == name) return i;
  }
  throw ValidationError("unknown symptom '" + std::string(name) + "'");
}

Matrix Sequence::feature_matrix() const {
  if (tokens.empty()) return Matrix(0, 0);
  Matrix out(static_cast<Eigen::Index>(tokens.size()), static_cast<Eigen::Index>(tokens.front().features.size()));
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const auto& f = tokens[t].features;
    for (std::size_t j = 0; j < f.size(); ++j) out(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(j)) = f[j];
  }
  return out;
}

std::size_t TokenizerConfig::spectral_bins() const { return welch.n_bins() - 2; }

std::vector<double> TokenizerConfig::bin_freqs() const {
  std::vector<double> out(spectral_bins());
  const double df = welch.fs_hz / static_cast<double>(welch.segment_len);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(i + 1) * df;
  return out;
}

std::size_t TokenizerConfig::window_samples(double fs_hz) const {
  return static_cast<std::size_t>(std::llround(static_cast<double>(window_s) * fs_hz));
}

int hour_feature(std::int64_t t_unix_s, std::int64_t timezone_offset_s) {
  constexpr std::int64_t kDay = 86400;
  std::int64_t local = (t_unix_s + timezone_offset_s) % kDay;
  if (local < 0) local += kDay;
  return static_cast<int>(local / 3600);
}

std::vector<double> token_features(std::span<const float> window, std::int64_t t_start_unix_s,
                                   std::int64_t timezone_offset_s, const TokenizerConfig& cfg) {
  const PsdEstimate psd = welch_psd(window, cfg.welch);
  const std::vector<double> logp = log_power(psd, cfg.welch.log_floor);
  std::vector<double> features(logp.begin() + 1, logp.end() - 1);
  features.push_back(static_cast<double>(hour_feature(t_start_unix_s, timezone_offset_s)));
  return features;
}

namespace {

bool window_is_finite(std::span<const float> window) {
  return std::all_of(window.begin(), window.end(), [](float x) { return std::isfinite(x); });
}

}  // namespace

std::vector<Sequence> tokenize(const Recording& recording, const LabelStream* labels, const TokenizerConfig& cfg) {
  cfg.welch.validate();
  if (std::abs(recording.fs_hz - cfg.welch.fs_hz) > 1e-9)
    throw ValidationError("tokenize: recording sampled at " + std::to_string(recording.fs_hz) +
                          " Hz but Welch configured for " + std::to_string(cfg.welch.fs_hz) + " Hz");
  if (cfg.tokens_per_sequence == 0 || cfg.window_s <= 0) throw ValidationError("tokenize: empty window or sequence");

  const std::size_t win = cfg.window_samples(recording.fs_hz);
  const std::size_t n_windows = recording.samples.size() / win;

  // Map labels onto the window grid first so that misaligned streams fail
  // before any spectral work is done.
  std::vector<std::optional<SymptomScores>> window_labels;
  if (labels != nullptr) {
    window_labels.resize(n_windows);
    for (const auto& label : *labels) {
      const double rel = label.t_unix_s - static_cast<double>(recording.start_unix_s);
      const double index_f = std::round(rel / static_cast<double>(cfg.window_s));
      const double offset = rel - index_f * static_cast<double>(cfg.window_s);
      if (std::abs(offset) > cfg.label_tolerance_s) {
        throw AlignmentError("label at t=" + std::to_string(label.t_unix_s) + " is " + std::to_string(offset) +
                             " s away from the nearest window start of subject " + recording.subject_id);
      }
      if (index_f < 0.0 || index_f >= static_cast<double>(n_windows)) continue;
      const auto idx = static_cast<std::size_t>(index_f);
      const bool finite = std::all_of(label.scores.begin(), label.scores.end(), [](double v) { return std::isfinite(v); });
      if (finite) window_labels[idx] = label.scores;
    }
  }

  const std::size_t per_seq = cfg.tokens_per_sequence;
  const std::size_t n_sequences = n_windows / per_seq;
  std::vector<Sequence> out;
  out.reserve(n_sequences);
  const std::span<const float> samples(recording.samples);

  for (std::size_t s = 0; s < n_sequences; ++s) {
    bool usable = true;
    for (std::size_t t = 0; t < per_seq && usable; ++t) {
      const std::size_t w = s * per_seq + t;
      if (!window_is_finite(samples.subspan(w * win, win))) usable = false;
      if (labels != nullptr && !window_labels[w]) usable = false;
    }
    if (!usable) continue;

    Sequence seq;
    seq.subject_id = recording.subject_id;
    seq.tokens.reserve(per_seq);
    if (labels != nullptr) seq.labels.emplace();
    for (std::size_t t = 0; t < per_seq; ++t) {
      const std::size_t w = s * per_seq + t;
      Token token;
      token.t_start_unix_s = recording.start_unix_s + static_cast<std::int64_t>(w) * cfg.window_s;
      token.subject_id = recording.subject_id;
      token.features = token_features(samples.subspan(w * win, win), token.t_start_unix_s,
                                      recording.timezone_offset_s, cfg);
      seq.tokens.push_back(std::move(token));
      if (labels != nullptr) seq.labels->push_back(*window_labels[w]);
    }
    out.push_back(std::move(seq));
  }
  return out;
}

std::size_t masked_token_count(std::size_t n_tokens, double ratio) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw ValidationError("mask ratio must lie in [0, 1]");
  const double exact = ratio * static_cast<double>(n_tokens);
  // Half-up rounding with a guard against 4.4999999 from binary fractions.
  const auto count = static_cast<std::size_t>(std::floor(exact + 0.5 + 1e-9));
  return std::min(count, n_tokens);
}

MaskPlan draw_mask(std::size_t n_tokens, double ratio, std::uint64_t seed) {
  const std::size_t k = masked_token_count(n_tokens, ratio);
  std::vector<std::size_t> order(n_tokens);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  // Partial Fisher-Yates: the first k entries are a uniform k-subset.
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n_tokens - 1);
    std::swap(order[i], order[pick(rng)]);
  }
  MaskPlan plan;
  plan.masked_indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(plan.masked_indices.begin(), plan.masked_indices.end());
  plan.seed_used = seed;
  return plan;
}

std::pair<Matrix, MaskPlan> apply_mask(const Sequence& seq, double ratio, std::uint64_t seed) {
  MaskPlan plan = draw_mask(seq.tokens.size(), ratio, seed);
  Matrix features = seq.feature_matrix();
  for (std::size_t idx : plan.masked_indices) features.row(static_cast<Eigen::Index>(idx)).setZero();
  return {std::move(features), std::move(plan)};
}

}  // namespace dbsfm
