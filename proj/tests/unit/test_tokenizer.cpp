#include <gtest/gtest.h>

#include <ctime>
#include <set>

#include "dbsfm/error.hpp"
#include "dbsfm/tokenizer.hpp"
#include "test_util.hpp"

using namespace dbsfm;

namespace {

Recording noise_recording(double minutes, std::int64_t start = 1704067200, std::int64_t tz = 0) {
  Recording r;
  r.subject_id = "S01";
  r.start_unix_s = start;
  r.timezone_offset_s = tz;
  const auto x = testutil::white_noise(static_cast<std::size_t>(minutes * 60 * 250), 9);
  r.samples.assign(x.begin(), x.end());
  return r;
}

LabelStream grid_labels(std::size_t n, std::int64_t start, double jitter = 0.0) {
  LabelStream out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back({static_cast<double>(start) + 120.0 * i + jitter, {static_cast<double>(i), -static_cast<double>(i)}});
  return out;
}

// Calendar oracle: gmtime of the shifted timestamp.
int calendar_hour(std::int64_t t, std::int64_t tz) {
  const std::time_t shifted = static_cast<std::time_t>(t + tz);
  std::tm tm{};
  gmtime_r(&shifted, &tm);
  return tm.tm_hour;
}

}  // namespace

TEST(HourFeature, Examples) {
  const std::int64_t midnight = 1704067200;  // 2024-01-01 00:00:00 UTC
  EXPECT_EQ(hour_feature(midnight + 14 * 3600 + 23 * 60, 0), 14);
  EXPECT_EQ(hour_feature(midnight, 0), 0);
  EXPECT_EQ(hour_feature(midnight + 86399, 0), 23);
  EXPECT_EQ(hour_feature(midnight, -3600), 23);
  EXPECT_EQ(hour_feature(midnight, 2 * 3600), 2);
  EXPECT_EQ(hour_feature(-1, 0), 23);
}

TEST(HourFeature, MatchesCalendarOverSeveralDays) {
  for (std::int64_t tz : {0, 3600, -5 * 3600, 19800}) {
    for (std::int64_t t = 1704067200; t < 1704067200 + 4 * 86400; t += 997) EXPECT_EQ(hour_feature(t, tz), calendar_hour(t, tz));
  }
}

TEST(Tokenize, SequenceCounts) {
  TokenizerConfig cfg;
  EXPECT_EQ(tokenize(noise_recording(60), nullptr, cfg).size(), 2u);
  EXPECT_EQ(tokenize(noise_recording(29), nullptr, cfg).size(), 0u);
  EXPECT_EQ(tokenize(noise_recording(44), nullptr, cfg).size(), 1u);
}

TEST(Tokenize, TokenContents) {
  TokenizerConfig cfg;
  const Recording rec = noise_recording(30, 1704067200 + 13 * 3600 + 50 * 60, 3600);
  const auto seqs = tokenize(rec, nullptr, cfg);
  ASSERT_EQ(seqs.size(), 1u);
  const auto& seq = seqs[0];
  ASSERT_EQ(seq.tokens.size(), 15u);
  EXPECT_FALSE(seq.labels.has_value());
  for (std::size_t t = 0; t < 15; ++t) {
    const Token& tok = seq.tokens[t];
    ASSERT_EQ(tok.features.size(), 125u);
    EXPECT_EQ(tok.t_start_unix_s, rec.start_unix_s + static_cast<std::int64_t>(120 * t));
    EXPECT_EQ(tok.features[124], calendar_hour(tok.t_start_unix_s, 3600));
    EXPECT_EQ(tok.subject_id, "S01");
    // spectral part equals the standalone feature computation
    const auto expect = token_features(std::span<const float>(rec.samples).subspan(t * 30000, 30000),
                                       tok.t_start_unix_s, rec.timezone_offset_s, cfg);
    EXPECT_EQ(tok.features, expect);
  }
}

TEST(Tokenize, DayLongRecordingMatchesWindowCount) {
  TokenizerConfig cfg;
  Recording rec;
  rec.subject_id = "S02";
  rec.start_unix_s = 1704067200;
  rec.samples.assign(24 * 3600 * 250, 0.0f);
  for (std::size_t i = 0; i < rec.samples.size(); ++i) rec.samples[i] = static_cast<float>((i * 7919) % 101) / 101.0f;
  const auto seqs = tokenize(rec, nullptr, cfg);
  std::size_t windows = 0;
  for (std::size_t start = 0; start + 30000 <= rec.samples.size(); start += 30000) ++windows;
  EXPECT_EQ(seqs.size(), windows / 15);
  EXPECT_EQ(seqs.size(), 48u);
  std::size_t tokens = 0;
  for (const auto& s : seqs) tokens += s.tokens.size();
  EXPECT_EQ(tokens, 720u);
  for (const auto& s : seqs)
    for (const auto& tok : s.tokens) EXPECT_EQ(tok.features[124], calendar_hour(tok.t_start_unix_s, 0));
}

TEST(Tokenize, AttachesAlignedLabels) {
  TokenizerConfig cfg;
  const Recording rec = noise_recording(60);
  const LabelStream labels = grid_labels(30, rec.start_unix_s, 0.6);
  const auto seqs = tokenize(rec, &labels, cfg);
  ASSERT_EQ(seqs.size(), 2u);
  for (std::size_t s = 0; s < 2; ++s) {
    ASSERT_TRUE(seqs[s].labels.has_value());
    for (std::size_t t = 0; t < 15; ++t) EXPECT_EQ((*seqs[s].labels)[t][0], static_cast<double>(s * 15 + t));
  }
}

TEST(Tokenize, MisalignedLabelsThrow) {
  TokenizerConfig cfg;
  const Recording rec = noise_recording(30);
  const LabelStream labels = grid_labels(15, rec.start_unix_s, 5.0);
  EXPECT_THROW(tokenize(rec, &labels, cfg), AlignmentError);
}

TEST(Tokenize, GapsDropWholeSequence) {
  TokenizerConfig cfg;
  Recording rec = noise_recording(60);
  rec.samples[40 * 60 * 250] = std::nanf("");
  auto seqs = tokenize(rec, nullptr, cfg);
  ASSERT_EQ(seqs.size(), 1u);
  EXPECT_EQ(seqs[0].tokens.front().t_start_unix_s, rec.start_unix_s);

  const Recording clean = noise_recording(60);
  LabelStream labels = grid_labels(30, clean.start_unix_s);
  labels.erase(labels.begin() + 3);
  seqs = tokenize(clean, &labels, cfg);
  ASSERT_EQ(seqs.size(), 1u);
  EXPECT_EQ(seqs[0].tokens.front().t_start_unix_s, clean.start_unix_s + 1800);
}

TEST(Tokenize, Deterministic) {
  const Recording rec = noise_recording(30);
  const auto a = tokenize(rec, nullptr, TokenizerConfig{});
  const auto b = tokenize(rec, nullptr, TokenizerConfig{});
  for (std::size_t t = 0; t < 15; ++t) EXPECT_EQ(a[0].tokens[t].features, b[0].tokens[t].features);
}

TEST(Mask, Counts) {
  EXPECT_EQ(masked_token_count(15, 0.3), 5u);
  EXPECT_EQ(masked_token_count(15, 0.0), 0u);
  EXPECT_EQ(masked_token_count(15, 1.0), 15u);
  EXPECT_EQ(masked_token_count(10, 0.25), 3u);
  EXPECT_THROW(masked_token_count(15, 1.5), ValidationError);
}

TEST(Mask, ApplyZeroesSelectedRowsOnly) {
  const auto seqs = testutil::random_sequences(1, 15, 125, 1);
  const Sequence before = seqs[0];
  for (double ratio : {0.0, 0.3, 1.0}) {
    auto [m, plan] = apply_mask(seqs[0], ratio, 42);
    EXPECT_EQ(plan.masked_indices.size(), masked_token_count(15, ratio));
    EXPECT_EQ(plan.seed_used, 42u);
    const std::set<std::size_t> masked(plan.masked_indices.begin(), plan.masked_indices.end());
    EXPECT_EQ(masked.size(), plan.masked_indices.size());
    const Matrix orig = seqs[0].feature_matrix();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      if (masked.count(static_cast<std::size_t>(r))) EXPECT_TRUE(m.row(r).isZero(0.0));
      else EXPECT_EQ(m.row(r), orig.row(r));
    }
  }
  EXPECT_EQ(seqs[0].tokens[0].features, before.tokens[0].features);
  EXPECT_EQ(*seqs[0].labels, *before.labels);
}

TEST(Mask, DeterministicGivenSeed) {
  EXPECT_EQ(draw_mask(15, 0.3, 7).masked_indices, draw_mask(15, 0.3, 7).masked_indices);
}

TEST(Mask, UniformOverPositions) {
  std::vector<int> hits(15, 0);
  const int draws = 10000;
  for (int d = 0; d < draws; ++d) {
    const auto plan = draw_mask(15, 0.3, derive_seed(123, static_cast<std::uint64_t>(d)));
    ASSERT_EQ(plan.masked_indices.size(), 5u);
    for (auto i : plan.masked_indices) ++hits[i];
  }
  for (int h : hits) EXPECT_NEAR(static_cast<double>(h) / draws, 1.0 / 3.0, 0.02);
}
