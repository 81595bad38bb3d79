#include <gtest/gtest.h>

#include <nlohmann/json.hpp>
#include <numeric>
#include <set>
#include <sstream>

#include "dbsfm/error.hpp"
#include "dbsfm/harness.hpp"
#include "test_util.hpp"

using namespace dbsfm;

namespace {

std::vector<SubjectData> tiny_cohort(std::size_t subjects, std::size_t seqs_each) {
  std::vector<SubjectData> out;
  for (std::size_t s = 0; s < subjects; ++s) {
    char id[8];
    std::snprintf(id, sizeof(id), "S%02zu", s + 1);
    out.push_back({id, testutil::random_sequences(seqs_each, 5, 7, 40 + s, id)});
  }
  return out;
}

CvHyper tiny_hyper() {
  CvHyper h;
  h.model = testutil::small_config(7, 5);
  h.pretrain.epochs = 2;
  h.pretrain.batch = 8;
  h.pretrain.adamw.lr = 1e-3;
  h.finetune.max_epochs = 4;
  h.finetune.batch = 8;
  h.finetune.adamw.lr = 1e-3;
  h.seed = 11;
  return h;
}

FoldResult fake_fold(const std::string& id, bool ok, std::optional<double> r0, std::optional<double> r1) {
  FoldResult f;
  f.held_out_subject = id;
  f.ok = ok;
  f.symptoms[0].r = r0;
  f.symptoms[1].r = r1;
  return f;
}

}  // namespace

TEST(Pearson, Examples) {
  const std::vector<double> x{1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(pearson_r(x, std::vector<double>{2, 4, 6, 8}), 1.0);
  EXPECT_DOUBLE_EQ(pearson_r(x, std::vector<double>{4, 3, 2, 1}), -1.0);
  EXPECT_NEAR(pearson_r(x, std::vector<double>{1, 3, 2, 4}), 0.8, 1e-15);
  EXPECT_THROW(pearson_r(x, std::vector<double>{5, 5, 5, 5}), UndefinedCorrelation);
  EXPECT_THROW(pearson_r(x, std::vector<double>{1, 2}), ValidationError);
  EXPECT_THROW(pearson_r(std::vector<double>{1}, std::vector<double>{1}), ValidationError);
}

TEST(Pearson, AffineInvariantAndBounded) {
  const auto x = testutil::white_noise(500, 1);
  auto y = testutil::white_noise(500, 2);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += 0.5 * x[i];
  const double r = pearson_r(x, y);
  std::vector<double> ya(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) ya[i] = 3.0 * y[i] - 7.0;
  EXPECT_NEAR(pearson_r(x, ya), r, 1e-12);
  for (auto& v : ya) v = -v;
  EXPECT_NEAR(pearson_r(x, ya), -r, 1e-12);
  std::vector<double> xa(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) xa[i] = 2.0 * x[i] + 1.0;
  EXPECT_DOUBLE_EQ(pearson_r(x, xa), 1.0);
}

TEST(Summarize, MeanAndPopulationStdOverDefinedFolds) {
  const std::vector<FoldResult> folds{fake_fold("S01", true, 0.2, 0.5), fake_fold("S02", true, 0.6, std::nullopt),
                                      fake_fold("S03", false, 0.9, 0.9), fake_fold("S04", true, 0.4, 0.1)};
  const auto s = summarize(folds);
  EXPECT_EQ(s[0].n_defined, 3u);
  EXPECT_NEAR(s[0].mean, 0.4, 1e-15);
  EXPECT_NEAR(s[0].std, std::sqrt((0.04 + 0.04 + 0.0) / 3.0), 1e-15);
  EXPECT_EQ(s[1].n_defined, 2u);
  EXPECT_NEAR(s[1].mean, 0.3, 1e-15);
  EXPECT_NEAR(s[1].std, 0.2, 1e-15);

  CvSummary cv;
  cv.folds = folds;
  EXPECT_EQ(cv.failed_subjects(), std::vector<std::string>{"S03"});
  EXPECT_TRUE(cv.partial());
}

TEST(Permutation, ShufflesWithinSubjectOnly) {
  const auto data = tiny_cohort(2, 6);
  const auto perm = permute_subject_labels(data, 3);
  for (std::size_t s = 0; s < data.size(); ++s) {
    std::multiset<double> before, after;
    bool moved = false;
    for (std::size_t q = 0; q < data[s].sequences.size(); ++q) {
      EXPECT_EQ(perm[s].sequences[q].feature_matrix(), data[s].sequences[q].feature_matrix());
      for (std::size_t t = 0; t < 5; ++t) {
        before.insert((*data[s].sequences[q].labels)[t][0]);
        after.insert((*perm[s].sequences[q].labels)[t][0]);
        moved |= (*data[s].sequences[q].labels)[t][0] != (*perm[s].sequences[q].labels)[t][0];
      }
    }
    EXPECT_EQ(before, after);
    EXPECT_TRUE(moved);
  }
}

TEST(Loso, TwoSubjectsProduceTwoFolds) {
  const auto data = tiny_cohort(2, 8);
  const auto cv = run_loso(data, tiny_hyper());
  ASSERT_EQ(cv.folds.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    const auto& f = cv.folds[i];
    EXPECT_TRUE(f.ok) << f.error;
    EXPECT_EQ(f.held_out_subject, data[i].subject_id);
    EXPECT_EQ(f.pretrain.epochs_run, 2u);
    for (const auto& sf : f.symptoms) {
      EXPECT_EQ(sf.series.size(), 40u);
      ASSERT_TRUE(sf.r.has_value());
      EXPECT_GE(*sf.r, -1.0);
      EXPECT_LE(*sf.r, 1.0);
    }
    EXPECT_EQ(f.symptoms[0].series[3].truth, (*data[i].sequences[0].labels)[3][0]);
  }

  const std::string csv = folds_csv(cv);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  const auto j = nlohmann::json::parse(summary_json(cv));
  const double mean = j["symptoms"]["bradykinesia"]["mean_r"].get<double>();
  EXPECT_NEAR(mean, (*cv.folds[0].symptoms[0].r + *cv.folds[1].symptoms[0].r) / 2.0, 1e-12);
  EXPECT_FALSE(j["partial"].get<bool>());
  EXPECT_EQ(j["format_version"].get<int>(), 1);
}

TEST(Loso, ParallelMatchesSerial) {
  const auto data = tiny_cohort(3, 6);
  auto h = tiny_hyper();
  const auto serial = run_loso(data, h);
  h.jobs = 3;
  const auto parallel = run_loso(data, h);
  EXPECT_EQ(folds_csv(serial), folds_csv(parallel));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(serial.folds[i].pretrained, parallel.folds[i].pretrained);
}

TEST(Loso, FailedFoldIsRecordedNotFatal) {
  auto data = tiny_cohort(3, 6);
  data[2].sequences[0].labels.reset();  // S03 cannot be used for supervised training
  const auto cv = run_loso(data, tiny_hyper());
  EXPECT_FALSE(cv.folds[0].ok);
  EXPECT_FALSE(cv.folds[1].ok);
  EXPECT_TRUE(cv.folds[2].ok);
  EXPECT_NE(cv.folds[0].error.find("no labels"), std::string::npos);
  EXPECT_EQ(cv.failed_subjects(), (std::vector<std::string>{"S01", "S02"}));
  const std::string csv = folds_csv(cv);
  EXPECT_NE(csv.find("S01,bradykinesia,nan,0,failed"), std::string::npos);
  EXPECT_TRUE(nlohmann::json::parse(summary_json(cv))["partial"].get<bool>());
}

TEST(Loso, HeldOutDataDoesNotReachTraining) {
  const auto data = tiny_cohort(3, 6);
  const auto h = tiny_hyper();
  const FoldResult a = run_fold(data, 1, h);
  auto mutated = data;
  for (auto& seq : mutated[1].sequences) {
    for (auto& tok : seq.tokens)
      for (auto& f : tok.features) f = -f * 3.0 + 1.0;
    for (auto& l : *seq.labels) l = {l[1] * 5.0, 42.0};
  }
  const FoldResult b = run_fold(mutated, 1, h);
  EXPECT_EQ(a.pretrained, b.pretrained);
  EXPECT_EQ(a.pretrain.val_loss, b.pretrain.val_loss);
  for (std::size_t s = 0; s < kNumSymptoms; ++s) {
    EXPECT_EQ(a.symptoms[s].params, b.symptoms[s].params);
    EXPECT_EQ(a.symptoms[s].finetune.val_loss, b.symptoms[s].finetune.val_loss);
  }
}

TEST(Loso, PretrainCacheReusesCheckpoints) {
  const auto data = tiny_cohort(2, 6);
  auto h = tiny_hyper();
  PretrainCache cache;
  const auto plain = run_loso(data, h, &cache);
  EXPECT_EQ(cache.entries.size(), 2u);
  h.permute_labels = true;
  const auto perm = run_loso(data, h, &cache);
  EXPECT_TRUE(perm.permuted);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(plain.folds[i].pretrained, perm.folds[i].pretrained);
}

TEST(Embeddings, RowCountsAndLayout) {
  const auto cfg = testutil::small_config(7, 5);
  const ParamStore p = init_params(cfg, 1);
  const auto seqs = testutil::random_sequences(3, 5, 7, 2);
  std::ostringstream tokens_only, with_cls;
  EXPECT_EQ(export_embeddings(cfg, p, seqs, tokens_only), 15u);
  EXPECT_EQ(export_embeddings(cfg, p, seqs, with_cls, true), 18u);
  std::istringstream in(with_cls.str());
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  EXPECT_EQ(header, "subject_id,position,t_unix_s,e0,e1,e2,e3,e4,e5,e6,e7,bradykinesia,dyskinesia");
  EXPECT_EQ(first.rfind("S01,CLS,", 0), 0u);
  EXPECT_EQ(std::count(first.begin(), first.end(), ','), 12);
  // token rows reproduce the standalone encoder output
  const auto latent = encoder_forward(seqs[0].feature_matrix(), p, cfg);
  std::string row;
  std::getline(in, row);
  std::stringstream ss(row);
  std::string cell;
  for (int i = 0; i < 3; ++i) std::getline(ss, cell, ',');
  for (Eigen::Index d = 0; d < 8; ++d) {
    std::getline(ss, cell, ',');
    EXPECT_EQ(std::stod(cell), latent.embeddings(1, d));
  }
  std::ostringstream empty;
  EXPECT_EQ(export_embeddings(cfg, p, std::span<const Sequence>{}, empty), 0u);
  const std::string header_only = empty.str();
  EXPECT_EQ(std::count(header_only.begin(), header_only.end(), '\n'), 1);
}
