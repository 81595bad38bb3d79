#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dbsfm/model.hpp"
#include "dbsfm/param_store.hpp"
#include "dbsfm/tokenizer.hpp"
#include "dbsfm/training.hpp"

namespace dbsfm {

/// Sample Pearson correlation. Throws ValidationError on a length mismatch or
/// fewer than 2 samples and UndefinedCorrelation when either input is constant.
double pearson_r(std::span<const double> x, std::span<const double> y);

struct SubjectData {
  std::string subject_id;
  std::vector<Sequence> sequences;
};

struct TokenPrediction {
  std::int64_t t_unix_s = 0;
  double truth = 0.0;
  double pred = 0.0;
};

struct SymptomFold {
  std::optional<double> r;  ///< nullopt when the correlation is undefined
  std::vector<TokenPrediction> series;
  TrainReport finetune;
  ParamStore params;
};

struct FoldResult {
  std::string held_out_subject;
  bool ok = false;
  std::string error;  ///< set when !ok
  TrainReport pretrain;
  ParamStore pretrained;
  std::array<SymptomFold, kNumSymptoms> symptoms;
};

struct SymptomSummary {
  double mean = std::numeric_limits<double>::quiet_NaN();
  double std = std::numeric_limits<double>::quiet_NaN();  ///< population std over defined folds
  std::size_t n_defined = 0;
};

struct CvSummary {
  std::vector<FoldResult> folds;  ///< in subject order
  std::array<SymptomSummary, kNumSymptoms> symptoms;
  bool permuted = false;

  std::vector<std::string> failed_subjects() const;
  bool partial() const { return !failed_subjects().empty(); }
};

/// Recomputes mean and population std of the defined per-fold coefficients.
std::array<SymptomSummary, kNumSymptoms> summarize(std::span<const FoldResult> folds);

using LogFn = std::function<void(const std::string&)>;

struct CvHyper {
  ModelConfig model;
  PretrainHyper pretrain;  ///< seed is replaced per fold
  FinetuneHyper finetune;  ///< seed is replaced per fold
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  /// Permutation control: labels are shuffled within every subject (held-out
  /// included) before anything else happens.
  bool permute_labels = false;
  LogFn log;
};

/// Pre-training ignores labels, so a permutation-control run can reuse the
/// checkpoints of the real run. Entries are keyed by held-out subject.
struct PretrainCache {
  struct Entry {
    ParamStore params;
    TrainReport report;
  };
  std::map<std::string, Entry> entries;
  std::mutex mutex;
};

/// Fold seed for a held-out subject.
std::uint64_t fold_seed(std::uint64_t seed, const std::string& subject_id);

/// Labels shuffled at token level within each subject, deterministically.
std::vector<SubjectData> permute_subject_labels(std::span<const SubjectData> data, std::uint64_t seed);

/// One fold: pre-train and fine-tune on every subject except `held_out`, then
/// predict every token of `held_out`. The held-out subject's data is read only
/// after training finished. Errors propagate.
FoldResult run_fold(std::span<const SubjectData> data, std::size_t held_out, const CvHyper& hyper,
                    PretrainCache* cache = nullptr);

/// Leave-one-subject-out cross-validation. A failing fold is recorded and the
/// remaining folds continue. Throws ValidationError for fewer than 2 subjects.
CvSummary run_loso(std::span<const SubjectData> data, const CvHyper& hyper, PretrainCache* cache = nullptr);

// ---- result files ----------------------------------------------------------------

/// subject,symptom,r,epochs,status
std::string folds_csv(const CvSummary& summary);
/// t_unix_s then <symptom>_true,<symptom>_pred per symptom.
std::string predictions_csv(const FoldResult& fold);
std::string summary_json(const CvSummary& summary, const CvSummary* permutation = nullptr);

/// Writes folds.csv, predictions_<id>.csv, loss curves and summary.json.
void write_cv_outputs(const std::filesystem::path& dir, const CvSummary& summary,
                      const CvSummary* permutation = nullptr);

// ---- embeddings -------------------------------------------------------------------

/// One row per token (and, with include_cls, one CLS row per sequence):
/// subject_id,position,t_unix_s,e0..e<d-1>,<symptoms>. Returns the number of
/// data rows written.
std::size_t export_embeddings(const ModelConfig& cfg, const ParamStore& params, std::span<const Sequence> sequences,
                              std::ostream& out, bool include_cls = false);
std::size_t export_embeddings(const ModelConfig& cfg, const ParamStore& params, std::span<const Sequence> sequences,
                              const std::filesystem::path& path, bool include_cls = false);

}  // namespace dbsfm
