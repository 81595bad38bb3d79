#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dbsfm/loss_scaling.hpp"
#include "dbsfm/model.hpp"
#include "dbsfm/param_store.hpp"
#include "dbsfm/tokenizer.hpp"

namespace dbsfm {

// ---- optimizer ------------------------------------------------------------

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct OptimState {
  AdamWConfig cfg;
  ParamStore m;  ///< first moments, aligned with the parameters
  ParamStore v;  ///< second moments
  std::int64_t step = 0;
};

OptimState make_optim_state(const ParamStore& params, const AdamWConfig& cfg);

/// One AdamW update of the listed tensors: decoupled decay w *= 1 - lr * wd,
/// then the bias-corrected Adam step. Tensors not listed are untouched.
/// Throws NumericError naming the first tensor with a non-finite gradient.
void adamw_step(ParamStore& params, const ParamStore& grads, OptimState& state,
                std::span<const std::string> trainable);

// ---- reports and early stopping ------------------------------------------

enum class StopReason { kMaxEpochs, kEarlyStop };

struct TrainReport {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  std::size_t epochs_run = 0;
  StopReason stop_reason = StopReason::kMaxEpochs;
  std::size_t best_epoch = 0;  ///< 1-based epoch whose parameters were returned
  double initial_val_loss = std::numeric_limits<double>::quiet_NaN();
  std::size_t optimizer_steps = 0;
};

/// "epoch,train_loss,val_loss" with one row per epoch, 1-based.
std::string report_csv(const TrainReport& report);
void write_report_csv(const TrainReport& report, const std::filesystem::path& path);

/// Patience counter on validation loss. Only a strictly lower loss counts as
/// an improvement.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  /// Records one epoch; returns true when it is the new best.
  bool observe(double val_loss);
  bool should_stop() const { return epochs_ > 0 && since_best_ >= patience_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_; }
  std::size_t epochs_seen() const { return epochs_; }

 private:
  std::size_t patience_;
  std::size_t epochs_ = 0;
  std::size_t best_epoch_ = 0;
  std::size_t since_best_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

// ---- data splits ------------------------------------------------------------

enum class ValSplit {
  kChronological,  ///< last fraction of every subject's sequences
  kSubject,        ///< the last subject (by id) held out as validation
  kInterleaved,    ///< evenly spaced sequences across every subject's recording
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// Sequences are grouped by subject and ordered by start time inside each
/// group. kSubject falls back to kChronological with fewer than two subjects.
SplitIndices split_validation(std::span<const Sequence> sequences, double fraction, ValSplit mode);

// ---- pre-training -----------------------------------------------------------

using EpochCallback = std::function<void(std::size_t epoch, double train_loss, double val_loss)>;

struct PretrainHyper {
  std::size_t epochs = 100;
  std::size_t batch = 50;
  double mask_ratio = 0.3;
  AdamWConfig adamw;
  double val_fraction = 0.1;
  ValSplit split = ValSplit::kInterleaved;
  double hour_weight = 0.0;
  /// false trains with unit spectral weights (plain masked MAE).
  bool scaled_loss = true;
  /// Bin centres of the spectral features; empty means 1, 2, ..., input_dim - 1 Hz.
  std::vector<double> bin_freqs;
  std::uint64_t seed = 0;
  EpochCallback on_epoch;
};

struct PretrainResult {
  ParamStore params;  ///< best-validation parameters
  TrainReport report;
  ScalingVector scaling;
};

/// Loss weights for one token row: the scaling vector (or ones when
/// scaled_loss is off) followed by the hour weight.
std::vector<double> loss_weights(const ScalingVector& scaling, bool scaled_loss);

/// Masked-autoencoder pre-training of the encoder and reconstruction head.
/// The scaling vector is computed once from the training split. Validation
/// masks are fixed per sequence. Throws ValidationError on empty input and
/// NumericError (with epoch and batch) on a non-finite loss.
PretrainResult pretrain(std::span<const Sequence> sequences, const ModelConfig& cfg, const PretrainHyper& hyper);

/// Mean scaled masked MAE of the reconstruction over `sequences`, using the
/// given per-sequence mask seeds.
double masked_reconstruction_loss(const ModelConfig& cfg, const ParamStore& params,
                                  std::span<const Sequence> sequences, std::span<const std::uint64_t> mask_seeds,
                                  double mask_ratio, std::span<const double> weights, std::size_t batch = 50);

// ---- fine-tuning ------------------------------------------------------------

struct FinetuneHyper {
  std::size_t max_epochs = 100;
  std::size_t batch = 50;
  std::size_t patience = 5;
  AdamWConfig adamw;
  double val_fraction = 0.1;
  ValSplit split = ValSplit::kInterleaved;
  bool freeze_backbone = false;
  std::uint64_t seed = 0;
  EpochCallback on_epoch;
};

struct FinetuneResult {
  ParamStore params;  ///< best-validation parameters
  TrainReport report;
};

/// Per-token regression of one symptom with a freshly initialized head and
/// mean-squared-error loss. Stops after `patience` epochs without a strict
/// validation improvement. Throws ValidationError on missing labels or a
/// checkpoint that does not match `cfg`.
FinetuneResult finetune(const ModelConfig& cfg, const ParamStore& checkpoint, std::span<const Sequence> sequences,
                        std::string_view symptom, const FinetuneHyper& hyper);

/// Head output for every token, sequences in order.
std::vector<double> predict_tokens(const ModelConfig& cfg, const ParamStore& params,
                                   std::span<const Sequence> sequences, std::string_view symptom,
                                   std::size_t batch = 50);

/// Stacks the feature matrices of the selected sequences.
Matrix stack_features(std::span<const Sequence> sequences, std::span<const std::size_t> indices);

}  // namespace dbsfm
