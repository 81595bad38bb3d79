#include "dbsfm/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "dbsfm/error.hpp"
#include "dbsfm/rng.hpp"

namespace dbsfm {

// ---- optimizer ------------------------------------------------------------

OptimState make_optim_state(const ParamStore& params, const AdamWConfig& cfg) {
  return OptimState{cfg, params.zeros_like(), params.zeros_like(), 0};
}

void adamw_step(ParamStore& params, const ParamStore& grads, OptimState& state,
                std::span<const std::string> trainable) {
  for (const auto& name : trainable) {
    for (double g : grads.at(name).values) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in tensor '" + name + "'");
    }
  }
  const AdamWConfig& c = state.cfg;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  const double decay = 1.0 - c.lr * c.weight_decay;

  for (const auto& name : trainable) {
    auto& w = params.at(name).values;
    const auto& g = grads.at(name).values;
    auto& m = state.m.at(name).values;
    auto& v = state.v.at(name).values;
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] *= decay;
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      w[i] -= c.lr * m_hat / (std::sqrt(v_hat) + c.eps);
    }
  }
}

// ---- reports ----------------------------------------------------------------

std::string report_csv(const TrainReport& report) {
  std::ostringstream out;
  out << "epoch,train_loss,val_loss\n";
  char buf[96];
  for (std::size_t e = 0; e < report.epochs_run; ++e) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g\n", e + 1, report.train_loss[e], report.val_loss[e]);
    out << buf;
  }
  return out.str();
}

void write_report_csv(const TrainReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write report " + path.string());
  out << report_csv(report);
}

bool EarlyStopping::observe(double val_loss) {
  ++epochs_;
  if (val_loss < best_) {
    best_ = val_loss;
    best_epoch_ = epochs_;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

// ---- splits -----------------------------------------------------------------

namespace {

std::map<std::string, std::vector<std::size_t>> group_by_subject(std::span<const Sequence> sequences) {
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < sequences.size(); ++i) groups[sequences[i].subject_id].push_back(i);
  for (auto& [id, idx] : groups) {
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      const auto ta = sequences[a].tokens.empty() ? 0 : sequences[a].tokens.front().t_start_unix_s;
      const auto tb = sequences[b].tokens.empty() ? 0 : sequences[b].tokens.front().t_start_unix_s;
      return ta < tb;
    });
  }
  return groups;
}

}  // namespace

SplitIndices split_validation(std::span<const Sequence> sequences, double fraction, ValSplit mode) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw ValidationError("validation fraction must lie in [0, 1)");
  const auto groups = group_by_subject(sequences);
  SplitIndices out;
  if (mode == ValSplit::kSubject && groups.size() >= 2) {
    const auto last = std::prev(groups.end());
    for (auto it = groups.begin(); it != groups.end(); ++it) {
      auto& dst = (it == last) ? out.val : out.train;
      dst.insert(dst.end(), it->second.begin(), it->second.end());
    }
  } else {
    for (const auto& [id, idx] : groups) {
      const auto n_val = std::min(idx.size(), static_cast<std::size_t>(std::floor(fraction * static_cast<double>(idx.size()) + 0.5)));
      if (mode == ValSplit::kInterleaved) {
        // centre of each of n_val equal stretches of the recording
        std::vector<char> is_val(idx.size(), 0);
        for (std::size_t j = 0; j < n_val; ++j)
          is_val[(2 * j + 1) * idx.size() / (2 * n_val)] = 1;
        for (std::size_t i = 0; i < idx.size(); ++i) (is_val[i] ? out.val : out.train).push_back(idx[i]);
        continue;
      }
      const std::size_t n_train = idx.size() - n_val;
      out.train.insert(out.train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
      out.val.insert(out.val.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
    }
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  return out;
}

Matrix stack_features(std::span<const Sequence> sequences, std::span<const std::size_t> indices) {
  if (indices.empty()) return Matrix(0, 0);
  const auto& first = sequences[indices.front()];
  const auto T = static_cast<Eigen::Index>(first.tokens.size());
  const auto F = static_cast<Eigen::Index>(first.tokens.front().features.size());
  Matrix out(T * static_cast<Eigen::Index>(indices.size()), F);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto& seq = sequences[indices[b]];
    if (static_cast<Eigen::Index>(seq.tokens.size()) != T) throw ValidationError("sequences differ in token count");
    for (Eigen::Index t = 0; t < T; ++t) {
      const auto& f = seq.tokens[static_cast<std::size_t>(t)].features;
      if (static_cast<Eigen::Index>(f.size()) != F) throw ValidationError("tokens differ in feature count");
      out.row(static_cast<Eigen::Index>(b) * T + t) = Eigen::Map<const RowVector>(f.data(), F);
    }
  }
  return out;
}

// ---- pre-training -------------------------------------------------------------

std::vector<double> loss_weights(const ScalingVector& scaling, bool scaled_loss) {
  std::vector<double> w = scaling.extended();
  if (!scaled_loss) std::fill(w.begin(), w.end() - 1, 1.0);
  return w;
}

namespace {

struct MaskedBatch {
  Matrix inputs;
  Matrix targets;
  std::vector<char> flagged;
  std::size_t masked_rows = 0;
};

MaskedBatch build_masked_batch(std::span<const Sequence> sequences, std::span<const std::size_t> indices,
                               std::span<const std::uint64_t> seeds, double ratio) {
  MaskedBatch batch;
  batch.targets = stack_features(sequences, indices);
  batch.inputs = batch.targets;
  batch.flagged.assign(static_cast<std::size_t>(batch.targets.rows()), 0);
  const std::size_t T = sequences[indices.front()].tokens.size();
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const MaskPlan plan = draw_mask(T, ratio, seeds[b]);
    for (std::size_t idx : plan.masked_indices) {
      const std::size_t row = b * T + idx;
      batch.inputs.row(static_cast<Eigen::Index>(row)).setZero();
      batch.flagged[row] = 1;
    }
    batch.masked_rows += plan.masked_indices.size();
  }
  return batch;
}

struct LossSum {
  double sum = 0.0;   // loss * normalizer
  double count = 0.0; // normalizer
  double mean() const { return sum / count; }
};

// Runs one masked batch; returns the batch loss and, when requested, the
// parameter gradients.
double masked_batch_loss(const ModelConfig& cfg, const ParamStore& params, const MaskedBatch& batch,
                         const RowVector& weights, ParamStore* grads) {
  ad::Tape tape;
  ad::Var latent = encode(tape, params, cfg, batch.inputs);
  ad::Var pred = reconstruct(tape, params, cfg, latent);
  const double normalizer = static_cast<double>(batch.masked_rows) * static_cast<double>(cfg.input_dim);
  ad::Var loss = ad::weighted_masked_abs(tape, pred, batch.targets, weights, batch.flagged, normalizer);
  const double value = tape.value(loss)(0, 0);
  if (grads != nullptr) {
    tape.backward(loss);
    *grads = tape.gradients(params);
  }
  return value;
}

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

double masked_reconstruction_loss(const ModelConfig& cfg, const ParamStore& params,
                                  std::span<const Sequence> sequences, std::span<const std::uint64_t> mask_seeds,
                                  double mask_ratio, std::span<const double> weights, std::size_t batch) {
  if (sequences.empty()) throw ValidationError("no sequences to evaluate");
  if (mask_seeds.size() != sequences.size()) throw ValidationError("one mask seed per sequence is required");
  const RowVector w = Eigen::Map<const RowVector>(weights.data(), static_cast<Eigen::Index>(weights.size()));
  LossSum total;
  std::vector<std::size_t> idx;
  std::vector<std::uint64_t> seeds;
  for (std::size_t start = 0; start < sequences.size(); start += batch) {
    idx.clear();
    seeds.clear();
    for (std::size_t i = start; i < std::min(start + batch, sequences.size()); ++i) {
      idx.push_back(i);
      seeds.push_back(mask_seeds[i]);
    }
    const MaskedBatch mb = build_masked_batch(sequences, idx, seeds, mask_ratio);
    const double n = static_cast<double>(mb.masked_rows) * static_cast<double>(cfg.input_dim);
    total.sum += masked_batch_loss(cfg, params, mb, w, nullptr) * n;
    total.count += n;
  }
  return total.mean();
}

PretrainResult pretrain(std::span<const Sequence> sequences, const ModelConfig& cfg, const PretrainHyper& hyper) {
  cfg.validate();
  if (sequences.empty()) throw ValidationError("pretrain: no sequences");
  if (hyper.batch == 0 || hyper.epochs == 0) throw ValidationError("pretrain: batch and epochs must be positive");
  if (masked_token_count(cfg.tokens(), hyper.mask_ratio) == 0)
    throw ValidationError("pretrain: mask ratio masks no tokens");
  for (const auto& s : sequences) {
    if (s.tokens.size() != cfg.tokens()) throw ValidationError("pretrain: sequence length does not match the model");
  }

  const SplitIndices split = split_validation(sequences, hyper.val_fraction, hyper.split);
  if (split.train.empty()) throw ValidationError("pretrain: validation split leaves no training sequences");

  // Scaling vector from training spectra only.
  const std::size_t n_bins = cfg.input_dim - 1;
  std::vector<double> freqs = hyper.bin_freqs;
  if (freqs.empty()) freqs = frequency_grid(1.0, static_cast<double>(n_bins));
  if (freqs.size() != n_bins) throw ValidationError("pretrain: bin_freqs does not match input_dim - 1");
  const Matrix train_features = stack_features(sequences, split.train);
  const MeanLogProfile profile = mean_log_profile(train_features.leftCols(static_cast<Eigen::Index>(n_bins)));

  PretrainResult result;
  result.scaling = scaling_vector(profile, freqs, hyper.hour_weight);
  const std::vector<double> weight_vec = loss_weights(result.scaling, hyper.scaled_loss);
  const RowVector weights = Eigen::Map<const RowVector>(weight_vec.data(), static_cast<Eigen::Index>(weight_vec.size()));

  ParamStore params = init_params(cfg, hyper.seed);
  const auto trainable = concat(encoder_tensor_names(cfg), recon_tensor_names());
  OptimState opt = make_optim_state(params, hyper.adamw);

  std::vector<Sequence> val_seqs;
  std::vector<std::uint64_t> val_seeds;
  for (std::size_t i : split.val) {
    val_seqs.push_back(sequences[i]);
    val_seeds.push_back(derive_seed(derive_seed(hyper.seed, "val-mask"), i));
  }

  TrainReport& report = result.report;
  ParamStore best = params;
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> order = split.train;
  const std::uint64_t shuffle_seed = derive_seed(hyper.seed, "shuffle");
  const std::uint64_t mask_seed = derive_seed(hyper.seed, "mask");

  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(shuffle_seed, epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    LossSum train;
    for (std::size_t start = 0, b = 0; start < order.size(); start += hyper.batch, ++b) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(hyper.batch, order.size() - start));
      std::vector<std::uint64_t> seeds;
      seeds.reserve(idx.size());
      for (std::size_t i : idx) seeds.push_back(derive_seed(mask_seed, epoch, i));
      const MaskedBatch mb = build_masked_batch(sequences, idx, seeds, hyper.mask_ratio);
      ParamStore grads;
      const double loss = masked_batch_loss(cfg, params, mb, weights, &grads);
      if (!std::isfinite(loss)) {
        throw NumericError("pretrain: non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                           std::to_string(b + 1));
      }
      adamw_step(params, grads, opt, trainable);
      ++report.optimizer_steps;
      const double n = static_cast<double>(mb.masked_rows) * static_cast<double>(cfg.input_dim);
      train.sum += loss * n;
      train.count += n;
    }

    const double train_loss = train.mean();
    const double val_loss = val_seqs.empty()
                                ? train_loss
                                : masked_reconstruction_loss(cfg, params, val_seqs, val_seeds, hyper.mask_ratio,
                                                             weight_vec, hyper.batch);
    if (!std::isfinite(val_loss))
      throw NumericError("pretrain: non-finite validation loss at epoch " + std::to_string(epoch + 1));
    report.train_loss.push_back(train_loss);
    report.val_loss.push_back(val_loss);
    report.epochs_run = epoch + 1;
    if (val_loss < best_val) {
      best_val = val_loss;
      best = params;
      report.best_epoch = epoch + 1;
    }
    if (hyper.on_epoch) hyper.on_epoch(epoch + 1, train_loss, val_loss);
  }
  report.stop_reason = StopReason::kMaxEpochs;
  result.params = std::move(best);
  return result;
}

// ---- fine-tuning ----------------------------------------------------------------

namespace {

Matrix stack_labels(std::span<const Sequence> sequences, std::span<const std::size_t> indices, std::size_t symptom) {
  std::size_t rows = 0;
  for (std::size_t i : indices) rows += sequences[i].tokens.size();
  Matrix out(static_cast<Eigen::Index>(rows), 1);
  Eigen::Index r = 0;
  for (std::size_t i : indices) {
    const auto& labels = *sequences[i].labels;
    for (const auto& scores : labels) out(r++, 0) = scores[symptom];
  }
  return out;
}

double regression_batch_loss(const ModelConfig& cfg, const ParamStore& params, const Matrix& inputs,
                             const Matrix& targets, std::string_view symptom, ParamStore* grads) {
  ad::Tape tape;
  ad::Var latent = encode(tape, params, cfg, inputs);
  ad::Var pred = regress(tape, params, cfg, latent, symptom);
  ad::Var loss = ad::squared_error(tape, pred, targets, static_cast<double>(targets.rows()));
  const double value = tape.value(loss)(0, 0);
  if (grads != nullptr) {
    tape.backward(loss);
    *grads = tape.gradients(params);
  }
  return value;
}

double regression_loss(const ModelConfig& cfg, const ParamStore& params, std::span<const Sequence> sequences,
                       std::span<const std::size_t> indices, std::size_t symptom_idx, std::string_view symptom,
                       std::size_t batch) {
  LossSum total;
  for (std::size_t start = 0; start < indices.size(); start += batch) {
    const auto idx = indices.subspan(start, std::min(batch, indices.size() - start));
    const Matrix inputs = stack_features(sequences, idx);
    const Matrix targets = stack_labels(sequences, idx, symptom_idx);
    const double n = static_cast<double>(targets.rows());
    total.sum += regression_batch_loss(cfg, params, inputs, targets, symptom, nullptr) * n;
    total.count += n;
  }
  return total.mean();
}

}  // namespace

FinetuneResult finetune(const ModelConfig& cfg, const ParamStore& checkpoint, std::span<const Sequence> sequences,
                        std::string_view symptom, const FinetuneHyper& hyper) {
  check_store_matches(checkpoint, cfg);
  const std::size_t symptom_idx = symptom_index(symptom);
  if (sequences.empty()) throw ValidationError("finetune: no sequences");
  if (hyper.batch == 0 || hyper.max_epochs == 0) throw ValidationError("finetune: batch and epochs must be positive");
  for (const auto& s : sequences) {
    if (!s.labels) throw ValidationError("finetune: sequence of subject " + s.subject_id + " has no labels");
    if (s.tokens.size() != cfg.tokens() || s.labels->size() != s.tokens.size())
      throw ValidationError("finetune: sequence length does not match the model");
  }

  const SplitIndices split = split_validation(sequences, hyper.val_fraction, hyper.split);
  if (split.train.empty()) throw ValidationError("finetune: validation split leaves no training sequences");

  ParamStore params = checkpoint;
  init_head(params, cfg, symptom, derive_seed(hyper.seed, "head"));
  std::vector<std::string> trainable = head_tensor_names(symptom);
  if (!hyper.freeze_backbone) {
    const auto enc = encoder_tensor_names(cfg);
    trainable.insert(trainable.begin(), enc.begin(), enc.end());
  }
  OptimState opt = make_optim_state(params, hyper.adamw);

  const std::span<const std::size_t> val_idx(split.val);
  auto evaluate = [&](const ParamStore& p) {
    return regression_loss(cfg, p, sequences, val_idx, symptom_idx, symptom, hyper.batch);
  };

  FinetuneResult result;
  TrainReport& report = result.report;
  if (!split.val.empty()) report.initial_val_loss = evaluate(params);

  EarlyStopping stopper(hyper.patience);
  ParamStore best = params;
  std::vector<std::size_t> order = split.train;
  const std::uint64_t shuffle_seed = derive_seed(hyper.seed, "shuffle");

  for (std::size_t epoch = 0; epoch < hyper.max_epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(shuffle_seed, epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    LossSum train;
    for (std::size_t start = 0, b = 0; start < order.size(); start += hyper.batch, ++b) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(hyper.batch, order.size() - start));
      const Matrix inputs = stack_features(sequences, idx);
      const Matrix targets = stack_labels(sequences, idx, symptom_idx);
      ParamStore grads;
      const double loss = regression_batch_loss(cfg, params, inputs, targets, symptom, &grads);
      if (!std::isfinite(loss)) {
        throw NumericError("finetune: non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                           std::to_string(b + 1));
      }
      adamw_step(params, grads, opt, trainable);
      ++report.optimizer_steps;
      const double n = static_cast<double>(targets.rows());
      train.sum += loss * n;
      train.count += n;
    }
    const double train_loss = train.mean();
    const double val_loss = split.val.empty() ? train_loss : evaluate(params);
    if (!std::isfinite(val_loss))
      throw NumericError("finetune: non-finite validation loss at epoch " + std::to_string(epoch + 1));
    report.train_loss.push_back(train_loss);
    report.val_loss.push_back(val_loss);
    report.epochs_run = epoch + 1;
    if (stopper.observe(val_loss)) {
      best = params;
      report.best_epoch = epoch + 1;
    }
    if (hyper.on_epoch) hyper.on_epoch(epoch + 1, train_loss, val_loss);
    if (stopper.should_stop()) {
      report.stop_reason = StopReason::kEarlyStop;
      break;
    }
  }
  if (std::isnan(report.initial_val_loss) && !report.val_loss.empty()) report.initial_val_loss = report.val_loss.front();
  result.params = std::move(best);
  return result;
}

std::vector<double> predict_tokens(const ModelConfig& cfg, const ParamStore& params,
                                   std::span<const Sequence> sequences, std::string_view symptom, std::size_t batch) {
  std::vector<double> out;
  if (batch == 0) batch = 1;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < sequences.size(); start += batch) {
    idx.clear();
    for (std::size_t i = start; i < std::min(start + batch, sequences.size()); ++i) idx.push_back(i);
    const Matrix inputs = stack_features(sequences, idx);
    ad::Tape tape;
    ad::Var latent = encode(tape, params, cfg, inputs);
    ad::Var pred = regress(tape, params, cfg, latent, symptom);
    const Matrix& values = tape.value(pred);
    out.insert(out.end(), values.data(), values.data() + values.size());
  }
  return out;
}

}  // namespace dbsfm
