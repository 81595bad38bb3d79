#include "dbsfm/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>
#include <thread>

#include "dbsfm/error.hpp"
#include "dbsfm/rng.hpp"

namespace fs = std::filesystem;

namespace dbsfm {

double pearson_r(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ValidationError("pearson_r: inputs differ in length");
  if (x.size() < 2) throw ValidationError("pearson_r: need at least 2 samples");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) throw UndefinedCorrelation("pearson_r: constant input");
  const double r = sxy / std::sqrt(sxx * syy);
  return std::clamp(r, -1.0, 1.0);
}

std::vector<std::string> CvSummary::failed_subjects() const {
  std::vector<std::string> out;
  for (const auto& f : folds) {
    if (!f.ok) out.push_back(f.held_out_subject);
  }
  return out;
}

std::array<SymptomSummary, kNumSymptoms> summarize(std::span<const FoldResult> folds) {
  std::array<SymptomSummary, kNumSymptoms> out;
  for (std::size_t s = 0; s < kNumSymptoms; ++s) {
    std::vector<double> rs;
    for (const auto& f : folds) {
      if (f.ok && f.symptoms[s].r) rs.push_back(*f.symptoms[s].r);
    }
    out[s].n_defined = rs.size();
    if (rs.empty()) continue;
    const double n = static_cast<double>(rs.size());
    const double mean = std::accumulate(rs.begin(), rs.end(), 0.0) / n;
    double var = 0.0;
    for (double r : rs) var += (r - mean) * (r - mean);
    out[s].mean = mean;
    out[s].std = std::sqrt(var / n);
  }
  return out;
}

std::uint64_t fold_seed(std::uint64_t seed, const std::string& subject_id) {
  return derive_seed(derive_seed(seed, "fold"), subject_id);
}

std::vector<SubjectData> permute_subject_labels(std::span<const SubjectData> data, std::uint64_t seed) {
  std::vector<SubjectData> out(data.begin(), data.end());
  for (auto& subject : out) {
    std::vector<SymptomScores> pool;
    for (const auto& seq : subject.sequences) {
      if (seq.labels) pool.insert(pool.end(), seq.labels->begin(), seq.labels->end());
    }
    Rng rng(derive_seed(derive_seed(seed, "permute"), subject.subject_id));
    std::shuffle(pool.begin(), pool.end(), rng);
    std::size_t k = 0;
    for (auto& seq : subject.sequences) {
      if (!seq.labels) continue;
      for (auto& l : *seq.labels) l = pool[k++];
    }
  }
  return out;
}

FoldResult run_fold(std::span<const SubjectData> data, std::size_t held_out, const CvHyper& hyper,
                    PretrainCache* cache) {
  if (held_out >= data.size()) throw ValidationError("run_fold: held-out index out of range");
  FoldResult fold;
  const std::string& subject = data[held_out].subject_id;
  fold.held_out_subject = subject;
  const std::uint64_t fseed = fold_seed(hyper.seed, subject);

  std::vector<Sequence> train;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (i == held_out) continue;
    train.insert(train.end(), data[i].sequences.begin(), data[i].sequences.end());
  }
  if (train.empty()) throw ValidationError("run_fold: no training sequences for fold " + subject);

  auto log = [&](const std::string& msg) {
    if (hyper.log) hyper.log("[" + subject + "] " + msg);
  };

  bool cached = false;
  if (cache != nullptr) {
    std::lock_guard lock(cache->mutex);
    auto it = cache->entries.find(subject);
    if (it != cache->entries.end()) {
      fold.pretrained = it->second.params;
      fold.pretrain = it->second.report;
      cached = true;
    }
  }
  if (!cached) {
    PretrainHyper ph = hyper.pretrain;
    ph.seed = derive_seed(fseed, "pretrain");
    PretrainResult pr = pretrain(train, hyper.model, ph);
    fold.pretrained = std::move(pr.params);
    fold.pretrain = std::move(pr.report);
    log("pretrain done, best epoch " + std::to_string(fold.pretrain.best_epoch));
    if (cache != nullptr) {
      std::lock_guard lock(cache->mutex);
      cache->entries[subject] = {fold.pretrained, fold.pretrain};
    }
  }

  for (std::size_t s = 0; s < kNumSymptoms; ++s) {
    const std::string symptom(kSymptomNames[s]);
    FinetuneHyper fh = hyper.finetune;
    fh.seed = derive_seed(derive_seed(fseed, "finetune"), symptom);
    FinetuneResult fr = finetune(hyper.model, fold.pretrained, train, symptom, fh);
    fold.symptoms[s].finetune = std::move(fr.report);
    fold.symptoms[s].params = std::move(fr.params);
  }

  // Only now touch the held-out subject.
  const auto& test = data[held_out].sequences;
  for (std::size_t s = 0; s < kNumSymptoms; ++s) {
    const std::string symptom(kSymptomNames[s]);
    SymptomFold& sf = fold.symptoms[s];
    const std::vector<double> pred = predict_tokens(hyper.model, sf.params, test, symptom, hyper.finetune.batch);
    std::size_t k = 0;
    std::vector<double> truth, predicted;
    for (const auto& seq : test) {
      for (std::size_t t = 0; t < seq.tokens.size(); ++t, ++k) {
        if (!seq.labels) continue;
        const double y = (*seq.labels)[t][s];
        sf.series.push_back({seq.tokens[t].t_start_unix_s, y, pred[k]});
        truth.push_back(y);
        predicted.push_back(pred[k]);
      }
    }
    try {
      sf.r = pearson_r(truth, predicted);
    } catch (const UndefinedCorrelation&) {
      sf.r.reset();
    } catch (const ValidationError&) {
      sf.r.reset();
    }
    char buf[64];
    if (sf.r) std::snprintf(buf, sizeof(buf), "%.4f", *sf.r);
    log(symptom + " r=" + (sf.r ? std::string(buf) : std::string("undefined")) + " after " +
        std::to_string(sf.finetune.epochs_run) + " finetune epochs");
  }
  fold.ok = true;
  return fold;
}

CvSummary run_loso(std::span<const SubjectData> data, const CvHyper& hyper, PretrainCache* cache) {
  if (data.size() < 2) throw ValidationError("run_loso: need at least 2 subjects");

  std::vector<SubjectData> permuted;
  std::span<const SubjectData> used = data;
  if (hyper.permute_labels) {
    permuted = permute_subject_labels(data, hyper.seed);
    used = permuted;
  }

  CvSummary summary;
  summary.permuted = hyper.permute_labels;
  summary.folds.resize(used.size());

  auto run_one = [&](std::size_t i) {
    try {
      summary.folds[i] = run_fold(used, i, hyper, cache);
    } catch (const std::exception& e) {
      FoldResult failed;
      failed.held_out_subject = used[i].subject_id;
      failed.ok = false;
      failed.error = e.what();
      summary.folds[i] = std::move(failed);
      if (hyper.log) hyper.log("[" + used[i].subject_id + "] fold failed: " + e.what());
    }
  };

  const std::size_t jobs = std::max<std::size_t>(1, std::min(hyper.jobs, used.size()));
  if (jobs == 1) {
    for (std::size_t i = 0; i < used.size(); ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    for (std::size_t j = 0; j < jobs; ++j) {
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < used.size(); i = next++) run_one(i);
      });
    }
    for (auto& w : workers) w.join();
  }

  summary.symptoms = summarize(summary.folds);
  return summary;
}

// ---- result files ----------------------------------------------------------------

namespace {

std::string g17(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

nlohmann::json json_number(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

nlohmann::json summary_block(const CvSummary& summary) {
  nlohmann::json j;
  nlohmann::json symptoms = nlohmann::json::object();
  for (std::size_t s = 0; s < kNumSymptoms; ++s) {
    const auto& sym = summary.symptoms[s];
    symptoms[std::string(kSymptomNames[s])] = {
        {"mean_r", json_number(sym.mean)}, {"std_r", json_number(sym.std)}, {"n_defined", sym.n_defined}};
  }
  j["symptoms"] = std::move(symptoms);
  nlohmann::json folds = nlohmann::json::array();
  for (const auto& f : summary.folds) {
    nlohmann::json fj;
    fj["subject"] = f.held_out_subject;
    fj["status"] = f.ok ? "ok" : "failed";
    if (!f.ok) fj["error"] = f.error;
    nlohmann::json rs = nlohmann::json::object();
    for (std::size_t s = 0; s < kNumSymptoms; ++s) {
      rs[std::string(kSymptomNames[s])] = f.ok && f.symptoms[s].r ? nlohmann::json(*f.symptoms[s].r) : nlohmann::json(nullptr);
    }
    fj["r"] = std::move(rs);
    folds.push_back(std::move(fj));
  }
  j["folds"] = std::move(folds);
  j["failed_subjects"] = summary.failed_subjects();
  j["partial"] = summary.partial();
  return j;
}

}  // namespace

std::string folds_csv(const CvSummary& summary) {
  std::string out = "subject,symptom,r,epochs,status\n";
  for (const auto& f : summary.folds) {
    for (std::size_t s = 0; s < kNumSymptoms; ++s) {
      out += f.held_out_subject + "," + std::string(kSymptomNames[s]) + ",";
      if (!f.ok) {
        out += "nan,0,failed\n";
        continue;
      }
      const auto& sf = f.symptoms[s];
      out += (sf.r ? g17(*sf.r) : std::string("nan")) + "," + std::to_string(sf.finetune.epochs_run) + "," +
             (sf.r ? "ok" : "undefined") + "\n";
    }
  }
  return out;
}

std::string predictions_csv(const FoldResult& fold) {
  std::string out = "t_unix_s";
  for (auto name : kSymptomNames) out += "," + std::string(name) + "_true," + std::string(name) + "_pred";
  out += "\n";
  if (!fold.ok) return out;
  const std::size_t n = fold.symptoms[0].series.size();
  for (std::size_t i = 0; i < n; ++i) {
    out += std::to_string(fold.symptoms[0].series[i].t_unix_s);
    for (std::size_t s = 0; s < kNumSymptoms; ++s) {
      const auto& p = fold.symptoms[s].series[i];
      out += "," + g17(p.truth) + "," + g17(p.pred);
    }
    out += "\n";
  }
  return out;
}

std::string summary_json(const CvSummary& summary, const CvSummary* permutation) {
  nlohmann::json j = summary_block(summary);
  j["format_version"] = 1;
  if (permutation != nullptr) j["permutation_control"] = summary_block(*permutation);
  return j.dump(2) + "\n";
}

void write_cv_outputs(const fs::path& dir, const CvSummary& summary, const CvSummary* permutation) {
  fs::create_directories(dir);
  write_text(dir / "folds.csv", folds_csv(summary));
  for (const auto& f : summary.folds) {
    write_text(dir / ("predictions_" + f.held_out_subject + ".csv"), predictions_csv(f));
    if (!f.ok) continue;
    write_report_csv(f.pretrain, dir / ("pretrain_loss_" + f.held_out_subject + ".csv"));
    for (std::size_t s = 0; s < kNumSymptoms; ++s) {
      write_report_csv(f.symptoms[s].finetune,
                       dir / ("finetune_loss_" + f.held_out_subject + "_" + std::string(kSymptomNames[s]) + ".csv"));
    }
  }
  if (permutation != nullptr) write_text(dir / "folds_permuted.csv", folds_csv(*permutation));
  write_text(dir / "summary.json", summary_json(summary, permutation));
}

// ---- embeddings -------------------------------------------------------------------

std::size_t export_embeddings(const ModelConfig& cfg, const ParamStore& params, std::span<const Sequence> sequences,
                              std::ostream& out, bool include_cls) {
  check_store_matches(params, cfg);
  out << "subject_id,position,t_unix_s";
  for (std::size_t d = 0; d < cfg.d_model; ++d) out << ",e" << d;
  for (auto name : kSymptomNames) out << "," << name;
  out << "\n";

  std::size_t rows = 0;
  constexpr std::size_t kBatch = 50;
  const std::size_t P = cfg.seq_positions;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < sequences.size(); start += kBatch) {
    idx.clear();
    for (std::size_t i = start; i < std::min(start + kBatch, sequences.size()); ++i) idx.push_back(i);
    const Matrix features = stack_features(sequences, idx);
    ad::Tape tape;
    const Matrix latent = tape.value(encode(tape, params, cfg, features));
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const Sequence& seq = sequences[idx[b]];
      auto emit = [&](std::size_t pos, const std::string& label, std::int64_t t, const SymptomScores* scores) {
        out << seq.subject_id << "," << label << "," << t;
        const auto row = latent.row(static_cast<Eigen::Index>(b * P + pos));
        for (Eigen::Index d = 0; d < row.size(); ++d) out << "," << g17(row(d));
        for (std::size_t s = 0; s < kNumSymptoms; ++s) out << "," << (scores ? g17((*scores)[s]) : std::string());
        out << "\n";
        ++rows;
      };
      if (include_cls) emit(0, "CLS", seq.tokens.front().t_start_unix_s, nullptr);
      for (std::size_t t = 0; t < seq.tokens.size(); ++t) {
        emit(t + 1, std::to_string(t), seq.tokens[t].t_start_unix_s, seq.labels ? &(*seq.labels)[t] : nullptr);
      }
    }
  }
  if (!out) throw IoError("failed writing embeddings");
  return rows;
}

std::size_t export_embeddings(const ModelConfig& cfg, const ParamStore& params, std::span<const Sequence> sequences,
                              const fs::path& path, bool include_cls) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return export_embeddings(cfg, params, sequences, out, include_cls);
}

}  // namespace dbsfm
