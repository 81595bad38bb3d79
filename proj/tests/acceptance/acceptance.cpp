// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
// Usage: dbsfm_acceptance [criterion numbers...]   (default: all)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "dbsfm/checkpoint.hpp"
#include "dbsfm/harness.hpp"
#include "dbsfm/loss_scaling.hpp"
#include "dbsfm/run_config.hpp"
#include "dbsfm/spectral.hpp"
#include "dbsfm/synthgen.hpp"
#include "dbsfm/tokenizer.hpp"
#include "dbsfm/training.hpp"
#include "test_util.hpp"

using namespace dbsfm;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, a);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<SubjectData> tokenize_cohort(const std::vector<SubjectSpec>& specs, const TokenizerConfig& tok) {
  std::vector<SubjectData> out;
  for (const auto& spec : specs) {
    const SynthSubject s = synth_subject(spec);
    out.push_back({spec.subject_id, tokenize(s.recording, &s.labels, tok)});
  }
  return out;
}

// ---- 1 -------------------------------------------------------------------------

Outcome parameter_count() {
  RunConfig rc;
  rc.resolve();
  const ModelConfig cfg = rc.model_config();
  const ParamStore p = init_params(cfg, 0);
  auto count = [&](std::initializer_list<std::string> names) {
    std::size_t n = 0;
    for (const auto& name : names) n += p.at(name).values.size();
    return n;
  };
  const std::size_t proj = count({"proj.w", "proj.b"});
  const std::size_t pos = count({"pos_enc"});
  const std::size_t cls = count({"cls"});
  std::vector<std::size_t> layers;
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    std::size_t n = 0;
    for (const auto& name : encoder_tensor_names(cfg))
      if (name.rfind(pre, 0) == 0) n += p.at(name).values.size();
    layers.push_back(n);
  }
  const std::size_t fin = count({"final_ln.gain", "final_ln.bias"});
  const std::size_t total = param_count(p, cfg, "encoder");
  const bool ok = total == 51456 && proj == 8064 && pos == 1024 && cls == 64 && layers.size() == 2 &&
                  layers[0] == 21088 && layers[1] == 21088 && fin == 128 &&
                  proj + pos + cls + layers[0] + layers[1] + fin == total;
  return {ok, std::to_string(total) + " = " + std::to_string(proj) + " + " + std::to_string(pos) + " + " +
                  std::to_string(cls) + " + " + std::to_string(layers[0]) + " + " + std::to_string(layers[1]) + " + " +
                  std::to_string(fin)};
}

// ---- 2 -------------------------------------------------------------------------

Outcome gradient_check() {
  const auto pr = testutil::toy_recon_problem(5);
  const ParamStore params = testutil::randomized_params(pr.cfg, 17);
  ParamStore grads;
  pr.loss(params, &grads);
  const auto res = testutil::finite_difference_check(params, grads, [&](const ParamStore& p) { return pr.loss(p); });
  return {res.max_rel_error < 1e-5, "max relative error " + fmt("%.3g", res.max_rel_error) + " over " +
                                        std::to_string(res.checked) + " parameters (worst: " + res.worst_tensor + ")"};
}

// ---- 3 -------------------------------------------------------------------------

Outcome spectral_oracles() {
  WelchConfig cfg;
  std::vector<double> mean(126, 0.0);
  const int windows = 100;
  for (int w = 0; w < windows; ++w) {
    const auto psd = welch_psd(std::span<const double>(testutil::white_noise(30000, 1000 + w)), cfg);
    for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += psd.power[k] / windows;
  }
  const double expected = 1.0 / 125.0;
  double worst = 0.0;
  for (std::size_t k = 1; k < 125; ++k) worst = std::max(worst, std::abs(mean[k] / expected - 1.0));

  const auto x = testutil::sine(30000, 10.0, 250.0);
  const auto psd = welch_psd(std::span<const double>(x), cfg);
  double band = 0.0;
  for (std::size_t k = 8; k <= 12; ++k) band += psd.power[k];
  const double frac = band / std::accumulate(psd.power.begin(), psd.power.end(), 0.0);
  return {worst < 0.2 && frac >= 0.95,
          "white noise worst bin deviation " + fmt("%.3f", worst) + ", 10 Hz sine power within 8-12 Hz " + fmt("%.4f", frac)};
}

// ---- 4 -------------------------------------------------------------------------

Outcome loss_scaling_identities() {
  const auto k = scaling_vector(MeanLogProfile{{0, 0, 0}}, std::vector<double>{1, 10, 100});
  const bool k_ok = std::abs(k.k[0]) < 1e-15 && std::abs(k.k[1] - 1) < 1e-15 && std::abs(k.k[2] - 2) < 1e-15;

  const auto f = frequency_grid(1, 124);
  std::vector<double> exact(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) exact[i] = 3.0 - std::log10(f[i]);
  const double resid = alignment_residual(MeanLogProfile{exact}, f);

  Rng rng(4);
  std::normal_distribution<double> nd;
  Matrix t(10, 125), p(10, 125);
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    t.data()[i] = nd(rng);
    p.data()[i] = nd(rng);
  }
  const std::vector<std::size_t> mask{0, 3, 4, 9};
  double plain = 0.0;
  for (auto r : mask)
    for (Eigen::Index j = 0; j < 125; ++j) plain += std::abs(t(static_cast<Eigen::Index>(r), j) - p(static_cast<Eigen::Index>(r), j));
  plain /= static_cast<double>(mask.size() * 125);
  const double scaled = scaled_masked_mae(t, p, std::vector<double>(125, 1.0), mask);
  const double diff = std::abs(scaled - plain);
  return {k_ok && resid < 1e-9 && diff < 1e-12, std::string("k = [0,1,2] ") + (k_ok ? "ok" : "WRONG") +
                                                    ", residual " + fmt("%.2g", resid) + ", |k=1 MAE - plain MAE| " +
                                                    fmt("%.2g", diff)};
}

// ---- 5 -------------------------------------------------------------------------

Outcome frequency_bias() {
  const auto t0 = std::chrono::steady_clock::now();
  auto specs = default_cohort_specs(5, 1.0, 55);
  for (auto& s : specs) s.spectrum.beta = 1.5;
  const TokenizerConfig tok;
  const auto cohort = tokenize_cohort(specs, tok);
  std::vector<Sequence> train, test;
  for (std::size_t i = 0; i + 1 < cohort.size(); ++i) train.insert(train.end(), cohort[i].sequences.begin(), cohort[i].sequences.end());
  test = cohort.back().sequences;

  ModelConfig cfg;
  cfg.d_model = 16;
  cfg.d_ff = 16;
  cfg.n_heads = 2;
  cfg.n_layers = 1;
  cfg.head_hidden = 8;
  PretrainHyper h;
  h.epochs = 30;
  h.batch = 16;
  h.adamw.lr = 1e-3;
  h.bin_freqs = tok.bin_freqs();
  h.seed = 8;

  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < test.size(); ++i) seeds.push_back(derive_seed(derive_seed(99, "eval-mask"), i));
  // unweighted MAE restricted to bins >= 50 Hz
  std::vector<double> w(cfg.input_dim, 0.0);
  std::size_t n_high = 0;
  for (std::size_t i = 0; i < h.bin_freqs.size(); ++i)
    if (h.bin_freqs[i] >= 50.0) {
      w[i] = 1.0;
      ++n_high;
    }
  const double rescale = static_cast<double>(cfg.input_dim) / static_cast<double>(n_high);

  double mae[2];
  for (int scaled = 0; scaled < 2; ++scaled) {
    h.scaled_loss = scaled == 1;
    const auto res = pretrain(train, cfg, h);
    mae[scaled] = rescale * masked_reconstruction_loss(cfg, res.params, test, seeds, h.mask_ratio, w);
  }
  return {mae[1] < mae[0], "held-out MAE on bins >= 50 Hz: scaled " + fmt("%.5f", mae[1]) + " vs unscaled " +
                               fmt("%.5f", mae[0]) + " (" + fmt("%.0f", seconds_since(t0)) + " s)"};
}

// ---- 6 -------------------------------------------------------------------------

Outcome masking_contract() {
  std::vector<int> hits(15, 0);
  bool counts_ok = true;
  const int draws = 10000;
  for (int d = 0; d < draws; ++d) {
    const auto plan = draw_mask(15, 0.3, derive_seed(derive_seed(2024, "acceptance-mask"), static_cast<std::uint64_t>(d)));
    counts_ok &= plan.masked_indices.size() == 5 && std::set<std::size_t>(plan.masked_indices.begin(), plan.masked_indices.end()).size() == 5;
    for (auto i : plan.masked_indices) ++hits[i];
  }
  double worst = 0.0;
  for (int h : hits) worst = std::max(worst, std::abs(static_cast<double>(h) / draws - 1.0 / 3.0));
  return {counts_ok && worst <= 0.02, std::string("5 of 15 masked in every draw: ") + (counts_ok ? "yes" : "no") +
                                          ", worst per-position deviation from 1/3 " + fmt("%.4f", worst)};
}

// ---- 7 and 10 share one cross-validation run -------------------------------------

struct CohortRun {
  CvSummary real;
  CvSummary permuted;
  double seconds = 0.0;
};

const CohortRun& cohort_run() {
  static std::optional<CohortRun> cached;
  if (cached) return *cached;
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig rc;
  rc.pretrain.epochs = 50;
  rc.resolve();
  const auto data = tokenize_cohort(default_cohort_specs(8, 2.0, rc.seed), rc.tokenizer);
  CvHyper hyper;
  hyper.model = rc.model_config();
  hyper.pretrain = rc.pretrain_hyper();
  hyper.finetune = rc.finetune_hyper();
  hyper.seed = rc.seed;
  PretrainCache cache;
  CohortRun run;
  run.real = run_loso(data, hyper, &cache);
  hyper.permute_labels = true;
  run.permuted = run_loso(data, hyper, &cache);
  run.seconds = seconds_since(t0);
  cached = std::move(run);
  return *cached;
}

Outcome planted_recovery() {
  const auto& run = cohort_run();
  const auto& brady = run.real.symptoms[0];
  std::vector<double> perm_abs;
  for (const auto& f : run.permuted.folds)
    if (f.ok && f.symptoms[0].r) perm_abs.push_back(std::abs(*f.symptoms[0].r));
  const double perm_mean_abs =
      perm_abs.empty() ? std::nan("") : std::accumulate(perm_abs.begin(), perm_abs.end(), 0.0) / perm_abs.size();
  std::string per_fold;
  for (const auto& f : run.real.folds)
    per_fold += " " + f.held_out_subject + "=" + (f.ok && f.symptoms[0].r ? fmt("%.2f", *f.symptoms[0].r) : "n/a");
  const bool ok = !run.real.partial() && brady.n_defined == 8 && brady.mean >= 0.5 && perm_abs.size() == 8 &&
                  perm_mean_abs < 0.15;
  return {ok, "bradykinesia mean r " + fmt("%.3f", brady.mean) + " +/- " + fmt("%.3f", brady.std) + " (" + per_fold.substr(1) +
                  "), dyskinesia mean r " + fmt("%.3f", run.real.symptoms[1].mean) + ", permutation mean |r| " +
                  fmt("%.3f", perm_mean_abs) + ", " + fmt("%.0f", run.seconds) + " s"};
}

Outcome validation_plateau() {
  const auto& run = cohort_run();
  std::vector<double> curve;
  std::size_t folds = 0;
  for (const auto& f : run.real.folds) {
    if (!f.ok) continue;
    const auto& v = f.pretrain.val_loss;
    if (curve.empty()) curve.assign(v.size(), 0.0);
    if (v.size() != curve.size()) return {false, "pretraining curves differ in length"};
    for (std::size_t e = 0; e < v.size(); ++e) curve[e] += v[e];
    ++folds;
  }
  if (folds == 0) return {false, "no completed folds"};
  for (double& c : curve) c /= static_cast<double>(folds);
  const std::size_t E = curve.size();
  const std::size_t q = E - E / 4;  // last quarter starts after epoch q
  const double total = curve.front() - curve.back();
  const double late = curve[q - 1] - curve.back();
  return {total > 0.0 && late < 0.05 * total,
          "fold-mean validation loss " + fmt("%.4f", curve.front()) + " -> " + fmt("%.4f", curve.back()) +
              "; improvement over epochs " + std::to_string(q) + "-" + std::to_string(E) + " is " +
              fmt("%.2f", 100.0 * late / total) + "% of the total decrease"};
}

// ---- 8 -------------------------------------------------------------------------

Outcome determinism() {
  auto specs = default_cohort_specs(3, 0.25, 7);
  const auto data = tokenize_cohort(specs, TokenizerConfig{});
  CvHyper h;
  h.model = testutil::small_config(125, 15);
  h.pretrain.epochs = 3;
  h.pretrain.bin_freqs = TokenizerConfig{}.bin_freqs();
  h.finetune.max_epochs = 3;
  h.seed = 21;
  const auto a = run_loso(data, h);
  const auto b = run_loso(data, h);
  bool same = folds_csv(a) == folds_csv(b) && summary_json(a) == summary_json(b);
  for (std::size_t i = 0; i < a.folds.size(); ++i) {
    same &= report_csv(a.folds[i].pretrain) == report_csv(b.folds[i].pretrain);
    same &= predictions_csv(a.folds[i]) == predictions_csv(b.folds[i]);
    for (std::size_t s = 0; s < kNumSymptoms; ++s)
      same &= report_csv(a.folds[i].symptoms[s].finetune) == report_csv(b.folds[i].symptoms[s].finetune);
  }

  const ParamStore& params = a.folds[0].pretrained;
  const Checkpoint back = decode_checkpoint(encode_checkpoint(h.model, params));
  const Matrix x = data[0].sequences[0].feature_matrix();
  const auto before = encoder_forward(x, params, h.model);
  const auto after = encoder_forward(x, back.params, back.config);
  const bool bit_identical =
      before.embeddings.size() == after.embeddings.size() &&
      std::memcmp(before.embeddings.data(), after.embeddings.data(), sizeof(double) * before.embeddings.size()) == 0;
  return {same && bit_identical, std::string("repeated LOSO outputs identical: ") + (same ? "yes" : "no") +
                                     ", checkpoint round-trip forward pass bit-identical: " + (bit_identical ? "yes" : "no")};
}

// ---- 9 -------------------------------------------------------------------------

Outcome leakage_guard() {
  const auto data = tokenize_cohort(default_cohort_specs(3, 0.25, 9), TokenizerConfig{});
  CvHyper h;
  h.model = testutil::small_config(125, 15);
  h.pretrain.epochs = 3;
  h.pretrain.bin_freqs = TokenizerConfig{}.bin_freqs();
  h.finetune.max_epochs = 3;
  h.seed = 4;
  const std::size_t held = 1;
  const FoldResult a = run_fold(data, held, h);
  auto mutated = data;
  Rng rng(1);
  std::normal_distribution<double> nd;
  for (auto& seq : mutated[held].sequences) {
    for (auto& tok : seq.tokens)
      for (auto& f : tok.features) f = nd(rng);
    for (auto& l : *seq.labels) l = {nd(rng), nd(rng)};
  }
  const FoldResult b = run_fold(mutated, held, h);
  bool same = a.pretrained == b.pretrained;
  for (std::size_t s = 0; s < kNumSymptoms; ++s) same &= a.symptoms[s].params == b.symptoms[s].params;
  const bool predictions_changed = predictions_csv(a) != predictions_csv(b);
  return {same && predictions_changed, std::string("trained parameters bit-identical after mutating ") +
                                           data[held].subject_id + ": " + (same ? "yes" : "no") +
                                           " (held-out predictions changed: " + (predictions_changed ? "yes" : "no") + ")"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"parameter count", parameter_count},
      {"gradient check", gradient_check},
      {"spectral oracles", spectral_oracles},
      {"loss-scaling identities", loss_scaling_identities},
      {"frequency-bias direction", frequency_bias},
      {"masking contract", masking_contract},
      {"planted recovery", planted_recovery},
      {"determinism and persistence", determinism},
      {"leakage guard", leakage_guard},
      {"validation plateau", validation_plateau},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!wanted.empty() && !wanted.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all &= o.pass;
    std::printf("criterion %d %s: %s: %s\n", id, o.pass ? "PASS" : "FAIL", criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return all ? 0 : 1;
}
