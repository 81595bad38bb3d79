// dbsfm: synthetic data, pre-training, cross-validation and embedding export.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "dbsfm/checkpoint.hpp"
#include "dbsfm/dataset_io.hpp"
#include "dbsfm/error.hpp"
#include "dbsfm/harness.hpp"
#include "dbsfm/run_config.hpp"
#include "dbsfm/synthgen.hpp"
#include "dbsfm/training.hpp"

namespace fs = std::filesystem;
using namespace dbsfm;

namespace {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3, kPartial = 4 };

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "TOML run configuration");
  cmd->add_option("--set", c.overrides, "override a config key, e.g. --set pretrain.epochs=10");
  cmd->add_flag("-q,--quiet", c.quiet, "no progress output");
}

RunConfig load_config(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : RunConfig::load(c.config);
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.resolve();
  return cfg;
}

void write_resolved(const fs::path& dir, const RunConfig& cfg) {
  fs::create_directories(dir);
  std::ofstream out(dir / "resolved_config.toml", std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / "resolved_config.toml").string());
  out << "# effective configuration of this run\n" << cfg.to_toml();
}

LogFn make_log(bool quiet) {
  if (quiet) return {};
  return [](const std::string& msg) { std::cerr << msg << std::endl; };
}

EpochCallback epoch_log(bool quiet, std::string prefix) {
  if (quiet) return {};
  return [prefix](std::size_t epoch, double train, double val) {
    std::fprintf(stderr, "%s epoch %zu train %.6f val %.6f\n", prefix.c_str(), epoch, train, val);
  };
}

std::vector<SubjectData> load_subjects(const fs::path& data, const RunConfig& cfg,
                                       const std::vector<std::string>& exclude, const LogFn& log) {
  const DatasetManifest manifest = read_manifest(data);
  std::vector<SubjectData> out;
  for (const auto& id : manifest.subjects) {
    if (std::find(exclude.begin(), exclude.end(), id) != exclude.end()) continue;
    SubjectData s{id, load_sequences(data, id, cfg.tokenizer)};
    if (log) log("loaded " + id + ": " + std::to_string(s.sequences.size()) + " sequences");
    out.push_back(std::move(s));
  }
  return out;
}

// ---- commands ---------------------------------------------------------------

struct SynthArgs {
  Common common;
  std::string out;
  std::optional<std::size_t> subjects;
  std::optional<double> days;
  std::optional<std::uint64_t> seed;
};

int cmd_synth(const SynthArgs& a) {
  RunConfig cfg = load_config(a.common);
  if (a.subjects) cfg.synth.subjects = *a.subjects;
  if (a.days) cfg.synth.days = *a.days;
  if (a.seed) cfg.seed = *a.seed;
  cfg.resolve();
  const LogFn log = make_log(a.common.quiet);

  const fs::path out(a.out);
  fs::create_directories(out);
  DatasetManifest manifest;
  for (const auto& spec : default_cohort_specs(cfg.synth.subjects, cfg.synth.days, cfg.seed)) {
    const SynthSubject s = synth_subject(spec);
    write_subject(out, s.recording, &s.labels);
    manifest.subjects.push_back(spec.subject_id);
    if (log) log("wrote " + spec.subject_id + " (" + std::to_string(s.recording.samples.size()) + " samples)");
  }
  write_manifest(out, manifest);
  write_resolved(out, cfg);
  return kOk;
}

struct PretrainArgs {
  Common common;
  std::string data;
  std::string out;
  std::vector<std::string> exclude;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
};

int cmd_pretrain(const PretrainArgs& a) {
  RunConfig cfg = load_config(a.common);
  if (a.epochs) cfg.pretrain.epochs = *a.epochs;
  if (a.seed) cfg.seed = *a.seed;
  cfg.resolve();
  const LogFn log = make_log(a.common.quiet);

  const std::vector<SubjectData> subjects = load_subjects(a.data, cfg, a.exclude, log);
  std::vector<Sequence> seqs;
  for (const auto& s : subjects) seqs.insert(seqs.end(), s.sequences.begin(), s.sequences.end());

  PretrainHyper hyper = cfg.pretrain_hyper();
  hyper.on_epoch = epoch_log(a.common.quiet, "pretrain");
  const ModelConfig model = cfg.model_config();
  const PretrainResult result = pretrain(seqs, model, hyper);

  const fs::path out(a.out);
  fs::create_directories(out);
  save_checkpoint(out / "checkpoint.dbsfm", model, result.params);
  write_report_csv(result.report, out / "pretrain_report.csv");
  write_resolved(out, cfg);
  return kOk;
}

struct CvArgs {
  Common common;
  std::string data;
  std::string out;
  std::optional<std::size_t> jobs;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
};

int cmd_cv(const CvArgs& a) {
  RunConfig cfg = load_config(a.common);
  if (a.jobs) cfg.cv.jobs = *a.jobs;
  if (a.epochs) cfg.pretrain.epochs = *a.epochs;
  if (a.seed) cfg.seed = *a.seed;
  cfg.resolve();
  const LogFn log = make_log(a.common.quiet);

  const std::vector<SubjectData> subjects = load_subjects(a.data, cfg, {}, log);
  CvHyper hyper;
  hyper.model = cfg.model_config();
  hyper.pretrain = cfg.pretrain_hyper();
  hyper.finetune = cfg.finetune_hyper();
  hyper.seed = cfg.seed;
  hyper.jobs = cfg.cv.jobs;
  hyper.log = log;

  PretrainCache cache;
  const CvSummary summary = run_loso(subjects, hyper, &cache);
  std::optional<CvSummary> permuted;
  if (cfg.cv.permutation_control) {
    if (log) log("permutation control");
    CvHyper ph = hyper;
    ph.permute_labels = true;
    permuted = run_loso(subjects, ph, &cache);
  }

  const fs::path out(a.out);
  write_cv_outputs(out, summary, permuted ? &*permuted : nullptr);
  write_resolved(out, cfg);

  if (log) {
    for (std::size_t s = 0; s < kNumSymptoms; ++s) {
      char buf[160];
      std::snprintf(buf, sizeof(buf), "%s: mean r %.4f +/- %.4f over %zu folds", std::string(kSymptomNames[s]).c_str(),
                    summary.symptoms[s].mean, summary.symptoms[s].std, summary.symptoms[s].n_defined);
      log(buf);
    }
  }
  if (summary.partial()) {
    std::cerr << "cross-validation finished with failed folds:";
    for (const auto& id : summary.failed_subjects()) std::cerr << " " << id;
    std::cerr << "\n";
    return kPartial;
  }
  return kOk;
}

struct EmbedArgs {
  Common common;
  std::string checkpoint;
  std::string data;
  std::string out;
  bool cls = false;
};

int cmd_embed(const EmbedArgs& a) {
  RunConfig cfg = load_config(a.common);
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  if (ckpt.config.input_dim != cfg.model_config().input_dim || ckpt.config.tokens() != cfg.tokenizer.tokens_per_sequence)
    throw ValidationError("checkpoint was trained with a different tokenizer configuration");
  const std::vector<SubjectData> subjects = load_subjects(a.data, cfg, {}, make_log(a.common.quiet));
  std::vector<Sequence> seqs;
  for (const auto& s : subjects) seqs.insert(seqs.end(), s.sequences.begin(), s.sequences.end());

  fs::path out(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  export_embeddings(ckpt.config, ckpt.params, seqs, out, a.cls);
  return kOk;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kUsage;
  if (dynamic_cast<const NumericError*>(&e)) return kNumeric;
  return kData;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dbsfm: masked-autoencoder pre-training and symptom decoding for chronic field-potential recordings"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "generate a synthetic cohort");
  add_common(c_synth, synth.common);
  c_synth->add_option("--out", synth.out, "output dataset directory")->required();
  c_synth->add_option("--subjects", synth.subjects, "number of subjects");
  c_synth->add_option("--days", synth.days, "recording length per subject in days");
  c_synth->add_option("--seed", synth.seed, "master seed");

  PretrainArgs pre;
  auto* c_pre = app.add_subcommand("pretrain", "masked-autoencoder pre-training");
  add_common(c_pre, pre.common);
  c_pre->add_option("--data", pre.data, "dataset directory")->required();
  c_pre->add_option("--out", pre.out, "output directory")->required();
  c_pre->add_option("--exclude-subject", pre.exclude, "subject to leave out (repeatable)");
  c_pre->add_option("--epochs", pre.epochs, "override pretrain.epochs");
  c_pre->add_option("--seed", pre.seed, "override the seed");

  CvArgs cv;
  auto* c_cv = app.add_subcommand("cv", "leave-one-subject-out cross-validation");
  add_common(c_cv, cv.common);
  c_cv->add_option("--data", cv.data, "dataset directory")->required();
  c_cv->add_option("--out", cv.out, "output directory")->required();
  c_cv->add_option("--jobs", cv.jobs, "folds run concurrently");
  c_cv->add_option("--epochs", cv.epochs, "override pretrain.epochs");
  c_cv->add_option("--seed", cv.seed, "override the seed");

  EmbedArgs embed;
  auto* c_embed = app.add_subcommand("embed", "export token embeddings as CSV");
  add_common(c_embed, embed.common);
  c_embed->add_option("--checkpoint", embed.checkpoint, "checkpoint file")->required();
  c_embed->add_option("--data", embed.data, "dataset directory")->required();
  c_embed->add_option("--out", embed.out, "output CSV path")->required();
  c_embed->add_flag("--cls", embed.cls, "also export the CLS slot of each sequence");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (c_synth->parsed()) return cmd_synth(synth);
    if (c_pre->parsed()) return cmd_pretrain(pre);
    if (c_cv->parsed()) return cmd_cv(cv);
    if (c_embed->parsed()) return cmd_embed(embed);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}
