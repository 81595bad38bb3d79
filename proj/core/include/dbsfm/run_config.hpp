#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "dbsfm/model.hpp"
#include "dbsfm/tokenizer.hpp"
#include "dbsfm/training.hpp"

namespace dbsfm {

struct SynthSettings {
  std::size_t subjects = 8;
  double days = 2.0;
};

struct CvSettings {
  std::size_t jobs = 1;
  bool permutation_control = true;
};

struct LossSettings {
  bool scaled = true;
  double hour_weight = 0.0;
};

/// Every tunable of the pipeline. The text form is a small TOML subset:
///
///   seed = 0
///   [pretrain]
///   epochs = 100      # comments allowed
///   val_split = "interleaved"
///
/// Unknown sections or keys and mistyped values raise ConfigError.
struct RunConfig {
  std::uint64_t seed = 0;
  TokenizerConfig tokenizer;
  ModelConfig model;  ///< input_dim and seq_positions are derived from the tokenizer
  PretrainHyper pretrain;
  FinetuneHyper finetune;
  LossSettings loss;
  SynthSettings synth;
  CvSettings cv;

  /// Sets one dotted key ("pretrain.epochs", "seed") from its text value.
  void set(std::string_view key, std::string_view value);
  /// Dotted names of every accepted key, in file order.
  static std::vector<std::string> keys();

  /// Fills derived fields and checks ranges. Throws ConfigError.
  void resolve();

  ModelConfig model_config() const;
  PretrainHyper pretrain_hyper() const;
  FinetuneHyper finetune_hyper() const;

  std::string to_toml() const;
  static RunConfig from_toml(std::string_view text);
  static RunConfig load(const std::filesystem::path& path);
};

}  // namespace dbsfm
