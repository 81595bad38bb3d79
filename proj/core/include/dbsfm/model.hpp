#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dbsfm/autodiff.hpp"
#include "dbsfm/linalg.hpp"
#include "dbsfm/param_store.hpp"

namespace dbsfm {

/// Transformer encoder hyperparameters. The defaults reproduce the
/// 51456-parameter encoder.
struct ModelConfig {
  std::size_t input_dim = 125;
  std::size_t d_model = 64;
  std::size_t d_ff = 32;
  std::size_t n_heads = 4;
  std::size_t n_layers = 2;
  std::size_t seq_positions = 16;  ///< tokens plus the CLS slot
  std::size_t head_hidden = 32;
  double layernorm_eps = 1e-5;

  std::size_t tokens() const { return seq_positions - 1; }
  std::size_t head_dim() const { return d_model / n_heads; }
  /// Throws ValidationError for zero sizes, d_model not divisible by n_heads,
  /// or fewer than two positions.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

/// Canonical tensor names.
std::vector<std::string> encoder_tensor_names(const ModelConfig& cfg);
std::vector<std::string> recon_tensor_names();
std::vector<std::string> head_tensor_names(std::string_view symptom);

/// Tensor names in a named subset: "encoder", "recon", "heads",
/// "head.<symptom>", "all", or "none". Throws ValidationError otherwise.
std::vector<std::string> subset_tensor_names(const ModelConfig& cfg, std::string_view subset);
std::size_t param_count(const ParamStore& store, const ModelConfig& cfg, std::string_view subset);

/// Fresh parameters for the encoder, the reconstruction head and one
/// regression head per symptom. Linear weights ~ U(+-sqrt(1/fan_in)), biases
/// zero, positional table and CLS ~ N(0, 0.02^2), layer-norm gain 1 and bias 0.
ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed);

/// (Re)initializes head.<symptom> in place; adds the tensors when missing.
void init_head(ParamStore& store, const ModelConfig& cfg, std::string_view symptom, std::uint64_t seed);

/// Throws ValidationError unless every encoder and reconstruction tensor is
/// present with the shape `cfg` implies.
void check_store_matches(const ParamStore& store, const ModelConfig& cfg);

struct EncoderTrace {
  /// Attention weights per layer; inner vector ordered by (sequence, head).
  std::vector<std::vector<ad::AttentionMap>> attention;
};

// ---- tape-level building blocks (batched) ---------------------------------

/// Encodes `batch` sequences stacked as (batch * tokens) x input_dim rows.
/// Returns (batch * seq_positions) x d_model latent rows, CLS first in every
/// block. Throws NumericError naming the stage when an activation becomes
/// non-finite.
ad::Var encode(ad::Tape& tape, const ParamStore& store, const ModelConfig& cfg, const Matrix& features,
               EncoderTrace* trace = nullptr);

/// Affine map of the token rows (CLS dropped) back to input_dim.
ad::Var reconstruct(ad::Tape& tape, const ParamStore& store, const ModelConfig& cfg, ad::Var latent);

/// Two-layer ReLU MLP on every token row (CLS dropped); one output column.
ad::Var regress(ad::Tape& tape, const ParamStore& store, const ModelConfig& cfg, ad::Var latent,
                std::string_view symptom);

// ---- single-sequence convenience API --------------------------------------

struct LatentOutput {
  Matrix embeddings;  ///< seq_positions x d_model, row 0 is CLS
};

/// Forward pass for one tokens x input_dim feature matrix.
LatentOutput encoder_forward(const Matrix& features, const ParamStore& store, const ModelConfig& cfg,
                             EncoderTrace* trace = nullptr);

/// tokens x input_dim reconstruction of token rows 1.. of the latent.
Matrix reconstruction_head(const LatentOutput& latent, const ParamStore& store);

/// w2 . relu(w1 . x + b1) + b2 for one latent row. Shapes come from the
/// stored tensors. Throws ValidationError for an unknown symptom.
double regression_head(std::span<const double> latent_row, const ParamStore& store, std::string_view symptom);

}  // namespace dbsfm
