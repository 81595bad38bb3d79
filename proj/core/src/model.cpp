#include "dbsfm/model.hpp"

#include <cmath>
#include <random>
#include <string>

#include "dbsfm/error.hpp"
#include "dbsfm/rng.hpp"
#include "dbsfm/tokenizer.hpp"

namespace dbsfm {

void ModelConfig::validate() const {
  if (input_dim == 0 || d_model == 0 || d_ff == 0 || n_heads == 0 || n_layers == 0 || head_hidden == 0)
    throw ValidationError("model config: all sizes must be positive");
  if (d_model % n_heads != 0) throw ValidationError("model config: d_model must be divisible by n_heads");
  if (seq_positions < 2) throw ValidationError("model config: need at least one token plus the CLS slot");
  if (!(layernorm_eps > 0.0)) throw ValidationError("model config: layernorm_eps must be positive");
}

namespace {

std::string layer_prefix(std::size_t i) { return "layer" + std::to_string(i) + "."; }

struct TensorSpec {
  std::string name;
  std::vector<std::size_t> shape;
};

std::vector<TensorSpec> encoder_specs(const ModelConfig& c) {
  std::vector<TensorSpec> specs{
      {"proj.w", {c.input_dim, c.d_model}},
      {"proj.b", {c.d_model}},
      {"pos_enc", {c.seq_positions, c.d_model}},
      {"cls", {c.d_model}},
  };
  for (std::size_t i = 0; i < c.n_layers; ++i) {
    const std::string p = layer_prefix(i);
    specs.push_back({p + "ln1.gain", {c.d_model}});
    specs.push_back({p + "ln1.bias", {c.d_model}});
    for (const char* proj : {"q", "k", "v", "o"}) {
      specs.push_back({p + "attn." + proj + ".w", {c.d_model, c.d_model}});
      specs.push_back({p + "attn." + proj + ".b", {c.d_model}});
    }
    specs.push_back({p + "ln2.gain", {c.d_model}});
    specs.push_back({p + "ln2.bias", {c.d_model}});
    specs.push_back({p + "ff.w1", {c.d_model, c.d_ff}});
    specs.push_back({p + "ff.b1", {c.d_ff}});
    specs.push_back({p + "ff.w2", {c.d_ff, c.d_model}});
    specs.push_back({p + "ff.b2", {c.d_model}});
  }
  specs.push_back({"final_ln.gain", {c.d_model}});
  specs.push_back({"final_ln.bias", {c.d_model}});
  return specs;
}

std::vector<TensorSpec> recon_specs(const ModelConfig& c) {
  return {{"recon.w", {c.d_model, c.input_dim}}, {"recon.b", {c.input_dim}}};
}

std::vector<TensorSpec> head_specs(const ModelConfig& c, std::string_view symptom) {
  const std::string p = "head." + std::string(symptom) + ".";
  return {{p + "w1", {c.d_model, c.head_hidden}},
          {p + "b1", {c.head_hidden}},
          {p + "w2", {c.head_hidden, 1}},
          {p + "b2", {1}}};
}

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

void init_tensor(Tensor& t, std::string_view name, Rng& rng) {
  if (name == "pos_enc" || name == "cls") {
    std::normal_distribution<double> normal(0.0, 0.02);
    for (double& v : t.values) v = normal(rng);
  } else if (ends_with(name, ".gain")) {
    std::fill(t.values.begin(), t.values.end(), 1.0);
  } else if (t.shape.size() == 2) {
    const double bound = std::sqrt(1.0 / static_cast<double>(t.shape[0]));
    std::uniform_real_distribution<double> uniform(-bound, bound);
    for (double& v : t.values) v = uniform(rng);
  } else {
    std::fill(t.values.begin(), t.values.end(), 0.0);
  }
}

std::vector<std::string> names_of(const std::vector<TensorSpec>& specs) {
  std::vector<std::string> out;
  out.reserve(specs.size());
  for (const auto& s : specs) out.push_back(s.name);
  return out;
}

}  // namespace

std::vector<std::string> encoder_tensor_names(const ModelConfig& cfg) { return names_of(encoder_specs(cfg)); }

std::vector<std::string> recon_tensor_names() { return {"recon.w", "recon.b"}; }

std::vector<std::string> head_tensor_names(std::string_view symptom) {
  return names_of(head_specs(ModelConfig{}, symptom));
}

std::vector<std::string> subset_tensor_names(const ModelConfig& cfg, std::string_view subset) {
  if (subset == "encoder") return encoder_tensor_names(cfg);
  if (subset == "recon") return recon_tensor_names();
  if (subset == "none") return {};
  if (subset == "heads") {
    std::vector<std::string> out;
    for (auto s : kSymptomNames) {
      auto h = head_tensor_names(s);
      out.insert(out.end(), h.begin(), h.end());
    }
    return out;
  }
  if (subset.starts_with("head.")) return head_tensor_names(subset.substr(5));
  if (subset == "all") {
    auto out = encoder_tensor_names(cfg);
    for (auto& n : recon_tensor_names()) out.push_back(n);
    for (auto& n : subset_tensor_names(cfg, "heads")) out.push_back(n);
    return out;
  }
  throw ValidationError("unknown parameter subset '" + std::string(subset) + "'");
}

std::size_t param_count(const ParamStore& store, const ModelConfig& cfg, std::string_view subset) {
  const auto names = subset_tensor_names(cfg, subset);
  return param_count(store, names);
}

ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParamStore store;
  Rng rng(derive_seed(seed, "init"));
  for (const auto& spec : encoder_specs(cfg)) init_tensor(store.add(spec.name, spec.shape), spec.name, rng);
  for (const auto& spec : recon_specs(cfg)) init_tensor(store.add(spec.name, spec.shape), spec.name, rng);
  for (auto symptom : kSymptomNames) init_head(store, cfg, symptom, seed);
  return store;
}

void init_head(ParamStore& store, const ModelConfig& cfg, std::string_view symptom, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "head." + std::string(symptom)));
  for (const auto& spec : head_specs(cfg, symptom)) {
    if (!store.contains(spec.name)) store.add(spec.name, spec.shape);
    Tensor& t = store.at(spec.name);
    if (t.shape != spec.shape) throw ValidationError("tensor '" + spec.name + "' has the wrong shape for this config");
    init_tensor(t, spec.name, rng);
  }
}

void check_store_matches(const ParamStore& store, const ModelConfig& cfg) {
  cfg.validate();
  auto check = [&](const std::vector<TensorSpec>& specs) {
    for (const auto& spec : specs) {
      if (!store.contains(spec.name)) throw ValidationError("checkpoint lacks tensor '" + spec.name + "'");
      if (store.at(spec.name).shape != spec.shape)
        throw ValidationError("tensor '" + spec.name + "' does not match the model config");
    }
  };
  check(encoder_specs(cfg));
  check(recon_specs(cfg));
}

// ---- forward --------------------------------------------------------------

namespace {

void require_finite(const ad::Tape& tape, ad::Var v, const std::string& stage) {
  if (!tape.value(v).allFinite()) throw NumericError("non-finite activation after " + stage);
}

ad::Var affine(ad::Tape& tape, const ParamStore& store, ad::Var x, const std::string& weight, const std::string& bias) {
  return ad::add_row(tape, ad::matmul(tape, x, tape.param(store, weight)), tape.param(store, bias));
}

ad::Var linear(ad::Tape& tape, const ParamStore& store, ad::Var x, const std::string& prefix) {
  return affine(tape, store, x, prefix + ".w", prefix + ".b");
}

}  // namespace

ad::Var encode(ad::Tape& tape, const ParamStore& store, const ModelConfig& cfg, const Matrix& features,
               EncoderTrace* trace) {
  cfg.validate();
  const auto T = static_cast<Eigen::Index>(cfg.tokens());
  if (features.cols() != static_cast<Eigen::Index>(cfg.input_dim))
    throw ValidationError("encode: expected " + std::to_string(cfg.input_dim) + " features per token, got " +
                          std::to_string(features.cols()));
  if (features.rows() == 0 || features.rows() % T != 0)
    throw ValidationError("encode: feature rows must be a positive multiple of " + std::to_string(cfg.tokens()));
  if (!features.allFinite()) throw ValidationError("encode: non-finite input features");

  const std::size_t P = cfg.seq_positions;
  ad::Var x = tape.constant(features);
  ad::Var tokens = linear(tape, store, x, "proj");
  ad::Var h = ad::prepend_cls(tape, tape.param(store, "cls"), tokens, cfg.tokens());
  h = ad::add_tiled(tape, h, tape.param(store, "pos_enc"));
  require_finite(tape, h, "input projection");

  if (trace != nullptr) trace->attention.assign(cfg.n_layers, {});
  for (std::size_t i = 0; i < cfg.n_layers; ++i) {
    const std::string p = "layer" + std::to_string(i);
    ad::Var n1 = ad::layer_norm(tape, h, tape.param(store, p + ".ln1.gain"), tape.param(store, p + ".ln1.bias"),
                                cfg.layernorm_eps);
    ad::Var q = linear(tape, store, n1, p + ".attn.q");
    ad::Var k = linear(tape, store, n1, p + ".attn.k");
    ad::Var v = linear(tape, store, n1, p + ".attn.v");
    ad::Var a = ad::multi_head_attention(tape, q, k, v, cfg.n_heads, P,
                                         trace != nullptr ? &trace->attention[i] : nullptr);
    h = ad::add(tape, h, linear(tape, store, a, p + ".attn.o"));
    require_finite(tape, h, p + ".attn");

    ad::Var n2 = ad::layer_norm(tape, h, tape.param(store, p + ".ln2.gain"), tape.param(store, p + ".ln2.bias"),
                                cfg.layernorm_eps);
    ad::Var f = ad::relu(tape, affine(tape, store, n2, p + ".ff.w1", p + ".ff.b1"));
    h = ad::add(tape, h, affine(tape, store, f, p + ".ff.w2", p + ".ff.b2"));
    require_finite(tape, h, p + ".ff");
  }
  h = ad::layer_norm(tape, h, tape.param(store, "final_ln.gain"), tape.param(store, "final_ln.bias"),
                     cfg.layernorm_eps);
  require_finite(tape, h, "final_ln");
  return h;
}

ad::Var reconstruct(ad::Tape& tape, const ParamStore& store, const ModelConfig& cfg, ad::Var latent) {
  ad::Var rows = ad::drop_cls(tape, latent, cfg.seq_positions);
  return linear(tape, store, rows, "recon");
}

ad::Var regress(ad::Tape& tape, const ParamStore& store, const ModelConfig& cfg, ad::Var latent,
                std::string_view symptom) {
  const std::string p = "head." + std::string(symptom);
  if (!store.contains(p + ".w1")) throw ValidationError("no regression head for symptom '" + std::string(symptom) + "'");
  ad::Var rows = ad::drop_cls(tape, latent, cfg.seq_positions);
  ad::Var hidden = ad::relu(tape, affine(tape, store, rows, p + ".w1", p + ".b1"));
  return affine(tape, store, hidden, p + ".w2", p + ".b2");
}

LatentOutput encoder_forward(const Matrix& features, const ParamStore& store, const ModelConfig& cfg,
                             EncoderTrace* trace) {
  if (features.rows() != static_cast<Eigen::Index>(cfg.tokens()))
    throw ValidationError("encoder_forward: expected " + std::to_string(cfg.tokens()) + " token rows");
  ad::Tape tape;
  ad::Var latent = encode(tape, store, cfg, features, trace);
  return LatentOutput{tape.value(latent)};
}

Matrix reconstruction_head(const LatentOutput& latent, const ParamStore& store) {
  const Tensor& w = store.at("recon.w");
  const Tensor& b = store.at("recon.b");
  if (latent.embeddings.rows() < 1 || latent.embeddings.cols() != w.rows())
    throw ValidationError("reconstruction_head: latent width does not match recon.w");
  const auto rows = latent.embeddings.bottomRows(latent.embeddings.rows() - 1);
  Matrix out = rows * w.view();
  out.rowwise() += b.view().row(0);
  return out;
}

double regression_head(std::span<const double> latent_row, const ParamStore& store, std::string_view symptom) {
  const std::string p = "head." + std::string(symptom);
  if (!store.contains(p + ".w1")) throw ValidationError("no regression head for symptom '" + std::string(symptom) + "'");
  const Tensor& w1 = store.at(p + ".w1");
  if (static_cast<Eigen::Index>(latent_row.size()) != w1.rows())
    throw ValidationError("regression_head: input width does not match " + p + ".w1");
  const Eigen::Map<const RowVector> x(latent_row.data(), static_cast<Eigen::Index>(latent_row.size()));
  const RowVector hidden = (x * w1.view() + store.at(p + ".b1").view().row(0)).cwiseMax(0.0);
  const RowVector out = hidden * store.at(p + ".w2").view() + store.at(p + ".b2").view().row(0);
  return out(0);
}

}  // namespace dbsfm
