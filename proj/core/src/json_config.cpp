#include "json_config.hpp"

#include <string>

#include "dbsfm/error.hpp"

namespace dbsfm {

nlohmann::json model_config_to_json(const ModelConfig& cfg) {
  return {{"input_dim", cfg.input_dim},   {"d_model", cfg.d_model},
          {"d_ff", cfg.d_ff},             {"n_heads", cfg.n_heads},
          {"n_layers", cfg.n_layers},     {"seq_positions", cfg.seq_positions},
          {"head_hidden", cfg.head_hidden}, {"layernorm_eps", cfg.layernorm_eps}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  try {
    ModelConfig cfg;
    cfg.input_dim = j.at("input_dim").get<std::size_t>();
    cfg.d_model = j.at("d_model").get<std::size_t>();
    cfg.d_ff = j.at("d_ff").get<std::size_t>();
    cfg.n_heads = j.at("n_heads").get<std::size_t>();
    cfg.n_layers = j.at("n_layers").get<std::size_t>();
    cfg.seq_positions = j.at("seq_positions").get<std::size_t>();
    cfg.head_hidden = j.at("head_hidden").get<std::size_t>();
    cfg.layernorm_eps = j.at("layernorm_eps").get<double>();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model config: ") + e.what());
  }
}

}  // namespace dbsfm
