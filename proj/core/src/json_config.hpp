#pragma once

#include <nlohmann/json.hpp>

#include "dbsfm/model.hpp"

namespace dbsfm {

nlohmann::json model_config_to_json(const ModelConfig& cfg);
/// Throws FormatError on missing or mistyped fields.
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace dbsfm
