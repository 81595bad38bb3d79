#pragma once

#include <filesystem>
#include <string>

#include "dbsfm/model.hpp"
#include "dbsfm/param_store.hpp"

namespace dbsfm {

/// Checkpoint layout:
///
///   "DBSFM01\n"                      8 magic bytes
///   u64 little-endian                header length in bytes
///   UTF-8 JSON header                {"format_version", "config", "tensors": [{name, shape, offset}]}
///   payload                          float64 little-endian values, tensors in table order
///
/// `offset` is the byte offset of a tensor inside the payload.
inline constexpr char kCheckpointMagic[] = "DBSFM01\n";

struct Checkpoint {
  ModelConfig config;
  ParamStore params;
};

/// Throws IoError when the file cannot be written.
void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg, const ParamStore& params);

/// Throws IoError when the file cannot be opened and FormatError on a bad
/// magic, malformed header, or truncated payload.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// In-memory forms of the same byte layout.
std::string encode_checkpoint(const ModelConfig& cfg, const ParamStore& params);
Checkpoint decode_checkpoint(const std::string& bytes);

}  // namespace dbsfm
