#include "dbsfm/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <nlohmann/json.hpp>

#include "dbsfm/error.hpp"
#include "json_config.hpp"

namespace dbsfm {
namespace {

constexpr std::size_t kMagicLen = sizeof(kCheckpointMagic) - 1;

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

void put_f64_le(std::string& out, double d) { put_u64_le(out, std::bit_cast<std::uint64_t>(d)); }

}  // namespace

std::string encode_checkpoint(const ModelConfig& cfg, const ParamStore& params) {
  nlohmann::json header;
  header["format_version"] = 1;
  header["config"] = model_config_to_json(cfg);
  nlohmann::json table = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& name : params.names()) {
    const Tensor& t = params.at(name);
    table.push_back({{"name", name}, {"shape", t.shape}, {"offset", offset}});
    offset += 8 * t.numel();
  }
  header["tensors"] = std::move(table);
  const std::string header_text = header.dump();

  std::string out(kCheckpointMagic, kMagicLen);
  put_u64_le(out, header_text.size());
  out += header_text;
  out.reserve(out.size() + offset);
  for (const auto& name : params.names()) {
    for (double v : params.at(name).values) put_f64_le(out, v);
  }
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < kMagicLen + 8 || std::memcmp(bytes.data(), kCheckpointMagic, kMagicLen) != 0)
    throw FormatError("checkpoint: bad magic bytes");
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint64_t header_len = get_u64_le(raw + kMagicLen);
  const std::size_t header_start = kMagicLen + 8;
  if (header_len > bytes.size() - header_start) throw FormatError("checkpoint: header length exceeds file size");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(header_start),
                                   bytes.begin() + static_cast<std::ptrdiff_t>(header_start + header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed header: ") + e.what());
  }

  Checkpoint out;
  const std::size_t payload_start = header_start + header_len;
  const std::size_t payload_len = bytes.size() - payload_start;
  try {
    if (header.at("format_version").get<int>() != 1) throw FormatError("checkpoint: unsupported format version");
    out.config = model_config_from_json(header.at("config"));
    for (const auto& entry : header.at("tensors")) {
      const auto name = entry.at("name").get<std::string>();
      auto shape = entry.at("shape").get<std::vector<std::size_t>>();
      const auto offset = entry.at("offset").get<std::uint64_t>();
      Tensor& t = out.params.add(name, std::move(shape));
      if (offset > payload_len || 8 * t.numel() > payload_len - offset)
        throw FormatError("checkpoint: tensor '" + name + "' runs past the end of the payload");
      const unsigned char* p = raw + payload_start + offset;
      for (std::size_t i = 0; i < t.numel(); ++i) t.values[i] = std::bit_cast<double>(get_u64_le(p + 8 * i));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed header: ") + e.what());
  } catch (const ValidationError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg, const ParamStore& params) {
  const std::string bytes = encode_checkpoint(cfg, params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace dbsfm
