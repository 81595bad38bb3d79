#include "dbsfm/dataset_io.hpp"

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cmath>
#include <cstring>
#include <limits>
#include <fstream>
#include <iterator>
#include <nlohmann/json.hpp>
#include <sstream>

#include "dbsfm/error.hpp"

namespace fs = std::filesystem;

namespace dbsfm {

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

nlohmann::json parse_json(const fs::path& path) {
  const std::string text = read_text(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

double parse_double(std::string_view field, const std::string& context) {
  double v = 0.0;
  const auto* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    // empty or nan marks a missing label
    std::string s(field);
    if (s == "nan" || s == "NaN" || s.empty()) return std::numeric_limits<double>::quiet_NaN();
    throw FormatError(context + ": cannot parse number '" + s + "'");
  }
  return v;
}

std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

DatasetManifest read_manifest(const fs::path& root) {
  if (!fs::is_directory(root)) throw IoError("dataset directory not found: " + root.string());
  const fs::path path = root / "manifest.json";
  if (!fs::exists(path)) throw IoError("manifest not found: " + path.string());
  const nlohmann::json j = parse_json(path);
  DatasetManifest m;
  try {
    m.format_version = j.at("format_version").get<int>();
    m.subjects = j.at("subjects").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  if (m.format_version != kDatasetFormatVersion)
    throw FormatError(path.string() + ": unsupported format_version " + std::to_string(m.format_version));
  return m;
}

void write_manifest(const fs::path& root, const DatasetManifest& manifest) {
  fs::create_directories(root);
  nlohmann::json j;
  j["format_version"] = manifest.format_version;
  j["subjects"] = manifest.subjects;
  write_text(root / "manifest.json", j.dump(2) + "\n");
}

SubjectMeta read_meta(const fs::path& subject_dir) {
  const fs::path path = subject_dir / "meta.json";
  const nlohmann::json j = parse_json(path);
  SubjectMeta m;
  try {
    m.subject_id = j.at("subject_id").get<std::string>();
    m.fs_hz = j.at("fs_hz").get<double>();
    m.start_unix_s = j.at("start_unix_s").get<std::int64_t>();
    m.timezone_offset_s = j.at("timezone_offset_s").get<std::int64_t>();
    m.n_samples = j.at("n_samples").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return m;
}

Recording read_recording(const fs::path& subject_dir) {
  const SubjectMeta meta = read_meta(subject_dir);
  const fs::path path = subject_dir / "signal.f32le";
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const auto size = fs::file_size(path);
  if (size != 4 * meta.n_samples)
    throw FormatError(path.string() + ": expected " + std::to_string(meta.n_samples) + " samples, file has " +
                      std::to_string(size) + " bytes");

  Recording rec;
  rec.subject_id = meta.subject_id;
  rec.fs_hz = meta.fs_hz;
  rec.start_unix_s = meta.start_unix_s;
  rec.timezone_offset_s = meta.timezone_offset_s;
  rec.samples.resize(meta.n_samples);
  in.read(reinterpret_cast<char*>(rec.samples.data()), static_cast<std::streamsize>(size));
  if (!in) throw IoError("failed reading " + path.string());
  if constexpr (std::endian::native == std::endian::big) {
    for (float& x : rec.samples) x = std::bit_cast<float>(__builtin_bswap32(std::bit_cast<std::uint32_t>(x)));
  }
  return rec;
}

std::string labels_csv(const LabelStream& labels) {
  std::string out = "t_unix_s";
  for (auto name : kSymptomNames) out += "," + std::string(name);
  out += "\n";
  for (const auto& l : labels) {
    out += fmt_g17(l.t_unix_s);
    for (double v : l.scores) out += "," + fmt_g17(v);
    out += "\n";
  }
  return out;
}

LabelStream parse_labels_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("labels.csv: empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::string expected = "t_unix_s";
  for (auto name : kSymptomNames) expected += "," + std::string(name);
  if (line != expected) throw FormatError("labels.csv: header must be '" + expected + "'");

  LabelStream out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string_view> fields;
    std::string_view rest(line);
    for (;;) {
      const auto comma = rest.find(',');
      fields.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    const std::string ctx = "labels.csv line " + std::to_string(lineno);
    if (fields.size() != 1 + kNumSymptoms) throw FormatError(ctx + ": expected " + std::to_string(1 + kNumSymptoms) + " fields");
    LabelSample s;
    s.t_unix_s = parse_double(fields[0], ctx);
    if (!std::isfinite(s.t_unix_s)) throw FormatError(ctx + ": timestamp must be finite");
    for (std::size_t i = 0; i < kNumSymptoms; ++i) s.scores[i] = parse_double(fields[i + 1], ctx);
    out.push_back(s);
  }
  return out;
}

std::optional<LabelStream> read_labels(const fs::path& subject_dir) {
  const fs::path path = subject_dir / "labels.csv";
  if (!fs::exists(path)) return std::nullopt;
  return parse_labels_csv(read_text(path));
}

void write_subject(const fs::path& root, const Recording& recording, const LabelStream* labels) {
  const fs::path dir = root / recording.subject_id;
  fs::create_directories(dir);

  {
    const fs::path path = dir / "signal.f32le";
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    if constexpr (std::endian::native == std::endian::little) {
      out.write(reinterpret_cast<const char*>(recording.samples.data()),
                static_cast<std::streamsize>(4 * recording.samples.size()));
    } else {
      for (float x : recording.samples) {
        const std::uint32_t le = __builtin_bswap32(std::bit_cast<std::uint32_t>(x));
        out.write(reinterpret_cast<const char*>(&le), 4);
      }
    }
    if (!out) throw IoError("failed writing " + path.string());
  }

  nlohmann::json meta;
  meta["subject_id"] = recording.subject_id;
  meta["fs_hz"] = recording.fs_hz;
  meta["start_unix_s"] = recording.start_unix_s;
  meta["timezone_offset_s"] = recording.timezone_offset_s;
  meta["n_samples"] = recording.samples.size();
  write_text(dir / "meta.json", meta.dump(2) + "\n");

  if (labels != nullptr) write_text(dir / "labels.csv", labels_csv(*labels));
}

std::vector<Sequence> load_sequences(const fs::path& root, const std::string& subject_id, const TokenizerConfig& cfg) {
  const fs::path dir = root / subject_id;
  if (!fs::is_directory(dir)) throw IoError("subject directory not found: " + dir.string());
  Recording rec = read_recording(dir);
  if (rec.subject_id != subject_id)
    throw FormatError(dir.string() + ": meta.json names subject '" + rec.subject_id + "'");
  const std::optional<LabelStream> labels = read_labels(dir);
  return tokenize(rec, labels ? &*labels : nullptr, cfg);
}

}  // namespace dbsfm
