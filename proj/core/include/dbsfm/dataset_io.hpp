#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dbsfm/tokenizer.hpp"

namespace dbsfm {

// On-disk dataset layout:
//   <root>/manifest.json             {"format_version": 1, "subjects": [...]}
//   <root>/<id>/signal.f32le         little-endian float32 samples
//   <root>/<id>/meta.json            subject_id, fs_hz, start_unix_s, timezone_offset_s, n_samples
//   <root>/<id>/labels.csv           t_unix_s,bradykinesia,dyskinesia (optional)

inline constexpr int kDatasetFormatVersion = 1;

struct DatasetManifest {
  int format_version = kDatasetFormatVersion;
  std::vector<std::string> subjects;
};

struct SubjectMeta {
  std::string subject_id;
  double fs_hz = 250.0;
  std::int64_t start_unix_s = 0;
  std::int64_t timezone_offset_s = 0;
  std::size_t n_samples = 0;
};

/// Throws IoError when the directory or manifest is missing and FormatError on
/// malformed content or an unsupported version.
DatasetManifest read_manifest(const std::filesystem::path& root);
void write_manifest(const std::filesystem::path& root, const DatasetManifest& manifest);

SubjectMeta read_meta(const std::filesystem::path& subject_dir);
Recording read_recording(const std::filesystem::path& subject_dir);
/// nullopt when labels.csv does not exist.
std::optional<LabelStream> read_labels(const std::filesystem::path& subject_dir);

/// Writes signal.f32le, meta.json and (if given) labels.csv under root/<id>.
void write_subject(const std::filesystem::path& root, const Recording& recording, const LabelStream* labels);

std::string labels_csv(const LabelStream& labels);
LabelStream parse_labels_csv(const std::string& text);

/// Reads one subject and tokenizes it; the raw signal is released afterwards.
std::vector<Sequence> load_sequences(const std::filesystem::path& root, const std::string& subject_id,
                                     const TokenizerConfig& cfg);

}  // namespace dbsfm
