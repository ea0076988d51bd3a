#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace nucleigan {

enum class Split { Train, Test };
enum class Source { Real, Synthetic };

std::string to_string(Split s);
std::string to_string(Source s);
Split split_from_string(const std::string& s);
Source source_from_string(const std::string& s);

struct ManifestRecord {
  std::filesystem::path image;
  std::filesystem::path instances;
  std::string organ;
  std::string patient;
  Split split = Split::Train;
  Source source = Source::Real;
  std::optional<std::uint64_t> seed;  // synthetic records only
  bool operator==(const ManifestRecord&) const = default;
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;
  std::string config_hash;
  std::string created_at;
  bool operator==(const DatasetManifest&) const = default;
};

/// JSON text with record paths written relative to `base_dir`.
std::string serialize_manifest(const DatasetManifest& m, const std::filesystem::path& base_dir);
/// Relative record paths are resolved against `base_dir`.
DatasetManifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir);

/// Paths are stored relative to the manifest's directory.
void save_manifest(const std::filesystem::path& path, const DatasetManifest& m);
DatasetManifest load_manifest(const std::filesystem::path& path);

/// Throws ValidationError if a record's files are missing or an image is
/// listed in both splits.
void validate_manifest(const DatasetManifest& m);

/// Concatenates records; the config hash covers all inputs.
DatasetManifest merge_manifests(const std::vector<DatasetManifest>& parts);

}  // namespace nucleigan
