#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace driftflow {

/// 17 significant digits, so doubles round-trip; NaN prints as `nan`.
std::string format_double(double v);

/// Header line plus one comma-separated line per row. Parent directories
/// are created. Throws std::runtime_error naming the path on I/O failure.
void write_csv(const std::filesystem::path& path, const std::string& header,
               const std::vector<std::vector<double>>& rows);

/// Pretty-printed JSON, written to a temporary file and renamed into place.
void write_json(const std::filesystem::path& path, const nlohmann::json& value);
nlohmann::json read_json(const std::filesystem::path& path);

void write_text_atomic(const std::filesystem::path& path, const std::string& text);

/// Provenance record stored as manifest.json in each run directory.
struct RunManifest {
  nlohmann::json config;
  std::uint64_t seed = 0;
  std::string version;
  std::string started_at;
  std::string finished_at;
  std::vector<std::string> files;
  bool nan_flagged = false;

  nlohmann::json to_json() const;
};

std::string library_version();
/// UTC time as ISO 8601.
std::string utc_timestamp();

}  // namespace driftflow
