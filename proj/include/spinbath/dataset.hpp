#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "spinbath/domain.hpp"

namespace spinbath {

inline constexpr const char* kArtifactVersion = "0.1.0";

// Tabular dataset: '#'-prefixed "key: value" metadata header, a column-name
// line, then comma-separated rows. Metadata values are kept verbatim so a
// read/write cycle is byte-identical.
struct Dataset {
  std::vector<std::pair<std::string, std::string>> metadata;  // ordered
  std::vector<std::string> columns;
  Eigen::MatrixXd table;  // rows x columns

  const std::string* find_meta(const std::string& key) const;
  double meta_as_double(const std::string& key) const;
  void set_meta(const std::string& key, const std::string& value);
  void set_meta(const std::string& key, double value);
  Eigen::Index column_index(const std::string& name) const;  // -1 if absent
  ArrayXd column(const std::string& name) const;             // throws if absent
};

// Shortest round-trip decimal form (std::to_chars).
std::string format_double(double value);

std::string serialize_dataset(const Dataset& ds);
Dataset parse_dataset(const std::string& text);

// Temp-file-then-rename; the destination never holds a partial file.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);

void write_dataset(const std::filesystem::path& path, const Dataset& ds);
Dataset read_dataset(const std::filesystem::path& path);

// 64-bit FNV-1a, hex-encoded; used to stamp outputs with their config.
std::string content_hash_hex(const std::string& text);

// Schema names used by the CLI.
inline constexpr const char* kSchemaCoherence = "coherence_curve";
inline constexpr const char* kSchemaTauSweep = "tau_sweep";
inline constexpr const char* kSchemaSpectrum = "noise_spectrum";
inline constexpr const char* kSchemaDip = "dip_spectrum";

Dataset dataset_from_curve(const CoherenceCurve& curve);
CoherenceCurve curve_from_dataset(const Dataset& ds);

Dataset dataset_from_tau_sweep(const TauSweep& sweep);
TauSweep tau_sweep_from_dataset(const Dataset& ds);

Dataset dataset_from_spectrum(const NoiseSpectrum& spectrum);
NoiseSpectrum spectrum_from_dataset(const Dataset& ds);

}  // namespace spinbath
