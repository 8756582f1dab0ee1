#include "spinbath/dataset.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace spinbath {

namespace fs = std::filesystem;

const std::string* Dataset::find_meta(const std::string& key) const {
  for (const auto& [k, v] : metadata) {
    if (k == key) return &v;
  }
  return nullptr;
}

double Dataset::meta_as_double(const std::string& key) const {
  const std::string* v = find_meta(key);
  if (!v) throw std::runtime_error("dataset: missing metadata key '" + key + "'");
  return std::stod(*v);
}

void Dataset::set_meta(const std::string& key, const std::string& value) {
  for (auto& [k, v] : metadata) {
    if (k == key) {
      v = value;
      return;
    }
  }
  metadata.emplace_back(key, value);
}

void Dataset::set_meta(const std::string& key, double value) {
  set_meta(key, format_double(value));
}

Eigen::Index Dataset::column_index(const std::string& name) const {
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i] == name) return static_cast<Eigen::Index>(i);
  }
  return -1;
}

ArrayXd Dataset::column(const std::string& name) const {
  const Eigen::Index i = column_index(name);
  if (i < 0) throw std::runtime_error("dataset: missing column '" + name + "'");
  return table.col(i).array();
}

std::string format_double(double value) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

std::string serialize_dataset(const Dataset& ds) {
  std::ostringstream out;
  for (const auto& [k, v] : ds.metadata) out << "# " << k << ": " << v << "\n";
  for (std::size_t i = 0; i < ds.columns.size(); ++i) {
    out << (i ? "," : "") << ds.columns[i];
  }
  out << "\n";
  for (Eigen::Index r = 0; r < ds.table.rows(); ++r) {
    for (Eigen::Index c = 0; c < ds.table.cols(); ++c) {
      out << (c ? "," : "") << format_double(ds.table(r, c));
    }
    out << "\n";
  }
  return out.str();
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

Dataset parse_dataset(const std::string& text) {
  Dataset ds;
  std::istringstream in(text);
  std::string line;
  bool have_header = false;
  std::vector<std::vector<double>> rows;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::string body = line.substr(1);
      if (!body.empty() && body[0] == ' ') body.erase(0, 1);
      const auto colon = body.find(':');
      if (colon == std::string::npos) {
        throw std::runtime_error("dataset line " + std::to_string(lineno) +
                                 ": metadata must be '# key: value'");
      }
      std::string key = body.substr(0, colon);
      std::string value = body.substr(colon + 1);
      if (!value.empty() && value[0] == ' ') value.erase(0, 1);
      ds.metadata.emplace_back(std::move(key), std::move(value));
      continue;
    }
    if (!have_header) {
      ds.columns = split_csv(line);
      have_header = true;
      continue;
    }
    const auto fields = split_csv(line);
    if (fields.size() != ds.columns.size()) {
      throw std::runtime_error("dataset line " + std::to_string(lineno) + ": expected " +
                               std::to_string(ds.columns.size()) + " fields, got " +
                               std::to_string(fields.size()));
    }
    std::vector<double> row(fields.size());
    for (std::size_t i = 0; i < fields.size(); ++i) {
      const char* first = fields[i].data();
      const char* last = first + fields[i].size();
      const auto res = std::from_chars(first, last, row[i]);
      if (res.ec != std::errc{} || res.ptr != last) {
        throw std::runtime_error("dataset line " + std::to_string(lineno) +
                                 ": bad number '" + fields[i] + "' in column " +
                                 ds.columns[i]);
      }
    }
    rows.push_back(std::move(row));
  }
  if (!have_header) throw std::runtime_error("dataset: missing column header line");
  ds.table.resize(static_cast<Eigen::Index>(rows.size()),
                  static_cast<Eigen::Index>(ds.columns.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      ds.table(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
  }
  return ds;
}

void write_file_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + tmp.string());
    out << content;
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_dataset(const fs::path& path, const Dataset& ds) {
  write_file_atomic(path, serialize_dataset(ds));
}

Dataset read_dataset(const fs::path& path) { return parse_dataset(read_file(path)); }

std::string content_hash_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

Dataset dataset_from_curve(const CoherenceCurve& curve) {
  Dataset ds;
  ds.set_meta("schema", kSchemaCoherence);
  ds.set_meta("family", to_string(curve.sequence.family));
  ds.set_meta("n_pulses", static_cast<double>(curve.sequence.n_pulses));
  ds.set_meta("tau_offset_us", curve.sequence.tau_offset_us);
  const bool has_unc = curve.uncertainty.has_value();
  ds.columns = has_unc ? std::vector<std::string>{"time_us", "coherence", "coherence_stderr"}
                       : std::vector<std::string>{"time_us", "coherence"};
  ds.table.resize(curve.size(), has_unc ? 3 : 2);
  ds.table.col(0) = curve.times_us.matrix();
  ds.table.col(1) = curve.values.matrix();
  if (has_unc) ds.table.col(2) = curve.uncertainty->matrix();
  return ds;
}

CoherenceCurve curve_from_dataset(const Dataset& ds) {
  const std::string* schema = ds.find_meta("schema");
  if (!schema || *schema != kSchemaCoherence) {
    throw std::runtime_error("dataset: expected schema " + std::string(kSchemaCoherence));
  }
  SequenceSpec spec;
  spec.family = sequence_family_from_string(*ds.find_meta("family"));
  spec.n_pulses = static_cast<int>(ds.meta_as_double("n_pulses"));
  spec.tau_offset_us = ds.meta_as_double("tau_offset_us");
  std::optional<ArrayXd> unc;
  if (ds.column_index("coherence_stderr") >= 0) unc = ds.column("coherence_stderr");
  return CoherenceCurve(ds.column("time_us"), ds.column("coherence"), spec, std::move(unc));
}

Dataset dataset_from_tau_sweep(const TauSweep& sweep) {
  Dataset ds;
  ds.set_meta("schema", kSchemaTauSweep);
  ds.set_meta("total_time_us", sweep.total_time_us);
  const bool has_unc = sweep.uncertainty.has_value();
  ds.columns = has_unc ? std::vector<std::string>{"tau_us", "coherence", "coherence_stderr"}
                       : std::vector<std::string>{"tau_us", "coherence"};
  ds.table.resize(sweep.size(), has_unc ? 3 : 2);
  ds.table.col(0) = sweep.taus_us.matrix();
  ds.table.col(1) = sweep.values.matrix();
  if (has_unc) ds.table.col(2) = sweep.uncertainty->matrix();
  return ds;
}

TauSweep tau_sweep_from_dataset(const Dataset& ds) {
  const std::string* schema = ds.find_meta("schema");
  if (!schema || *schema != kSchemaTauSweep) {
    throw std::runtime_error("dataset: expected schema " + std::string(kSchemaTauSweep));
  }
  std::optional<ArrayXd> unc;
  if (ds.column_index("coherence_stderr") >= 0) unc = ds.column("coherence_stderr");
  return TauSweep(ds.meta_as_double("total_time_us"), ds.column("tau_us"),
                  ds.column("coherence"), std::move(unc));
}

Dataset dataset_from_spectrum(const NoiseSpectrum& spectrum) {
  Dataset ds;
  ds.set_meta("schema", kSchemaSpectrum);
  ds.set_meta("provenance",
              spectrum.provenance == SpectrumProvenance::Reconstructed ? "reconstructed" : "model");
  const bool has_unc = spectrum.uncertainty.has_value();
  ds.columns = has_unc
                   ? std::vector<std::string>{"omega_rad_per_us", "S_rad2_per_us", "S_stderr"}
                   : std::vector<std::string>{"omega_rad_per_us", "S_rad2_per_us"};
  ds.table.resize(spectrum.size(), has_unc ? 3 : 2);
  ds.table.col(0) = spectrum.omegas_rad_per_us.matrix();
  ds.table.col(1) = spectrum.amplitudes.matrix();
  if (has_unc) ds.table.col(2) = spectrum.uncertainty->matrix();
  return ds;
}

NoiseSpectrum spectrum_from_dataset(const Dataset& ds) {
  const std::string* schema = ds.find_meta("schema");
  if (!schema || *schema != kSchemaSpectrum) {
    throw std::runtime_error("dataset: expected schema " + std::string(kSchemaSpectrum));
  }
  const std::string* prov = ds.find_meta("provenance");
  std::optional<ArrayXd> unc;
  if (ds.column_index("S_stderr") >= 0) unc = ds.column("S_stderr");
  return NoiseSpectrum(ds.column("omega_rad_per_us"), ds.column("S_rad2_per_us"),
                       (prov && *prov == "reconstructed") ? SpectrumProvenance::Reconstructed
                                                          : SpectrumProvenance::Model,
                       std::move(unc));
}

}  // namespace spinbath
