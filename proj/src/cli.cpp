#include "spinbath/cli.hpp"

#include <CLI11.hpp>
#include <cmath>
#include <iostream>
#include <json.hpp>
#include <numbers>
#include <set>

#include "spinbath/dataset.hpp"
#include "spinbath/montecarlo.hpp"
#include "spinbath/spectroscopy.hpp"

namespace spinbath::cli {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr double kDegToRad = std::numbers::pi / 180.0;

// ---------------------------------------------------------------------------
// Strict config parsing: every object is checked against its allowed keys so
// typos fail loudly with the offending path.
// ---------------------------------------------------------------------------

class StrictObject {
 public:
  StrictObject(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw UsageError("config: expected an object at " + path_);
  }

  const json* optional(const std::string& key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  const json& require(const std::string& key) {
    const json* v = optional(key);
    if (!v) throw UsageError("config: missing required key '" + path_ + "." + key + "'");
    return *v;
  }

  double number(const std::string& key) { return as_number(require(key), key); }
  double number_or(const std::string& key, double fallback) {
    const json* v = optional(key);
    return v ? as_number(*v, key) : fallback;
  }
  std::string text(const std::string& key) { return as_text(require(key), key); }
  std::string text_or(const std::string& key, const std::string& fallback) {
    const json* v = optional(key);
    return v ? as_text(*v, key) : fallback;
  }
  bool flag_or(const std::string& key, bool fallback) {
    const json* v = optional(key);
    if (!v) return fallback;
    if (!v->is_boolean()) throw UsageError("config: '" + path_ + "." + key + "' must be a boolean");
    return v->get<bool>();
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) {
        throw UsageError("config: unknown key '" + path_ + "." + key + "'");
      }
    }
  }

  const std::string& path() const { return path_; }

 private:
  double as_number(const json& v, const std::string& key) const {
    if (!v.is_number()) throw UsageError("config: '" + path_ + "." + key + "' must be a number");
    return v.get<double>();
  }
  std::string as_text(const json& v, const std::string& key) const {
    if (!v.is_string()) throw UsageError("config: '" + path_ + "." + key + "' must be a string");
    return v.get<std::string>();
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

ArrayXd parse_grid(const json& j, const std::string& path) {
  if (j.is_array()) {
    ArrayXd out(j.size());
    Eigen::Index i = 0;
    for (const auto& v : j) {
      if (!v.is_number()) throw UsageError("config: '" + path + "' entries must be numbers");
      out[i++] = v.get<double>();
    }
    return out;
  }
  StrictObject grid(j, path);
  const double start = grid.number("start");
  const double stop = grid.number("stop");
  const double count_d = grid.number("count");
  const std::string spacing = grid.text_or("spacing", "linear");
  grid.finish();
  const Eigen::Index count = static_cast<Eigen::Index>(count_d);
  if (count < 1 || count_d != static_cast<double>(count)) {
    throw UsageError("config: '" + path + ".count' must be a positive integer");
  }
  ArrayXd out(count);
  if (count == 1) {
    out[0] = start;
  } else if (spacing == "linear") {
    for (Eigen::Index i = 0; i < count; ++i) {
      out[i] = start + (stop - start) * static_cast<double>(i) / static_cast<double>(count - 1);
    }
  } else if (spacing == "log") {
    if (!(start > 0 && stop > 0)) {
      throw UsageError("config: log spacing requires positive '" + path + "' bounds");
    }
    const double lg0 = std::log(start), lg1 = std::log(stop);
    for (Eigen::Index i = 0; i < count; ++i) {
      out[i] = std::exp(lg0 + (lg1 - lg0) * static_cast<double>(i) / static_cast<double>(count - 1));
    }
  } else {
    throw UsageError("config: '" + path + ".spacing' must be 'linear' or 'log'");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Simulation configuration
// ---------------------------------------------------------------------------

struct BathSpec {
  double tau_c_us = 0;
  std::optional<double> sigma_per_nm2;
  std::optional<double> b_rms_tesla;
  std::optional<double> coupling_khz;
};

struct JobSpec {
  std::string name;
  std::string kind;  // coherence | tau_sweep | dip
  SequenceSpec sequence;
  ArrayXd times_us;   // coherence
  double total_time_us = 0;  // tau_sweep
  ArrayXd taus_us;
  // dip
  double freq_start_mhz = 0, freq_stop_mhz = 0;
  Eigen::Index dip_points = 0;
  double rabi_mhz = 0, sequence_time_us = 0, contrast_scale = 1;
  std::optional<double> center_mhz;
  std::optional<BathSpec> bath_override;
};

struct SimulateConfig {
  std::uint64_t seed = 0;
  std::string engine = "analytic";
  long trials = 10000;
  double disk_radius_factor = 100;
  bool resample_bath = true;
  NVSensor sensor = NVSensor::at_depth(10.0, 382.0);
  BathSpec bath;
  std::vector<JobSpec> jobs;
  json effective;  // post-override canonical form, hashed into outputs
};

BathSpec parse_bath(const json& j, const std::string& path) {
  StrictObject bath(j, path);
  BathSpec out;
  out.tau_c_us = bath.number("tau_c_us");
  if (const json* v = bath.optional("sigma_per_nm2")) out.sigma_per_nm2 = v->get<double>();
  if (const json* v = bath.optional("b_rms_tesla")) out.b_rms_tesla = v->get<double>();
  if (const json* v = bath.optional("coupling_khz")) out.coupling_khz = v->get<double>();
  bath.finish();
  const int given = int(out.sigma_per_nm2.has_value()) + int(out.b_rms_tesla.has_value()) +
                    int(out.coupling_khz.has_value());
  if (given != 1) {
    throw UsageError("config: '" + path +
                     "' must give exactly one of sigma_per_nm2, b_rms_tesla, coupling_khz");
  }
  return out;
}

SimulateConfig parse_simulate_config(const json& root) {
  StrictObject top(root, "$");
  SimulateConfig cfg;
  cfg.seed = static_cast<std::uint64_t>(top.number_or("seed", 0));
  cfg.engine = top.text_or("engine", "analytic");
  if (cfg.engine != "analytic" && cfg.engine != "montecarlo") {
    throw UsageError("config: engine must be 'analytic' or 'montecarlo'");
  }
  cfg.trials = static_cast<long>(top.number_or("trials", 10000));
  cfg.disk_radius_factor = top.number_or("disk_radius_factor", 100.0);
  cfg.resample_bath = top.flag_or("resample_bath", true);

  {
    StrictObject sensor(top.require("sensor"), "$.sensor");
    const double depth = sensor.number("depth_nm");
    const double angle = sensor.number_or("axis_polar_angle_deg", kDefaultAxisPolarAngleDeg);
    const double bias = sensor.number_or("bias_field_gauss", 0.0);
    sensor.finish();
    try {
      cfg.sensor = NVSensor(depth, angle * kDegToRad, bias);
    } catch (const std::invalid_argument& e) {
      throw UsageError(std::string("config: $.sensor: ") + e.what());
    }
  }

  cfg.bath = parse_bath(top.require("bath"), "$.bath");

  const json& jobs = top.require("jobs");
  if (!jobs.is_array() || jobs.empty()) {
    throw UsageError("config: '$.jobs' must be a non-empty array");
  }
  std::set<std::string> names;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const std::string path = "$.jobs[" + std::to_string(i) + "]";
    StrictObject job(jobs[i], path);
    JobSpec spec;
    spec.name = job.text("name");
    if (!names.insert(spec.name).second) {
      throw UsageError("config: duplicate job name '" + spec.name + "'");
    }
    spec.kind = job.text("kind");
    if (const json* b = job.optional("bath")) {
      spec.bath_override = parse_bath(*b, path + ".bath");
    }
    if (spec.kind == "coherence") {
      const std::string family = job.text("family");
      try {
        spec.sequence.family = sequence_family_from_string(family);
      } catch (const std::invalid_argument& e) {
        throw UsageError(std::string("config: ") + path + ": " + e.what());
      }
      spec.sequence.n_pulses = static_cast<int>(job.number_or("n_pulses", 0));
      spec.sequence.tau_offset_us = job.number_or("tau_offset_us", 0.0);
      spec.times_us = parse_grid(job.require("times_us"), path + ".times_us");
    } else if (spec.kind == "tau_sweep") {
      spec.total_time_us = job.number("total_time_us");
      spec.taus_us = parse_grid(job.require("taus_us"), path + ".taus_us");
      spec.sequence.family = SequenceFamily::DeerEcho;
    } else if (spec.kind == "dip") {
      spec.freq_start_mhz = job.number("freq_start_mhz");
      spec.freq_stop_mhz = job.number("freq_stop_mhz");
      spec.dip_points = static_cast<Eigen::Index>(job.number("points"));
      spec.rabi_mhz = job.number("rabi_mhz");
      spec.sequence_time_us = job.number("sequence_time_us");
      spec.contrast_scale = job.number_or("contrast_scale", 1.0);
      if (const json* v = job.optional("center_mhz")) spec.center_mhz = v->get<double>();
      if (spec.dip_points < 2) throw UsageError("config: " + path + ".points must be >= 2");
    } else {
      throw UsageError("config: " + path + ".kind must be coherence, tau_sweep, or dip");
    }
    job.finish();
    cfg.jobs.push_back(std::move(spec));
  }
  top.finish();
  return cfg;
}

// Resolve a bath spec to concrete (sigma, tau_c, b_rms) values.
SpinBathParams resolve_bath(const BathSpec& spec, const NVSensor& sensor,
                            const std::string& engine) {
  const PhysicalConstants& pc = standard_constants();
  try {
    if (spec.sigma_per_nm2) {
      return SpinBathParams(*spec.sigma_per_nm2, spec.tau_c_us).with_brms(sensor);
    }
    double b_rms = 0;
    if (spec.b_rms_tesla) {
      b_rms = *spec.b_rms_tesla;
    } else {
      const double k_per_us = *spec.coupling_khz * 1e-3;
      if (k_per_us < 0) throw std::invalid_argument("coupling_khz must be >= 0");
      b_rms = std::sqrt(k_per_us / spec.tau_c_us) / pc.gamma_e_rad_per_us_tesla();
    }
    // invert the density-field map so the Monte Carlo engine can sample spins
    const double unit_b = brms_from_density(SpinBathParams(1.0, spec.tau_c_us), sensor, pc);
    const double sigma = (b_rms / unit_b) * (b_rms / unit_b);
    (void)engine;
    return SpinBathParams(sigma, spec.tau_c_us, b_rms);
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("config: bath: ") + e.what());
  }
}

json bath_to_json(const BathSpec& b) {
  json j;
  j["tau_c_us"] = b.tau_c_us;
  if (b.sigma_per_nm2) j["sigma_per_nm2"] = *b.sigma_per_nm2;
  if (b.b_rms_tesla) j["b_rms_tesla"] = *b.b_rms_tesla;
  if (b.coupling_khz) j["coupling_khz"] = *b.coupling_khz;
  return j;
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

void append_common_metadata(Dataset& ds, const SimulateConfig& cfg, const JobSpec& job,
                            const SpinBathParams& bath, std::uint64_t job_seed,
                            const std::string& engine, const std::string& config_hash) {
  ds.set_meta("artifact_version", kArtifactVersion);
  ds.set_meta("config_hash", config_hash);
  ds.set_meta("job", job.name);
  ds.set_meta("engine", engine);
  ds.set_meta("seed", format_double(static_cast<double>(job_seed)));
  ds.set_meta("sigma_per_nm2", bath.sigma_per_nm2);
  ds.set_meta("tau_c_us", bath.tau_c_us);
  if (bath.b_rms_tesla) ds.set_meta("b_rms_tesla", *bath.b_rms_tesla);
  ds.set_meta("depth_nm", cfg.sensor.depth_nm);
  ds.set_meta("axis_polar_angle_deg", cfg.sensor.axis_polar_angle / kDegToRad);
  ds.set_meta("bias_field_gauss", cfg.sensor.bias_field_gauss);
  if (engine == "montecarlo") {
    ds.set_meta("trials", static_cast<double>(cfg.trials));
    ds.set_meta("disk_radius_factor", cfg.disk_radius_factor);
    ds.set_meta("resample_bath", cfg.resample_bath ? "true" : "false");
  }
}

int cmd_simulate(const std::string& config_path, const std::string& out_dir,
                 const std::optional<std::uint64_t>& seed_override,
                 const std::optional<std::string>& engine_override,
                 const std::optional<long>& trials_override,
                 const std::optional<double>& depth_override) {
  json root;
  try {
    root = json::parse(read_file(config_path));
  } catch (const json::parse_error& e) {
    throw UsageError(std::string("config: ") + e.what());
  } catch (const std::runtime_error& e) {
    throw DataError(e.what());
  }

  // CLI overrides are folded in before hashing so outputs are stamped with
  // the effective configuration.
  if (seed_override) root["seed"] = *seed_override;
  if (engine_override) root["engine"] = *engine_override;
  if (trials_override) root["trials"] = *trials_override;
  if (depth_override) {
    if (!root.contains("sensor") || !root["sensor"].is_object()) root["sensor"] = json::object();
    root["sensor"]["depth_nm"] = *depth_override;
  }

  SimulateConfig cfg = parse_simulate_config(root);
  cfg.effective = root;
  const std::string config_hash = content_hash_hex(root.dump());

  const PhysicalConstants& pc = standard_constants();
  fs::create_directories(out_dir);

  for (std::size_t ji = 0; ji < cfg.jobs.size(); ++ji) {
    const JobSpec& job = cfg.jobs[ji];
    const BathSpec& bspec = job.bath_override ? *job.bath_override : cfg.bath;
    const SpinBathParams bath = resolve_bath(bspec, cfg.sensor, cfg.engine);
    const std::uint64_t job_seed = RandomStream::derive(cfg.seed, ji);
    const double gamma_b =
        pc.gamma_e_rad_per_us_tesla() * bath.b_rms_tesla.value_or(0.0);

    // an empty bath dephases nothing; the analytic paths shortcut to chi = 0
    auto analytic_curve = [&](const SequenceSpec& spec, const ArrayXd& times) {
      if (gamma_b == 0) return CoherenceCurve(times, ArrayXd::Ones(times.size()), spec);
      return coherence_curve(spec, OUNoise::from_bath(bath, cfg.sensor, pc), times, pc);
    };
    auto analytic_sweep = [&](double total, const ArrayXd& taus) {
      if (gamma_b == 0) return TauSweep(total, taus, ArrayXd::Ones(taus.size()));
      return deer_echo_tau_sweep(total, taus, OUNoise::from_bath(bath, cfg.sensor, pc), pc);
    };

    Dataset ds;
    std::string engine = cfg.engine;
    if (job.kind == "coherence") {
      if (cfg.engine == "analytic") {
        ds = dataset_from_curve(analytic_curve(job.sequence, job.times_us));
      } else {
        SimConfig sim;
        sim.n_trials = cfg.trials;
        sim.disk_radius_factor = cfg.disk_radius_factor;
        sim.resample_bath = cfg.resample_bath;
        sim.rng_seed = job_seed;
        ds = dataset_from_curve(simulate_curve(job.sequence, job.times_us, bath, cfg.sensor, sim, pc));
      }
    } else if (job.kind == "tau_sweep") {
      if (cfg.engine == "analytic") {
        ds = dataset_from_tau_sweep(analytic_sweep(job.total_time_us, job.taus_us));
      } else {
        SimConfig sim;
        sim.n_trials = cfg.trials;
        sim.disk_radius_factor = cfg.disk_radius_factor;
        sim.resample_bath = cfg.resample_bath;
        sim.rng_seed = job_seed;
        ds = dataset_from_tau_sweep(
            simulate_tau_sweep(job.total_time_us, job.taus_us, bath, cfg.sensor, sim, pc));
      }
    } else {  // dip: model evaluation, analytic regardless of engine
      engine = "analytic";
      const double center = job.center_mhz
                                ? *job.center_mhz
                                : pc.gamma_e_hz_per_tesla * 1e-6 * 1e-4 * cfg.sensor.bias_field_gauss;
      const DipModel model(center, job.rabi_mhz, job.contrast_scale);
      const double baseline_chi =
          chi_free_evolution(gamma_b, bath.tau_c_us, job.sequence_time_us);
      ArrayXd freqs(job.dip_points);
      for (Eigen::Index i = 0; i < job.dip_points; ++i) {
        freqs[i] = job.freq_start_mhz + (job.freq_stop_mhz - job.freq_start_mhz) *
                                            static_cast<double>(i) /
                                            static_cast<double>(job.dip_points - 1);
      }
      const ArrayXd coh = deer_dip(freqs, model, baseline_chi);
      ds.set_meta("schema", kSchemaDip);
      ds.set_meta("center_mhz", center);
      ds.set_meta("rabi_mhz", job.rabi_mhz);
      ds.set_meta("sequence_time_us", job.sequence_time_us);
      ds.set_meta("baseline_chi", baseline_chi);
      ds.set_meta("contrast_scale", job.contrast_scale);
      ds.columns = {"freq_mhz", "coherence"};
      ds.table.resize(freqs.size(), 2);
      ds.table.col(0) = freqs.matrix();
      ds.table.col(1) = coh.matrix();
    }
    if (job.kind == "tau_sweep") ds.set_meta("family", "deer-echo");
    append_common_metadata(ds, cfg, job, bath, job_seed, engine, config_hash);
    const fs::path out_path = fs::path(out_dir) / (job.name + ".csv");
    write_dataset(out_path, ds);
    std::cout << "wrote " << out_path.string() << " (" << ds.table.rows() << " rows)\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

json fit_result_to_json(const FitResult& fit, const std::string& pipeline) {
  json j;
  j["schema"] = "fit_result";
  j["artifact_version"] = kArtifactVersion;
  j["pipeline"] = pipeline;
  j["converged"] = fit.converged;
  j["iterations"] = fit.iterations;
  j["residual_norm"] = fit.residual_norm;
  j["message"] = fit.message;
  json params = json::object(), errs = json::object();
  for (std::size_t i = 0; i < fit.param_names.size(); ++i) {
    params[fit.param_names[i]] = fit.params[static_cast<Eigen::Index>(i)];
    errs[fit.param_names[i]] = fit.std_errors[static_cast<Eigen::Index>(i)];
  }
  j["params"] = params;
  j["stderr"] = errs;
  return j;
}

void print_fit_summary(const FitResult& fit, const std::string& pipeline) {
  std::cout << "pipeline: " << pipeline << "\n"
            << "converged: " << (fit.converged ? "yes" : "no") << " (" << fit.iterations
            << " iterations, residual norm " << fit.residual_norm << ")\n";
  for (std::size_t i = 0; i < fit.param_names.size(); ++i) {
    std::cout << "  " << fit.param_names[i] << " = "
              << fit.params[static_cast<Eigen::Index>(i)] << " +- "
              << fit.std_errors[static_cast<Eigen::Index>(i)] << "\n";
  }
  if (!fit.message.empty()) std::cout << "note: " << fit.message << "\n";
}

Dataset load_dataset_checked(const std::string& path, const char* schema) {
  Dataset ds;
  try {
    ds = read_dataset(path);
  } catch (const std::runtime_error& e) {
    throw DataError(e.what());
  }
  const std::string* s = ds.find_meta("schema");
  if (!s || *s != schema) {
    throw DataError("dataset " + path + ": expected schema '" + schema + "', got '" +
                    (s ? *s : "<none>") + "'");
  }
  return ds;
}

// Seeded nonparametric bootstrap: refit on resampled points, report the
// spread of each parameter.
template <typename Refit>
json bootstrap_stderr(long n_boot, std::uint64_t seed, Eigen::Index n_points,
                      const std::vector<std::string>& names, Refit refit) {
  std::vector<std::vector<double>> samples(names.size());
  RandomStream rng(seed);
  long used = 0;
  for (long b = 0; b < n_boot; ++b) {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(n_points));
    for (auto& i : idx) {
      i = static_cast<Eigen::Index>(rng.next_u64() % static_cast<std::uint64_t>(n_points));
    }
    std::sort(idx.begin(), idx.end());
    idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
    if (static_cast<Eigen::Index>(idx.size()) < 4) continue;
    try {
      const FitResult r = refit(idx);
      if (!r.converged) continue;
      for (std::size_t k = 0; k < names.size(); ++k) {
        samples[k].push_back(r.params[static_cast<Eigen::Index>(k)]);
      }
      ++used;
    } catch (const std::exception&) {
      continue;
    }
  }
  json out = json::object();
  if (used < 8) return out;
  for (std::size_t k = 0; k < names.size(); ++k) {
    double mean = 0;
    for (double v : samples[k]) mean += v;
    mean /= static_cast<double>(samples[k].size());
    double var = 0;
    for (double v : samples[k]) var += (v - mean) * (v - mean);
    var /= static_cast<double>(samples[k].size() - 1);
    out[names[k]] = std::sqrt(var);
  }
  out["resamples"] = used;
  return out;
}

struct FitOptions {
  std::string pipeline;
  std::vector<std::string> inputs;
  std::string out_path;
  std::optional<double> depth_nm;
  double axis_angle_deg = kDefaultAxisPolarAngleDeg;
  std::optional<double> fast_delta2;
  std::optional<double> fast_tau2;
  std::optional<std::string> fast_result;
  long bootstrap = 0;
  std::uint64_t seed = 0;
};

int cmd_fit(const FitOptions& opt) {
  json out;
  FitResult fit;
  json extras = json::object();

  if (opt.pipeline == "t2") {
    if (opt.inputs.size() != 1) throw UsageError("fit t2: exactly one input dataset required");
    const Dataset ds = load_dataset_checked(opt.inputs[0], kSchemaCoherence);
    CoherenceCurve curve = curve_from_dataset(ds);
    try {
      fit = extract_t2(curve);
    } catch (const std::invalid_argument& e) {
      throw DataError(e.what());
    }
    if (opt.bootstrap > 0) {
      extras["bootstrap_stderr"] = bootstrap_stderr(
          opt.bootstrap, opt.seed, curve.size(), fit.param_names,
          [&](const std::vector<Eigen::Index>& idx) {
            ArrayXd t(idx.size()), c(idx.size());
            for (std::size_t i = 0; i < idx.size(); ++i) {
              t[static_cast<Eigen::Index>(i)] = curve.times_us[idx[i]];
              c[static_cast<Eigen::Index>(i)] = curve.values[idx[i]];
            }
            return extract_t2(CoherenceCurve(t, c, curve.sequence));
          });
    }
  } else if (opt.pipeline == "coupling") {
    if (opt.inputs.size() != 1) throw UsageError("fit coupling: exactly one input dataset required");
    const Dataset ds = load_dataset_checked(opt.inputs[0], kSchemaCoherence);
    CoherenceCurve curve = curve_from_dataset(ds);
    bool normalized = false;
    double d2 = 0, t2 = 0;
    if (opt.fast_result) {
      json fr;
      try {
        fr = json::parse(read_file(*opt.fast_result));
      } catch (const std::exception& e) {
        throw DataError(std::string("fast-noise result: ") + e.what());
      }
      if (!fr.contains("params") || !fr["params"].contains("delta2")) {
        throw DataError("fast-noise result: missing params.delta2/tau2_us");
      }
      d2 = fr["params"]["delta2"].get<double>();
      t2 = fr["params"]["tau2_us"].get<double>();
      normalized = true;
    } else if (opt.fast_delta2 && opt.fast_tau2) {
      d2 = *opt.fast_delta2;
      t2 = *opt.fast_tau2;
      normalized = true;
    }
    if (normalized) {
      curve = normalize_by_fast_noise(curve, d2, t2);
      extras["fast_delta2"] = d2;
      extras["fast_tau2_us"] = t2;
    }
    CouplingStrength cs = extract_coupling_strength(curve, normalized);
    fit = cs.fit;
    extras["coupling_khz"] = cs.coupling_khz;
    extras["coupling_khz_stderr"] = cs.fit.stderr_of("K_per_us") * 1e3;
    extras["normalized"] = normalized;
  } else if (opt.pipeline == "deer-echo") {
    if (opt.inputs.size() != 1) throw UsageError("fit deer-echo: exactly one input dataset required");
    if (!opt.depth_nm) {
      throw UsageError(
          "fit deer-echo: --depth is required; the spin density and the sensor depth are "
          "degenerate (sigma scales as depth^4), so the depth must be fixed");
    }
    const Dataset ds = load_dataset_checked(opt.inputs[0], kSchemaTauSweep);
    const TauSweep sweep = tau_sweep_from_dataset(ds);
    const NVSensor sensor(*opt.depth_nm, opt.axis_angle_deg * kDegToRad, 0.0);
    DensityAndTauc dt = extract_density_and_tauc(sweep, sensor);
    fit = dt.fit;
    extras["depth_nm"] = *opt.depth_nm;
    extras["axis_polar_angle_deg"] = opt.axis_angle_deg;
    extras["total_time_us"] = sweep.total_time_us;
    if (opt.bootstrap > 0) {
      extras["bootstrap_stderr"] = bootstrap_stderr(
          opt.bootstrap, opt.seed, sweep.size(), fit.param_names,
          [&](const std::vector<Eigen::Index>& idx) {
            // endpoints are required by the fit; keep them in every resample
            std::vector<Eigen::Index> keep = idx;
            if (keep.front() != 0) keep.insert(keep.begin(), 0);
            if (keep.back() != sweep.size() - 1) keep.push_back(sweep.size() - 1);
            ArrayXd t(keep.size()), c(keep.size());
            for (std::size_t i = 0; i < keep.size(); ++i) {
              t[static_cast<Eigen::Index>(i)] = sweep.taus_us[keep[i]];
              c[static_cast<Eigen::Index>(i)] = sweep.values[keep[i]];
            }
            return extract_density_and_tauc(TauSweep(sweep.total_time_us, t, c), sensor).fit;
          });
    }
  } else if (opt.pipeline == "spectrum") {
    if (opt.inputs.size() < 2) {
      throw UsageError("fit spectrum: need at least two CPMG curve datasets");
    }
    std::vector<CoherenceCurve> curves;
    for (const auto& path : opt.inputs) {
      curves.push_back(curve_from_dataset(load_dataset_checked(path, kSchemaCoherence)));
    }
    SpectrumReconstruction rec;
    try {
      rec = reconstruct_spectrum(curves);
      fit = fit_double_lorentzian(rec.spectrum);
    } catch (const std::invalid_argument& e) {
      throw DataError(e.what());
    } catch (const std::runtime_error& e) {
      throw DataError(e.what());
    }
    extras["dropped_saturated_points"] = rec.dropped_low;
    extras["clipped_high_points"] = rec.clipped_high;
    extras["spectrum_points"] = rec.spectrum.size();
    if (!opt.out_path.empty()) {
      Dataset sd = dataset_from_spectrum(rec.spectrum);
      sd.set_meta("artifact_version", kArtifactVersion);
      const fs::path spath = fs::path(opt.out_path).replace_extension(".spectrum.csv");
      write_dataset(spath, sd);
      extras["spectrum_file"] = spath.string();
      std::cout << "wrote " << spath.string() << "\n";
    }
  } else {
    throw UsageError("fit: pipeline must be t2, coupling, deer-echo, or spectrum");
  }

  out = fit_result_to_json(fit, opt.pipeline);
  out["inputs"] = opt.inputs;
  json hashes = json::array();
  for (const auto& p : opt.inputs) hashes.push_back(content_hash_hex(read_file(p)));
  out["input_hashes"] = hashes;
  for (auto& [k, v] : extras.items()) out["extras"][k] = v;

  if (!opt.out_path.empty()) {
    write_file_atomic(opt.out_path, out.dump(2) + "\n");
    std::cout << "wrote " << opt.out_path << "\n";
  }
  print_fit_summary(fit, opt.pipeline);
  return fit.converged ? kExitOk : kExitNoConvergence;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

json load_result(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const std::exception& e) {
    throw DataError(std::string("result ") + path + ": " + e.what());
  }
  if (!j.contains("schema") || j["schema"] != "fit_result") {
    throw DataError("result " + path + ": not a fit_result record");
  }
  return j;
}

// Model curve for plotting, rebuilt from fitted parameters.
Dataset model_curve_for(const json& result) {
  const std::string pipeline = result["pipeline"].get<std::string>();
  const json& p = result["params"];
  Dataset ds;
  if (pipeline == "t2") {
    const double t2 = p["T2_us"].get<double>();
    const double pw = p["p"].get<double>();
    ArrayXd t = ArrayXd::LinSpaced(200, 0.0, 3.0 * t2);
    ds.set_meta("schema", "model_curve");
    ds.set_meta("model", "stretched_exp");
    ds.columns = {"time_us", "coherence"};
    ds.table.resize(t.size(), 2);
    ds.table.col(0) = t.matrix();
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      ds.table(i, 1) = i == 0 ? 1.0 : stretched_exp(t[i], t2, pw);
    }
  } else if (pipeline == "coupling") {
    const double k = p["K_per_us"].get<double>();
    const double tc = p["tau_c_us"].get<double>();
    ArrayXd t = ArrayXd::LinSpaced(200, 0.0, 5.0 * tc);
    ds.set_meta("schema", "model_curve");
    ds.set_meta("model", "deer_ou");
    ds.columns = {"time_us", "coherence"};
    ds.table.resize(t.size(), 2);
    ds.table.col(0) = t.matrix();
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      ds.table(i, 1) = std::exp(-k * tc * ou_phi(t[i] / tc));
    }
  } else if (pipeline == "deer-echo") {
    const double sigma = p["sigma_per_nm2"].get<double>();
    const double tc = p["tau_c_us"].get<double>();
    const double depth = result["extras"]["depth_nm"].get<double>();
    const double angle = result["extras"]["axis_polar_angle_deg"].get<double>() * kDegToRad;
    const double total = result["extras"]["total_time_us"].get<double>();
    const NVSensor sensor(depth, angle, 0.0);
    const OUNoise noise = OUNoise::from_bath(SpinBathParams(sigma, tc), sensor);
    ArrayXd taus = ArrayXd::LinSpaced(101, 0.0, total / 2);
    const TauSweep model = deer_echo_tau_sweep(total, taus, noise);
    ds = dataset_from_tau_sweep(model);
    ds.set_meta("schema", "model_curve");
    ds.set_meta("model", "deer_echo_ou");
  } else if (pipeline == "spectrum") {
    const DoubleLorentzian dl{p["delta1"].get<double>(), p["tau1_us"].get<double>(),
                              p["delta2"].get<double>(), p["tau2_us"].get<double>()};
    const double w_lo = 0.01 / dl.tau1_us, w_hi = 100.0 / dl.tau2_us;
    ArrayXd w(200);
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      w[i] = w_lo * std::pow(w_hi / w_lo, static_cast<double>(i) / (w.size() - 1));
    }
    ds.set_meta("schema", "model_curve");
    ds.set_meta("model", "double_lorentzian");
    ds.columns = {"omega_rad_per_us", "S_rad2_per_us"};
    ds.table.resize(w.size(), 2);
    ds.table.col(0) = w.matrix();
    ds.table.col(1) = dl(w).matrix();
  }
  return ds;
}

int cmd_report(const std::string& before_path, const std::string& after_path,
               const std::string& out_dir) {
  const json before = load_result(before_path);
  const json after = load_result(after_path);
  if (before["pipeline"] != after["pipeline"]) {
    throw DataError("report: pipeline mismatch (" + before["pipeline"].get<std::string>() +
                    " vs " + after["pipeline"].get<std::string>() + ")");
  }
  if (before["artifact_version"] != after["artifact_version"]) {
    throw DataError("report: artifact_version mismatch; refusing to compare");
  }
  fs::create_directories(out_dir);

  std::ostringstream table;
  std::ostringstream csv;
  table << "pipeline: " << before["pipeline"].get<std::string>() << "\n";
  table << "before:   " << before_path << "\n";
  table << "after:    " << after_path << "\n\n";
  char line[256];
  std::snprintf(line, sizeof(line), "%-16s %14s %14s %14s %14s\n", "parameter", "before",
                "after", "delta", "stderr(delta)");
  table << line;
  csv << "parameter,before,after,delta,delta_stderr\n";
  for (const auto& [name, value] : before["params"].items()) {
    if (!after["params"].contains(name)) continue;
    const double b = value.get<double>();
    const double a = after["params"][name].get<double>();
    const double sb = before["stderr"].value(name, 0.0);
    const double sa = after["stderr"].value(name, 0.0);
    const double comb = std::sqrt(sb * sb + sa * sa);
    std::snprintf(line, sizeof(line), "%-16s %14.6g %14.6g %14.6g %14.6g\n", name.c_str(), b, a,
                  a - b, comb);
    table << line;
    csv << name << "," << format_double(b) << "," << format_double(a) << ","
        << format_double(a - b) << "," << format_double(comb) << "\n";
  }
  for (const char* extra : {"coupling_khz"}) {
    if (before.contains("extras") && before["extras"].contains(extra) &&
        after.contains("extras") && after["extras"].contains(extra)) {
      const double b = before["extras"][extra].get<double>();
      const double a = after["extras"][extra].get<double>();
      std::snprintf(line, sizeof(line), "%-16s %14.6g %14.6g %14.6g %14s\n", extra, b, a, a - b,
                    "-");
      table << line;
      csv << extra << "," << format_double(b) << "," << format_double(a) << ","
          << format_double(a - b) << ",\n";
    }
  }

  write_file_atomic(fs::path(out_dir) / "report.txt", table.str());
  write_file_atomic(fs::path(out_dir) / "report.csv", csv.str());
  std::cout << table.str();

  const Dataset mb = model_curve_for(before);
  const Dataset ma = model_curve_for(after);
  if (!mb.columns.empty()) write_dataset(fs::path(out_dir) / "model_before.csv", mb);
  if (!ma.columns.empty()) write_dataset(fs::path(out_dir) / "model_after.csv", ma);
  std::cout << "wrote " << (fs::path(out_dir) / "report.txt").string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// preset
// ---------------------------------------------------------------------------

json paper_regime_preset() {
  json j;
  j["seed"] = 20240382;
  j["engine"] = "analytic";
  j["trials"] = 100000;
  j["sensor"] = {{"depth_nm", 10.0},
                 {"axis_polar_angle_deg", kDefaultAxisPolarAngleDeg},
                 {"bias_field_gauss", 382.0}};
  j["bath"] = {{"sigma_per_nm2", 0.0025}, {"tau_c_us", 21.0}};
  json jobs = json::array();
  const json bath_air = {{"sigma_per_nm2", 0.0025}, {"tau_c_us", 21.0}};
  const json bath_graphene = {{"sigma_per_nm2", 0.0011}, {"tau_c_us", 12.0}};
  auto times = [](double start, double stop, int count) {
    return json{{"start", start}, {"stop", stop}, {"count", count}, {"spacing", "log"}};
  };
  jobs.push_back({{"name", "hahn_air"},
                  {"kind", "coherence"},
                  {"family", "hahn"},
                  {"bath", bath_air},
                  {"times_us", times(0.5, 120.0, 32)}});
  jobs.push_back({{"name", "hahn_graphene"},
                  {"kind", "coherence"},
                  {"family", "hahn"},
                  {"bath", bath_graphene},
                  {"times_us", times(0.5, 120.0, 32)}});
  jobs.push_back({{"name", "deer_air"},
                  {"kind", "coherence"},
                  {"family", "deer"},
                  {"bath", bath_air},
                  {"times_us", times(0.5, 60.0, 32)}});
  jobs.push_back({{"name", "deer_graphene"},
                  {"kind", "coherence"},
                  {"family", "deer"},
                  {"bath", bath_graphene},
                  {"times_us", times(0.5, 60.0, 32)}});
  for (int n : {1, 2, 4, 8, 16, 32}) {
    jobs.push_back({{"name", "cpmg" + std::to_string(n) + "_air"},
                    {"kind", "coherence"},
                    {"family", "cpmg"},
                    {"n_pulses", n},
                    {"bath", bath_air},
                    {"times_us", times(1.0, 400.0, 28)}});
    jobs.push_back({{"name", "cpmg" + std::to_string(n) + "_graphene"},
                    {"kind", "coherence"},
                    {"family", "cpmg"},
                    {"n_pulses", n},
                    {"bath", bath_graphene},
                    {"times_us", times(1.0, 400.0, 28)}});
  }
  jobs.push_back({{"name", "deer_echo_air"},
                  {"kind", "tau_sweep"},
                  {"total_time_us", 20.0},
                  {"bath", bath_air},
                  {"taus_us", json{{"start", 0.0}, {"stop", 10.0}, {"count", 41}}}});
  jobs.push_back({{"name", "deer_echo_graphene"},
                  {"kind", "tau_sweep"},
                  {"total_time_us", 20.0},
                  {"bath", bath_graphene},
                  {"taus_us", json{{"start", 0.0}, {"stop", 10.0}, {"count", 41}}}});
  jobs.push_back({{"name", "dip_air"},
                  {"kind", "dip"},
                  {"freq_start_mhz", 910.0},
                  {"freq_stop_mhz", 1230.0},
                  {"points", 161},
                  {"rabi_mhz", 5.0},
                  {"sequence_time_us", 10.0},
                  {"bath", bath_air}});
  jobs.push_back({{"name", "dip_graphene"},
                  {"kind", "dip"},
                  {"freq_start_mhz", 910.0},
                  {"freq_stop_mhz", 1230.0},
                  {"points", 161},
                  {"rabi_mhz", 5.0},
                  {"sequence_time_us", 10.0},
                  {"bath", bath_graphene}});
  j["jobs"] = jobs;
  return j;
}

int cmd_preset(const std::string& out_path) {
  write_file_atomic(out_path, paper_regime_preset().dump(2) + "\n");
  std::cout << "wrote " << out_path << "\n";
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"spinbath: coherence simulation and inverse analysis for a planar electron-spin bath"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "generate datasets from a config file");
  std::string config_path, out_dir = ".";
  std::optional<std::uint64_t> seed_override;
  std::optional<std::string> engine_override;
  std::optional<long> trials_override;
  std::optional<double> depth_override;
  sim->add_option("--config", config_path, "config JSON")->required();
  sim->add_option("--out", out_dir, "output directory");
  sim->add_option("--seed", seed_override, "override config seed");
  sim->add_option("--engine", engine_override, "override engine (analytic|montecarlo)");
  sim->add_option("--trials", trials_override, "override Monte Carlo trial count");
  sim->add_option("--depth", depth_override, "override sensor depth (nm)");

  // fit
  auto* fit = app.add_subcommand("fit", "run an extraction pipeline on datasets");
  FitOptions fopt;
  fit->add_option("--pipeline", fopt.pipeline, "t2 | coupling | deer-echo | spectrum")->required();
  fit->add_option("inputs", fopt.inputs, "input dataset files")->required();
  fit->add_option("--out", fopt.out_path, "result JSON path");
  fit->add_option("--depth", fopt.depth_nm, "sensor depth (nm), required for deer-echo");
  fit->add_option("--axis-angle-deg", fopt.axis_angle_deg, "sensor axis polar angle (deg)");
  fit->add_option("--fast-delta2", fopt.fast_delta2, "fast Lorentzian amplitude (rad/us)");
  fit->add_option("--fast-tau2", fopt.fast_tau2, "fast Lorentzian correlation time (us)");
  fit->add_option("--fast-result", fopt.fast_result, "spectrum fit result JSON for normalization");
  fit->add_option("--bootstrap", fopt.bootstrap, "bootstrap resamples for stderr");
  fit->add_option("--seed", fopt.seed, "bootstrap seed");

  // report
  auto* rep = app.add_subcommand("report", "compare two fit results");
  std::string before_path, after_path, report_dir = "report";
  rep->add_option("before", before_path, "baseline result JSON")->required();
  rep->add_option("after", after_path, "comparison result JSON")->required();
  rep->add_option("--out", report_dir, "report output directory");

  // preset
  auto* pre = app.add_subcommand("preset", "write the bundled paper-regime config");
  std::string preset_path = "paper_regime.json";
  pre->add_option("--out", preset_path, "config output path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (sim->parsed()) {
      return cmd_simulate(config_path, out_dir, seed_override, engine_override, trials_override,
                          depth_override);
    }
    if (fit->parsed()) return cmd_fit(fopt);
    if (rep->parsed()) return cmd_report(before_path, after_path, report_dir);
    if (pre->parsed()) return cmd_preset(preset_path);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDataError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDataError;
  }
  return kExitUsage;
}

int run(const std::vector<std::string>& args) {
  std::vector<std::string> full;
  full.reserve(args.size() + 1);
  full.push_back("spinbath");
  full.insert(full.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  argv.reserve(full.size());
  for (const auto& s : full) argv.push_back(s.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace spinbath::cli
