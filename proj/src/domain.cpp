#include "spinbath/domain.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace spinbath {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

// Remove pairs of coincident flips (a double pi flip is the identity), then
// require the remainder to be strictly increasing inside (lo, hi].
std::vector<double> normalize_flips(std::vector<double> flips, double lo, double hi,
                                    double tol, bool open_upper, const char* channel) {
  require(std::is_sorted(flips.begin(), flips.end()),
          std::string(channel) + " flip times must be nondecreasing");
  std::vector<double> out;
  out.reserve(flips.size());
  for (std::size_t i = 0; i < flips.size(); ++i) {
    if (i + 1 < flips.size() && std::abs(flips[i + 1] - flips[i]) <= tol) {
      ++i;  // coincident pair cancels
      continue;
    }
    out.push_back(flips[i]);
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::ostringstream msg;
    msg << channel << " flip time " << out[i] << " outside valid range";
    require(out[i] > lo + tol, msg.str());
    require(open_upper ? out[i] < hi - tol : out[i] <= hi + tol, msg.str());
    if (i > 0) require(out[i] > out[i - 1] + tol,
                       std::string(channel) + " flip times must be strictly increasing");
  }
  return out;
}

void require_increasing(const ArrayXd& x, const char* what) {
  for (Eigen::Index i = 1; i < x.size(); ++i) {
    require(x[i] > x[i - 1], std::string(what) + " must be strictly increasing");
  }
}

}  // namespace

NVSensor::NVSensor(double depth, double axis_angle_rad, double bias_gauss)
    : depth_nm(depth), axis_polar_angle(axis_angle_rad), bias_field_gauss(bias_gauss) {
  require(std::isfinite(depth) && depth > 0, "NVSensor: depth must be > 0 nm");
  require(axis_angle_rad >= 0 && axis_angle_rad <= std::numbers::pi / 2 + 1e-12,
          "NVSensor: axis polar angle must lie in [0, pi/2]");
  require(std::isfinite(bias_gauss) && bias_gauss >= 0,
          "NVSensor: bias field must be >= 0 gauss");
}

NVSensor NVSensor::at_depth(double depth_nm, double bias_gauss) {
  return NVSensor(depth_nm, kDefaultAxisPolarAngleDeg * std::numbers::pi / 180.0, bias_gauss);
}

SpinBathParams::SpinBathParams(double sigma, double tau_c, std::optional<double> b_rms)
    : sigma_per_nm2(sigma), tau_c_us(tau_c), b_rms_tesla(b_rms) {
  require(std::isfinite(sigma) && sigma >= 0, "SpinBathParams: sigma must be >= 0 nm^-2");
  require(std::isfinite(tau_c) && tau_c > 0, "SpinBathParams: tau_c must be > 0 us");
  if (b_rms) {
    require(std::isfinite(*b_rms) && *b_rms >= 0, "SpinBathParams: b_rms must be >= 0 T");
  }
}

SpinBathParams SpinBathParams::with_brms(const NVSensor& sensor,
                                         const PhysicalConstants& constants) const {
  if (b_rms_tesla) return *this;
  return SpinBathParams(sigma_per_nm2, tau_c_us, brms_from_density(*this, sensor, constants));
}

std::string to_string(SequenceFamily family) {
  switch (family) {
    case SequenceFamily::Ramsey: return "ramsey";
    case SequenceFamily::Hahn: return "hahn";
    case SequenceFamily::Cpmg: return "cpmg";
    case SequenceFamily::Deer: return "deer";
    case SequenceFamily::DeerEcho: return "deer-echo";
    case SequenceFamily::Custom: return "custom";
  }
  return "custom";
}

SequenceFamily sequence_family_from_string(const std::string& name) {
  if (name == "ramsey") return SequenceFamily::Ramsey;
  if (name == "hahn") return SequenceFamily::Hahn;
  if (name == "cpmg") return SequenceFamily::Cpmg;
  if (name == "deer") return SequenceFamily::Deer;
  if (name == "deer-echo") return SequenceFamily::DeerEcho;
  if (name == "custom") return SequenceFamily::Custom;
  throw std::invalid_argument("unknown sequence family: " + name);
}

std::string SequenceSpec::label() const {
  if (family == SequenceFamily::Cpmg) return "CPMG-" + std::to_string(n_pulses);
  std::string s = to_string(family);
  s[0] = static_cast<char>(std::toupper(s[0]));
  return s;
}

PulseSequence::PulseSequence(double total_time, std::vector<double> sensor_flips,
                             std::vector<double> bath_flips, std::string lbl)
    : total_time_us(total_time), label(std::move(lbl)) {
  require(std::isfinite(total_time) && total_time > 0,
          "PulseSequence: total_time must be > 0 us");
  const double tol = time_tolerance();
  sensor_flips_us = normalize_flips(std::move(sensor_flips), 0.0, total_time, tol,
                                    /*open_upper=*/true, "sensor");
  bath_flips_us = normalize_flips(std::move(bath_flips), 0.0, total_time, tol,
                                  /*open_upper=*/false, "bath");
}

CoherenceCurve::CoherenceCurve(ArrayXd times, ArrayXd vals, SequenceSpec seq,
                               std::optional<ArrayXd> stderr_values)
    : times_us(std::move(times)), values(std::move(vals)), sequence(seq),
      uncertainty(std::move(stderr_values)) {
  require(times_us.size() == values.size(),
          "CoherenceCurve: times and values must have equal length");
  require_increasing(times_us, "CoherenceCurve times");
  require((values >= -0.1 - 1e-9).all() && (values <= 1.1 + 1e-9).all(),
          "CoherenceCurve: values must lie in [-0.1, 1.1]");
  if (uncertainty) {
    require(uncertainty->size() == times_us.size(),
            "CoherenceCurve: uncertainty length mismatch");
    require((*uncertainty >= 0).all(), "CoherenceCurve: uncertainty must be >= 0");
  }
}

TauSweep::TauSweep(double total_time, ArrayXd taus, ArrayXd vals,
                   std::optional<ArrayXd> stderr_values)
    : total_time_us(total_time), taus_us(std::move(taus)), values(std::move(vals)),
      uncertainty(std::move(stderr_values)) {
  require(total_time > 0, "TauSweep: total_time must be > 0 us");
  require(taus_us.size() == values.size(), "TauSweep: taus and values must have equal length");
  require_increasing(taus_us, "TauSweep taus");
  if (taus_us.size() > 0) {
    require(taus_us[0] >= 0 && taus_us[taus_us.size() - 1] <= total_time / 2 + 1e-9 * total_time,
            "TauSweep: taus must lie in [0, total_time/2]");
  }
  if (uncertainty) {
    require(uncertainty->size() == taus_us.size(), "TauSweep: uncertainty length mismatch");
  }
}

NoiseSpectrum::NoiseSpectrum(ArrayXd omegas, ArrayXd amps, SpectrumProvenance prov,
                             std::optional<ArrayXd> stderr_values)
    : omegas_rad_per_us(std::move(omegas)), amplitudes(std::move(amps)),
      uncertainty(std::move(stderr_values)), provenance(prov) {
  require(omegas_rad_per_us.size() == amplitudes.size(),
          "NoiseSpectrum: omegas and amplitudes must have equal length");
  require(omegas_rad_per_us.size() == 0 || omegas_rad_per_us[0] > 0,
          "NoiseSpectrum: omegas must be positive");
  require_increasing(omegas_rad_per_us, "NoiseSpectrum omegas");
  if (uncertainty) {
    require(uncertainty->size() == amplitudes.size(), "NoiseSpectrum: uncertainty length mismatch");
  }
}

double FitResult::param(const std::string& name) const {
  for (std::size_t i = 0; i < param_names.size(); ++i) {
    if (param_names[i] == name) return params[static_cast<Eigen::Index>(i)];
  }
  throw std::invalid_argument("FitResult: no parameter named " + name);
}

double FitResult::stderr_of(const std::string& name) const {
  for (std::size_t i = 0; i < param_names.size(); ++i) {
    if (param_names[i] == name) return std_errors[static_cast<Eigen::Index>(i)];
  }
  throw std::invalid_argument("FitResult: no parameter named " + name);
}

double planar_bath_geometry_factor(double axis_polar_angle) {
  const double c2 = std::cos(axis_polar_angle) * std::cos(axis_polar_angle);
  return std::numbers::pi / 32.0 * (9.0 + 6.0 * c2 + 9.0 * c2 * c2);
}

double brms_from_density(const SpinBathParams& bath, const NVSensor& sensor,
                         const PhysicalConstants& constants) {
  if (!(sensor.depth_nm > 0)) {
    throw std::domain_error("brms_from_density: sensor depth must be > 0");
  }
  const double gamma_si = 2.0 * std::numbers::pi * constants.gamma_e_hz_per_tesla;
  const double pref_t_nm3 = constants.mu0_over_4pi * gamma_si * constants.hbar * 1e27;
  const double geom = planar_bath_geometry_factor(sensor.axis_polar_angle);
  const double d2 = sensor.depth_nm * sensor.depth_nm;
  return pref_t_nm3 * std::sqrt(bath.sigma_per_nm2 * geom) / (2.0 * d2);
}

}  // namespace spinbath
