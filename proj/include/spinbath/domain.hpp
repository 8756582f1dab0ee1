#pragma once

#include <Eigen/Core>
#include <optional>
#include <string>
#include <vector>

#include "spinbath/constants.hpp"

namespace spinbath {

using Eigen::ArrayXd;
using Eigen::VectorXd;

// NV axis tilt for a <111> defect axis under a <100> surface normal.
inline constexpr double kDefaultAxisPolarAngleDeg = 54.7356;

struct NVSensor {
  double depth_nm;             // > 0
  double axis_polar_angle;     // rad, in [0, pi/2], between NV axis and surface normal
  double bias_field_gauss;     // >= 0

  NVSensor(double depth, double axis_angle_rad, double bias_gauss);

  static NVSensor at_depth(double depth_nm, double bias_gauss = 0.0);
};

struct SpinBathParams {
  double sigma_per_nm2;              // areal spin density, >= 0
  double tau_c_us;                   // correlation time, > 0
  std::optional<double> b_rms_tesla; // cached rms field at the sensor, >= 0 if set

  SpinBathParams(double sigma, double tau_c,
                 std::optional<double> b_rms = std::nullopt);

  // Copy with the rms field cache filled in (from the given geometry if absent).
  SpinBathParams with_brms(const NVSensor& sensor,
                           const PhysicalConstants& constants = standard_constants()) const;
};

enum class SequenceFamily { Ramsey, Hahn, Cpmg, Deer, DeerEcho, Custom };

std::string to_string(SequenceFamily family);
SequenceFamily sequence_family_from_string(const std::string& name);

// Compact description of a sequence family, enough to rebuild the pulse
// pattern at any total time. For DEER-echo the bath flip sits at
// total_time/2 + tau_offset.
struct SequenceSpec {
  SequenceFamily family = SequenceFamily::Ramsey;
  int n_pulses = 0;          // CPMG order; ignored elsewhere
  double tau_offset_us = 0;  // DEER-echo only

  std::string label() const;
};

// Timed pi flips on the sensor and bath channels over [0, total_time].
// Flip lists are strictly increasing; a pair of coincident flips on the same
// channel cancels and is removed on construction. Sensor flips live in the
// open interval, bath flips may sit exactly at total_time (where they are
// inert for the accumulated phase).
struct PulseSequence {
  double total_time_us;
  std::vector<double> sensor_flips_us;
  std::vector<double> bath_flips_us;
  std::string label;

  PulseSequence(double total_time, std::vector<double> sensor_flips,
                std::vector<double> bath_flips, std::string label = "custom");

  // Comparison tolerance for flip times, 1e-12 * total_time.
  double time_tolerance() const { return 1e-12 * total_time_us; }
};

struct CoherenceCurve {
  ArrayXd times_us;    // strictly increasing
  ArrayXd values;      // expected in [-0.1, 1.1]
  SequenceSpec sequence;
  std::optional<ArrayXd> uncertainty;  // per-point standard error

  CoherenceCurve() = default;
  CoherenceCurve(ArrayXd times, ArrayXd values, SequenceSpec seq,
                 std::optional<ArrayXd> stderr_values = std::nullopt);

  Eigen::Index size() const { return times_us.size(); }
};

// DEER-echo measurement: coherence versus bath-flip offset tau at fixed
// total evolution time.
struct TauSweep {
  double total_time_us;
  ArrayXd taus_us;     // strictly increasing, within [0, total_time/2]
  ArrayXd values;
  std::optional<ArrayXd> uncertainty;

  TauSweep() = default;
  TauSweep(double total_time, ArrayXd taus, ArrayXd values,
           std::optional<ArrayXd> stderr_values = std::nullopt);

  Eigen::Index size() const { return taus_us.size(); }
};

enum class SpectrumProvenance { Reconstructed, Model };

struct NoiseSpectrum {
  ArrayXd omegas_rad_per_us;   // strictly increasing, > 0
  ArrayXd amplitudes;          // S(omega), rad^2/us
  std::optional<ArrayXd> uncertainty;
  SpectrumProvenance provenance = SpectrumProvenance::Model;

  NoiseSpectrum() = default;
  NoiseSpectrum(ArrayXd omegas, ArrayXd amplitudes, SpectrumProvenance prov,
                std::optional<ArrayXd> stderr_values = std::nullopt);

  Eigen::Index size() const { return omegas_rad_per_us.size(); }
};

struct FitResult {
  std::vector<std::string> param_names;
  VectorXd params;
  VectorXd std_errors;     // curvature-based, >= 0
  double residual_norm = 0;  // sum of squared residuals
  bool converged = false;
  int iterations = 0;
  std::string message;     // diagnostics / warnings, empty when clean

  double param(const std::string& name) const;
  double stderr_of(const std::string& name) const;
};

// rms secular dipolar field at the sensor from a uniform planar bath of
// spin-1/2 at density sigma, a perpendicular distance depth away, projected
// on the sensor axis. Scales as sqrt(sigma)/depth^2:
//   B_rms = (mu0/4pi) gamma hbar sqrt(sigma * G(alpha)) / (2 depth^2)
// with the angular factor G(alpha) = (pi/32)(9 + 6 cos^2 a + 9 cos^4 a)
// obtained by integrating (1 - 3 cos^2 theta)^2 / r^6 over the bath plane.
double brms_from_density(const SpinBathParams& bath, const NVSensor& sensor,
                         const PhysicalConstants& constants = standard_constants());

// The angular integral above; alpha is the sensor-axis polar angle.
double planar_bath_geometry_factor(double axis_polar_angle);

}  // namespace spinbath
