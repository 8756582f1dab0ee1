#include "spinbath/sequences.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <stdexcept>

namespace spinbath {

double ModulationFunction::value(double t_us) const {
  double sign = 1.0;
  for (double b : breakpoints_us) {
    if (t_us < b) break;
    sign = -sign;
  }
  return sign;
}

double ModulationFunction::integral() const {
  double acc = 0.0, prev = 0.0, sign = 1.0;
  for (double b : breakpoints_us) {
    acc += sign * (b - prev);
    prev = b;
    sign = -sign;
  }
  acc += sign * (total_time_us - prev);
  return acc;
}

PulseSequence build_sequence(SequenceFamily family, double total_time_us,
                             int n_pulses, double tau_offset_us) {
  if (!(total_time_us > 0)) {
    throw std::domain_error("build_sequence: total_time must be > 0");
  }
  if (n_pulses < 0) throw std::domain_error("build_sequence: n_pulses must be >= 0");
  const double t = total_time_us;
  switch (family) {
    case SequenceFamily::Ramsey:
      return PulseSequence(t, {}, {}, "Ramsey");
    case SequenceFamily::Hahn:
      return PulseSequence(t, {t / 2}, {}, "Hahn");
    case SequenceFamily::Cpmg: {
      std::vector<double> flips;
      flips.reserve(static_cast<std::size_t>(n_pulses));
      for (int k = 1; k <= n_pulses; ++k) {
        flips.push_back(t * (2.0 * k - 1.0) / (2.0 * n_pulses));
      }
      return PulseSequence(t, std::move(flips), {}, "CPMG-" + std::to_string(n_pulses));
    }
    case SequenceFamily::Deer:
      return PulseSequence(t, {t / 2}, {t / 2}, "DEER");
    case SequenceFamily::DeerEcho: {
      if (tau_offset_us < 0 || tau_offset_us > t / 2) {
        throw std::domain_error("build_sequence: DEER-echo tau_offset must lie in [0, total_time/2]");
      }
      return PulseSequence(t, {t / 2}, {t / 2 + tau_offset_us}, "DEER-echo");
    }
    case SequenceFamily::Custom:
      throw std::domain_error("build_sequence: custom sequences are built directly from flip lists");
  }
  throw std::domain_error("build_sequence: unknown sequence family");
}

PulseSequence build_sequence(const SequenceSpec& spec, double total_time_us) {
  return build_sequence(spec.family, total_time_us, spec.n_pulses, spec.tau_offset_us);
}

ModulationFunction sensor_modulation(const PulseSequence& seq) {
  return ModulationFunction{seq.sensor_flips_us, seq.total_time_us};
}

ModulationFunction bath_modulation(const PulseSequence& seq) {
  return ModulationFunction{seq.bath_flips_us, seq.total_time_us};
}

ModulationFunction product_modulation(const PulseSequence& seq) {
  const double tol = seq.time_tolerance();
  std::vector<double> merged;
  merged.reserve(seq.sensor_flips_us.size() + seq.bath_flips_us.size());
  std::size_t i = 0, j = 0;
  while (i < seq.sensor_flips_us.size() || j < seq.bath_flips_us.size()) {
    if (i < seq.sensor_flips_us.size() && j < seq.bath_flips_us.size() &&
        std::abs(seq.sensor_flips_us[i] - seq.bath_flips_us[j]) <= tol) {
      ++i;  // simultaneous flips leave the product unchanged
      ++j;
      continue;
    }
    if (j >= seq.bath_flips_us.size() ||
        (i < seq.sensor_flips_us.size() && seq.sensor_flips_us[i] < seq.bath_flips_us[j])) {
      merged.push_back(seq.sensor_flips_us[i++]);
    } else {
      merged.push_back(seq.bath_flips_us[j++]);
    }
  }
  // A flip exactly at total_time never changes the accumulated phase.
  while (!merged.empty() && merged.back() >= seq.total_time_us - tol) merged.pop_back();
  return ModulationFunction{std::move(merged), seq.total_time_us};
}

double filter_function(const PulseSequence& seq, double omega_rad_per_us) {
  if (!(omega_rad_per_us > 0)) {
    throw std::domain_error("filter_function: omega must be > 0");
  }
  // int f e^{iwt'} dt' = sum_j f_j (e^{iw u_{j+1}} - e^{iw u_j}) / (iw);
  // F = (w^2/2) |...|^2, so the 1/w cancels against the prefactor.
  const ModulationFunction f = sensor_modulation(seq);
  std::complex<double> acc{0.0, 0.0};
  double prev = 0.0, sign = 1.0;
  std::complex<double> e_prev{1.0, 0.0};
  for (double b : f.breakpoints_us) {
    const std::complex<double> e_b = std::polar(1.0, omega_rad_per_us * b);
    acc += sign * (e_b - e_prev);
    e_prev = e_b;
    prev = b;
    sign = -sign;
  }
  acc += sign * (std::polar(1.0, omega_rad_per_us * f.total_time_us) - e_prev);
  (void)prev;
  return 0.5 * std::norm(acc);
}

}  // namespace spinbath
