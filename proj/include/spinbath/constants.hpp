#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>

// Internal unit system, used everywhere unless a name says otherwise:
//   time               microseconds (us)
//   angular frequency  rad/us
//   magnetic field     tesla
//   length             nanometres (nm)
//   areal density      nm^-2
// Interfaces that take or report other units carry the unit in their name.

namespace spinbath {

struct PhysicalConstants {
  double gamma_e_hz_per_tesla = 2.8024953e10;  // electron gyromagnetic ratio / 2pi
  double mu0_over_4pi = 1e-7;                  // T*m per A*m^2
  double hbar = 1.054571817e-34;               // J*s

  PhysicalConstants() = default;
  PhysicalConstants(double gamma_hz_per_t, double mu0_4pi, double hbar_js)
      : gamma_e_hz_per_tesla(gamma_hz_per_t), mu0_over_4pi(mu0_4pi), hbar(hbar_js) {
    if (!(gamma_e_hz_per_tesla > 0) || !(mu0_over_4pi > 0) || !(hbar > 0)) {
      throw std::invalid_argument("PhysicalConstants: all constants must be strictly positive");
    }
  }

  // Angular gyromagnetic ratio in internal units, rad/(us*T).
  double gamma_e_rad_per_us_tesla() const {
    return 2.0 * std::numbers::pi * gamma_e_hz_per_tesla * 1e-6;
  }

  // Secular electron-electron dipolar coupling prefactor
  // (mu0/4pi) * gamma^2 * hbar with gamma angular, expressed in rad*nm^3/us.
  // A spin pair 1 nm apart couples at ~327 rad/us (~52 MHz).
  double dipolar_prefactor_rad_nm3_per_us() const {
    const double gamma_si = 2.0 * std::numbers::pi * gamma_e_hz_per_tesla;  // rad/(s*T)
    return mu0_over_4pi * gamma_si * gamma_si * hbar * 1e27 * 1e-6;
  }
};

inline const PhysicalConstants& standard_constants() {
  static const PhysicalConstants c{};
  return c;
}

}  // namespace spinbath
