#pragma once

#include "spinbath/domain.hpp"

namespace spinbath {

// Piecewise-constant +-1 toggling function: starts at +1 and changes sign at
// each breakpoint.
struct ModulationFunction {
  std::vector<double> breakpoints_us;  // strictly increasing within (0, total_time]
  double total_time_us = 0;

  double value(double t_us) const;           // sign at time t (right-continuous)
  double integral() const;                   // int_0^T f dt
  std::size_t segments() const { return breakpoints_us.size() + 1; }
};

// Canonical pulse patterns. CPMG-N places sensor flips at t(2k-1)/(2N);
// DEER adds a bath flip at t/2; DEER-echo offsets the bath flip to
// t/2 + tau_offset (tau_offset in [0, t/2]).
PulseSequence build_sequence(SequenceFamily family, double total_time_us,
                             int n_pulses = 0, double tau_offset_us = 0);
PulseSequence build_sequence(const SequenceSpec& spec, double total_time_us);

// Toggling function of the sensor channel (flips at sensor pi pulses).
ModulationFunction sensor_modulation(const PulseSequence& seq);

// Sign pattern of the bath field as seen by the sensor (flips at bath pi
// pulses).
ModulationFunction bath_modulation(const PulseSequence& seq);

// Product f*g of the two channel patterns; coincident sensor and bath flips
// cancel each other. This is the pattern weighting the bath field in the
// accumulated phase.
ModulationFunction product_modulation(const PulseSequence& seq);

// Filter function of the sensor pattern,
//   F(w t) = (w^2/2) | int_0^t f(t') e^{i w t'} dt' |^2,
// normalised so that chi(t) = (1/pi) int_0^inf S(w) F(w t) / w^2 dw.
// Evaluated in closed form from the breakpoints. Ramsey: 2 sin^2(wt/2);
// Hahn: 8 sin^4(wt/4).
double filter_function(const PulseSequence& seq, double omega_rad_per_us);

}  // namespace spinbath
