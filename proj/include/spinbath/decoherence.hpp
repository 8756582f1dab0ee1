#pragma once

#include "spinbath/sequences.hpp"

namespace spinbath {

// Gaussian bath field with exponential autocorrelation
//   <B(t1) B(t2)> = b_rms^2 exp(-|t1 - t2| / tau_c),
// i.e. a Lorentzian spectrum S(w) = 2 (gamma b_rms)^2 tau_c / (1 + (w tau_c)^2)
// in the convention chi(t) = (1/pi) int_0^inf S(w) F(w t) / w^2 dw.
struct OUNoise {
  double b_rms_tesla;  // > 0
  double tau_c_us;     // > 0

  OUNoise(double b_rms, double tau_c);

  static OUNoise from_bath(const SpinBathParams& bath, const NVSensor& sensor,
                           const PhysicalConstants& constants = standard_constants());

  // gamma * b_rms in rad/us.
  double gamma_b(const PhysicalConstants& constants = standard_constants()) const;
};

// e^{-x} + x - 1, evaluated by series for small x to avoid cancellation.
// This is the shape function of free-evolution OU dephasing.
double ou_phi(double x);

// Same for the Hahn echo: x - 3 + 4 e^{-x/2} - e^{-x}  (~ x^3/12 for small x).
double hahn_phi(double x);

// Closed forms, chi in nats:
//   free evolution / DEER:  chi = (gamma b)^2 tau_c^2 (e^{-t/tau_c} + t/tau_c - 1)
//   Hahn echo:              chi = (gamma b)^2 tau_c^2 hahn_phi(t/tau_c)
double chi_free_evolution(double gamma_b, double tau_c_us, double t_us);
double chi_hahn(double gamma_b, double tau_c_us, double t_us);

// Decoherence exponent of an arbitrary +-1 sign pattern under OU noise,
//   chi = (gamma_b^2 / 2) intint h(t1) h(t2) e^{-|t1-t2|/tau_c} dt1 dt2,
// evaluated exactly over the rectangle partition induced by the breakpoints
// (no quadrature). Stable down to t << tau_c via expm1-based terms.
double ou_chi(const ModulationFunction& pattern, double gamma_b, double tau_c_us);

// chi for a pulse sequence: the pattern is the product of the sensor and
// bath toggling functions. Requires t to equal the sequence total time.
double chi_correlation(const PulseSequence& seq, const OUNoise& noise, double t_us,
                       const PhysicalConstants& constants = standard_constants());

// exp(-chi) for the family rebuilt at each total time.
CoherenceCurve coherence_curve(const SequenceSpec& spec, const OUNoise& noise,
                               const ArrayXd& times_us,
                               const PhysicalConstants& constants = standard_constants());

// DEER-echo coherence versus bath-flip offset tau at fixed total time.
TauSweep deer_echo_tau_sweep(double total_time_us, const ArrayXd& taus_us,
                             const OUNoise& noise,
                             const PhysicalConstants& constants = standard_constants());

// Phenomenological stretched exponential exp(-(t/T2)^p).
double stretched_exp(double t_us, double t2_us, double p);
ArrayXd stretched_exp(const ArrayXd& t_us, double t2_us, double p);

// Resonant dip model for a swept bath drive: the pi pulse flips off-resonant
// bath spins with the Rabi probability
//   p(delta) = Omega^2/(Omega^2+delta^2) sin^2( sqrt(Omega^2+delta^2) t_pi / 2 ),
// Omega = 2 pi rabi, t_pi = 1/(2 rabi), delta = 2 pi (f - center), and the
// emitted coherence is exp(-p * baseline_chi * contrast_scale) relative to
// the off-resonant echo level.
struct DipModel {
  double center_mhz;       // > 0
  double rabi_mhz;         // > 0
  double contrast_scale = 1.0;

  DipModel(double center, double rabi, double contrast = 1.0);
};

ArrayXd deer_dip(const ArrayXd& freqs_mhz, const DipModel& model, double baseline_chi);

}  // namespace spinbath
