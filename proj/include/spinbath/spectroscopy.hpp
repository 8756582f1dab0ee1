#pragma once

#include "spinbath/fitting.hpp"

namespace spinbath {

// Double-Lorentzian spectral model
//   S(w) = d1^2 t1 / (1 + (w t1)^2) + d2^2 t2 / (1 + (w t2)^2),
// ordered so tau1 > tau2 (slow component first). An OU bath with rms field
// B and correlation time tc corresponds to d^2 = 2 (gamma B)^2, t = tc.
struct DoubleLorentzian {
  double delta1;  // rad/us
  double tau1_us;
  double delta2;
  double tau2_us;

  double operator()(double omega) const;
  ArrayXd operator()(const ArrayXd& omegas) const;
};

struct SpectrumReconstruction {
  NoiseSpectrum spectrum;
  std::size_t dropped_low = 0;    // points with C <= eps, excluded
  std::size_t clipped_high = 0;   // points with C > 1, clipped to 1
};

struct ReconstructionOptions {
  double eps = 1e-3;              // saturation floor on coherence
  double merge_rel_tol = 1e-9;    // probe frequencies closer than this merge
};

// Spectral decomposition of a family of CPMG decays under the delta-filter
// approximation: a CPMG-N point at time t probes w0 = pi N / t with
//   S(w0) = -ln C(t) * pi^2 / (4 t).
// Points at the same probe frequency merge by inverse-variance weighting.
// Throws std::runtime_error when every point is saturated.
SpectrumReconstruction reconstruct_spectrum(const std::vector<CoherenceCurve>& curves,
                                            const ReconstructionOptions& opts = {});

// Least-squares fit of the double-Lorentzian model; parameters ordered
// tau1 > tau2 on return. Requires >= 8 points spanning >= 1 decade.
// Non-convergence is reported through FitResult::converged, never silently.
FitResult fit_double_lorentzian(const NoiseSpectrum& spectrum,
                                std::optional<DoubleLorentzian> init = std::nullopt);

DoubleLorentzian double_lorentzian_from_fit(const FitResult& fit);

// Remove the fast-noise floor from a coherence curve:
//   ln C_out(t) = ln C_in(t) + chi_fast(t),
// where chi_fast is the decoherence the fast Lorentzian component
// (delta2, tau2) would cause for this curve's own pulse sequence.
CoherenceCurve normalize_by_fast_noise(const CoherenceCurve& curve, double delta2,
                                       double tau2_us,
                                       const PhysicalConstants& constants = standard_constants());

}  // namespace spinbath
