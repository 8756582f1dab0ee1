#pragma once

#include <functional>
#include <optional>

#include "spinbath/decoherence.hpp"

namespace spinbath {

// Nonlinear least-squares problem: residual map with optional box bounds and
// per-parameter scale hints (used for finite-difference steps and the
// relative step-size convergence test).
struct Objective {
  std::function<VectorXd(const VectorXd&)> residuals;
  VectorXd lower;  // -inf where unbounded
  VectorXd upper;  // +inf where unbounded
  VectorXd scale;  // > 0

  static Objective unbounded(std::function<VectorXd(const VectorXd&)> f, Eigen::Index n_params);
};

struct FitTolerances {
  double gradient = 1e-8;    // cosine measure: max |g_i| / (|J col i| |r|)
  double step = 1e-8;        // max scaled Gauss-Newton step at the solution
  int max_iterations = 200;
};

// Damped Gauss-Newton (Levenberg-Marquardt) with a numerically differenced
// Jacobian and bound clamping. converged means the projected gradient cosine
// is below tolerance and the remaining undamped step is below the relative
// step tolerance. Standard errors come from the diagonal of
// s^2 (J^T J)^{-1} at the solution.
FitResult least_squares(const Objective& obj, VectorXd init,
                        std::vector<std::string> param_names = {},
                        FitTolerances tol = {});

// least_squares from the best of up to n_starts seeded perturbations of init.
FitResult least_squares_multistart(const Objective& obj, VectorXd init, int n_starts,
                                   std::uint64_t seed,
                                   std::vector<std::string> param_names = {},
                                   FitTolerances tol = {});

// Stretched-exponential fit exp(-(t/T2)^p); p constrained to [0.5, 4].
// Initial T2 from the e^{-1} crossing, initial p = 1.
FitResult extract_t2(const CoherenceCurve& curve);

// DEER coupling-strength fit of exp(-K tau_c (e^{-t/tau_c} + t/tau_c - 1))
// over (K, tau_c); K = gamma^2 B_rms^2 tau_c reported in kHz (1e-3/us).
// When t_max << tau_c the two parameters are nearly degenerate; the result
// is then flagged in message and the K standard error reflects it.
struct CouplingStrength {
  double coupling_khz;
  double tau_c_us;
  FitResult fit;
};
CouplingStrength extract_coupling_strength(const CoherenceCurve& curve, bool normalized = false);

// DEER-echo sweep fit over (sigma, tau_c) with sigma mapped to B_rms through
// the sensor geometry. The sensor (with its fixed depth) is required: sigma
// and depth are degenerate (sigma ~ depth^4), so fitting without a known
// depth is refused.
struct DensityAndTauc {
  double sigma_per_nm2;
  double tau_c_us;
  FitResult fit;
};
DensityAndTauc extract_density_and_tauc(const TauSweep& sweep,
                                        const std::optional<NVSensor>& sensor,
                                        const PhysicalConstants& constants = standard_constants());

}  // namespace spinbath
