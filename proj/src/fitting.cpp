#include "spinbath/fitting.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <limits>

#include "spinbath/montecarlo.hpp"  // RandomStream for seeded multistart

namespace spinbath {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

VectorXd clamp_to_bounds(VectorXd p, const VectorXd& lo, const VectorXd& hi) {
  for (Eigen::Index i = 0; i < p.size(); ++i) p[i] = std::clamp(p[i], lo[i], hi[i]);
  return p;
}

Eigen::MatrixXd numeric_jacobian(const Objective& obj, const VectorXd& p, const VectorXd& r0) {
  const Eigen::Index n = p.size();
  const Eigen::Index m = r0.size();
  Eigen::MatrixXd jac(m, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double h = 1e-6 * std::max(std::abs(p[i]), obj.scale[i]);
    VectorXd pl = p, ph = p;
    ph[i] = std::min(p[i] + h, obj.upper[i]);
    pl[i] = std::max(p[i] - h, obj.lower[i]);
    const double dh = ph[i] - pl[i];
    if (dh <= 0) {
      jac.col(i).setZero();
      continue;
    }
    jac.col(i) = (obj.residuals(ph) - obj.residuals(pl)) / dh;
  }
  return jac;
}

}  // namespace

Objective Objective::unbounded(std::function<VectorXd(const VectorXd&)> f, Eigen::Index n) {
  Objective obj;
  obj.residuals = std::move(f);
  obj.lower = VectorXd::Constant(n, -kInf);
  obj.upper = VectorXd::Constant(n, kInf);
  obj.scale = VectorXd::Ones(n);
  return obj;
}

FitResult least_squares(const Objective& obj, VectorXd init,
                        std::vector<std::string> param_names, FitTolerances tol) {
  const Eigen::Index n = init.size();
  if (obj.lower.size() != n || obj.upper.size() != n || obj.scale.size() != n) {
    throw std::invalid_argument("least_squares: bounds/scale dimension mismatch");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (init[i] < obj.lower[i] || init[i] > obj.upper[i]) {
      throw std::invalid_argument("least_squares: initial guess outside bounds");
    }
  }

  VectorXd p = init;
  VectorXd r = obj.residuals(p);
  if (r.size() < n) throw std::invalid_argument("least_squares: fewer residuals than parameters");
  double ssr = r.squaredNorm();

  FitResult result;
  result.param_names = std::move(param_names);
  if (result.param_names.empty()) {
    for (Eigen::Index i = 0; i < n; ++i) result.param_names.push_back("p" + std::to_string(i));
  }

  double lambda = 0.0;  // pure Gauss-Newton first; linear problems solve exactly
  bool converged = false;
  Eigen::MatrixXd jac = numeric_jacobian(obj, p, r);
  int it = 0;
  for (; it < tol.max_iterations; ++it) {
    const Eigen::MatrixXd jtj = jac.transpose() * jac;
    const VectorXd g = jac.transpose() * r;

    if (ssr < 1e-28) {  // residuals vanish; nothing left to minimise
      converged = true;
      break;
    }

    // Projected scale-free gradient: the cosine between each free Jacobian
    // column and the residual. Components pushing against an active bound
    // are ignored.
    const double rnorm = std::sqrt(ssr);
    double gcos = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const bool at_lo = p[i] <= obj.lower[i] && g[i] > 0;
      const bool at_hi = p[i] >= obj.upper[i] && g[i] < 0;
      const double colnorm = jac.col(i).norm();
      if (!at_lo && !at_hi && colnorm > 0) {
        gcos = std::max(gcos, std::abs(g[i]) / (colnorm * rnorm));
      }
    }
    if (gcos < tol.gradient) {
      // the remaining undamped (bound-clamped) step must also be negligible
      Eigen::LDLT<Eigen::MatrixXd> ldlt(jtj);
      double smax = 0.0;
      if (ldlt.info() == Eigen::Success) {
        const VectorXd trial = clamp_to_bounds(p + ldlt.solve(-g), obj.lower, obj.upper);
        for (Eigen::Index i = 0; i < n; ++i) {
          smax = std::max(smax,
                          std::abs(trial[i] - p[i]) / std::max(std::abs(p[i]), obj.scale[i]));
        }
      }
      if (smax < tol.step) {
        converged = true;
        break;
      }
    }

    // Marquardt-scaled damping; raise lambda until the step is accepted.
    bool accepted = false;
    for (int attempt = 0; attempt < 60 && !accepted; ++attempt) {
      Eigen::MatrixXd a = jtj;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double d = std::max(jtj(i, i), 1e-300);
        a(i, i) = d * (1.0 + lambda);
      }
      Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
      if (ldlt.info() != Eigen::Success) {
        lambda = std::max(lambda * 10.0, 1e-6);
        if (result.message.empty()) result.message = "near-singular jacobian; damping raised";
        continue;
      }
      const VectorXd step = ldlt.solve(-g);
      const VectorXd p_new = clamp_to_bounds(p + step, obj.lower, obj.upper);
      if (!p_new.allFinite()) {
        lambda = std::max(lambda * 10.0, 1e-6);
        continue;
      }
      const VectorXd r_new = obj.residuals(p_new);
      const double ssr_new = r_new.squaredNorm();
      if (std::isfinite(ssr_new) && ssr_new <= ssr * (1.0 + 1e-14)) {
        p = p_new;
        r = r_new;
        ssr = ssr_new;
        lambda = lambda < 1e-10 ? 0.0 : lambda / 4.0;
        accepted = true;
      } else {
        lambda = std::max(lambda * 8.0, 1e-6);
      }
    }
    if (!accepted) break;  // no descent direction left at any damping
    jac = numeric_jacobian(obj, p, r);
  }

  result.params = p;
  result.residual_norm = ssr;
  result.iterations = it;
  result.converged = converged;

  // Curvature-based standard errors.
  const Eigen::Index m = r.size();
  result.std_errors = VectorXd::Zero(n);
  const double dof = static_cast<double>(m - n);
  const double s2 = dof > 0 ? ssr / dof : 0.0;
  Eigen::MatrixXd jtj = jac.transpose() * jac;
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(jtj);
  const Eigen::MatrixXd cov = s2 * cod.pseudoInverse();
  for (Eigen::Index i = 0; i < n; ++i) {
    result.std_errors[i] = std::sqrt(std::max(0.0, cov(i, i)));
  }
  return result;
}

FitResult least_squares_multistart(const Objective& obj, VectorXd init, int n_starts,
                                   std::uint64_t seed, std::vector<std::string> param_names,
                                   FitTolerances tol) {
  n_starts = std::clamp(n_starts, 1, 8);
  FitResult best;
  bool has_best = false;
  RandomStream rng(seed);
  for (int s = 0; s < n_starts; ++s) {
    VectorXd start = init;
    if (s > 0) {
      for (Eigen::Index i = 0; i < init.size(); ++i) {
        const double factor = std::exp((rng.next_unit() - 0.5) * 2.0 * std::log(4.0));
        start[i] = init[i] != 0 ? init[i] * factor : obj.scale[i] * (rng.next_unit() - 0.5);
        start[i] = std::clamp(start[i], obj.lower[i], obj.upper[i]);
      }
    }
    FitResult r = least_squares(obj, start, param_names, tol);
    const bool better = !has_best ||
                        (r.converged && !best.converged) ||
                        (r.converged == best.converged && r.residual_norm < best.residual_norm);
    if (better) {
      best = r;
      has_best = true;
    }
  }
  return best;
}

FitResult extract_t2(const CoherenceCurve& curve) {
  if (curve.size() < 6) {
    throw std::invalid_argument("extract_t2: need at least 6 points");
  }
  for (Eigen::Index i = 0; i < curve.size(); ++i) {
    if (!(curve.values[i] > 0) || curve.values[i] > 1.0 + 1e-12) {
      throw std::invalid_argument("extract_t2: coherence values must lie in (0, 1]");
    }
  }
  const ArrayXd& t = curve.times_us;
  const ArrayXd& c = curve.values;

  // T2 init: time of the e^{-1} crossing by linear interpolation.
  const double target = std::exp(-1.0);
  double t2_init = t[t.size() - 1];
  for (Eigen::Index i = 1; i < c.size(); ++i) {
    if ((c[i - 1] - target) * (c[i] - target) <= 0 && c[i] != c[i - 1]) {
      t2_init = t[i - 1] + (target - c[i - 1]) / (c[i] - c[i - 1]) * (t[i] - t[i - 1]);
      break;
    }
  }
  t2_init = std::max(t2_init, 1e-6);

  Objective obj;
  obj.residuals = [&t, &c](const VectorXd& p) {
    return VectorXd((stretched_exp(t, p[0], p[1]) - c).matrix());
  };
  obj.lower = (VectorXd(2) << 1e-9, 0.5).finished();
  obj.upper = (VectorXd(2) << kInf, 4.0).finished();
  obj.scale = (VectorXd(2) << t2_init, 1.0).finished();
  FitResult fit = least_squares(obj, (VectorXd(2) << t2_init, 1.0).finished(), {"T2_us", "p"});
  if (fit.param("T2_us") > 50.0 * t[t.size() - 1]) {
    // degenerate flat curve: no decay inside the sampled window
    fit.converged = false;
    fit.message = "curve does not decay within the sampled time window; T2 unidentified";
  }
  return fit;
}

CouplingStrength extract_coupling_strength(const CoherenceCurve& curve, bool normalized) {
  (void)normalized;  // provenance flag: caller states the fast-noise floor was removed
  if (curve.size() < 4) {
    throw std::invalid_argument("extract_coupling_strength: need at least 4 points");
  }
  const ArrayXd& t = curve.times_us;
  const ArrayXd& c = curve.values;
  const double t_max = t[t.size() - 1];

  // Short-time expansion chi ~ (K / 2 tau_c) t^2 seeds K; tau_c starts
  // mid-range of the sampled window.
  double c2_coeff = 0.0;
  for (Eigen::Index i = 0; i < std::min<Eigen::Index>(3, t.size()); ++i) {
    if (c[i] > 0 && t[i] > 0) c2_coeff = std::max(c2_coeff, -std::log(std::min(c[i], 1.0)) / (t[i] * t[i]));
  }
  const double tauc_init = std::max(t_max / 3.0, 1e-3);
  const double k_init = 2.0 * c2_coeff * tauc_init;

  Objective obj;
  obj.residuals = [&t, &c](const VectorXd& p) {
    const double k = p[0], tc = p[1];
    VectorXd r(t.size());
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      r[i] = std::exp(-k * tc * ou_phi(t[i] / tc)) - c[i];
    }
    return r;
  };
  obj.lower = (VectorXd(2) << 0.0, 1e-6).finished();
  obj.upper = (VectorXd(2) << kInf, kInf).finished();
  obj.scale = (VectorXd(2) << std::max(k_init, 1e-3), tauc_init).finished();

  FitResult fit = least_squares_multistart(
      obj, (VectorXd(2) << k_init, tauc_init).finished(), 6, 0x5eedu, {"K_per_us", "tau_c_us"});

  CouplingStrength out;
  out.tau_c_us = fit.param("tau_c_us");
  out.coupling_khz = fit.param("K_per_us") * 1e3;
  if (t_max < 0.5 * out.tau_c_us) {
    fit.message = "non-identifiable regime: t_max << tau_c, K reported with inflated stderr";
  }
  out.fit = fit;
  return out;
}

DensityAndTauc extract_density_and_tauc(const TauSweep& sweep,
                                        const std::optional<NVSensor>& sensor,
                                        const PhysicalConstants& constants) {
  if (!sensor) {
    throw std::invalid_argument(
        "extract_density_and_tauc: sensor depth unknown; sigma and depth are degenerate "
        "(sigma scales as depth^4), so the depth must be fixed");
  }
  if (sweep.size() < 4) {
    throw std::invalid_argument("extract_density_and_tauc: need at least 4 points");
  }
  const double t = sweep.total_time_us;
  const double tol = 1e-6 * t;
  if (std::abs(sweep.taus_us[0]) > tol ||
      std::abs(sweep.taus_us[sweep.size() - 1] - t / 2) > tol) {
    throw std::invalid_argument(
        "extract_density_and_tauc: tau grid must include the DEER (tau=0) and Hahn "
        "(tau=t/2) endpoints");
  }

  // chi scales linearly in sigma at fixed geometry, so scale-free init from
  // the DEER endpoint with tau_c ~ t/2.
  const double gamma = constants.gamma_e_rad_per_us_tesla();
  const NVSensor& sens = *sensor;
  auto chi_model = [&](double sigma, double tauc, double tau) {
    const SpinBathParams bp(sigma, tauc);
    const double gb = gamma * brms_from_density(bp, sens, constants);
    const PulseSequence seq = build_sequence(SequenceFamily::DeerEcho, t, 0, tau);
    return ou_chi(product_modulation(seq), gb, tauc);
  };

  const double tauc0 = std::max(t / 2.0, 1e-3);
  const double chi0_target = -std::log(std::clamp(sweep.values[0], 1e-6, 1.0));
  const double chi0_unit = std::max(chi_model(1.0, tauc0, 0.0), 1e-300);
  const double sigma0 = std::max(chi0_target / chi0_unit, 1e-8);

  Objective obj;
  obj.residuals = [&](const VectorXd& p) {
    VectorXd r(sweep.size());
    for (Eigen::Index i = 0; i < sweep.size(); ++i) {
      r[i] = std::exp(-chi_model(p[0], p[1], sweep.taus_us[i])) - sweep.values[i];
    }
    return r;
  };
  obj.lower = (VectorXd(2) << 0.0, 1e-6).finished();
  obj.upper = (VectorXd(2) << kInf, kInf).finished();
  obj.scale = (VectorXd(2) << std::max(sigma0, 1e-6), tauc0).finished();

  FitResult fit = least_squares_multistart(
      obj, (VectorXd(2) << sigma0, tauc0).finished(), 6, 0xD0E5u, {"sigma_per_nm2", "tau_c_us"});

  DensityAndTauc out;
  out.sigma_per_nm2 = fit.param("sigma_per_nm2");
  out.tau_c_us = fit.param("tau_c_us");
  out.fit = std::move(fit);
  return out;
}

}  // namespace spinbath
