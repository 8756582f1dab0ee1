#include "spinbath/spectroscopy.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <sstream>

namespace spinbath {

double DoubleLorentzian::operator()(double w) const {
  const double x1 = w * tau1_us, x2 = w * tau2_us;
  return delta1 * delta1 * tau1_us / (1.0 + x1 * x1) +
         delta2 * delta2 * tau2_us / (1.0 + x2 * x2);
}

ArrayXd DoubleLorentzian::operator()(const ArrayXd& omegas) const {
  ArrayXd out(omegas.size());
  for (Eigen::Index i = 0; i < omegas.size(); ++i) out[i] = (*this)(omegas[i]);
  return out;
}

SpectrumReconstruction reconstruct_spectrum(const std::vector<CoherenceCurve>& curves,
                                            const ReconstructionOptions& opts) {
  int distinct_n = 0;
  {
    std::vector<int> ns;
    for (const auto& c : curves) {
      if (c.sequence.family != SequenceFamily::Cpmg && c.sequence.family != SequenceFamily::Hahn) {
        throw std::invalid_argument("reconstruct_spectrum: curves must be CPMG-N (or Hahn = CPMG-1)");
      }
      const int n = c.sequence.family == SequenceFamily::Hahn ? 1 : c.sequence.n_pulses;
      if (n < 1) throw std::invalid_argument("reconstruct_spectrum: CPMG order must be >= 1");
      if (std::find(ns.begin(), ns.end(), n) == ns.end()) ns.push_back(n);
    }
    distinct_n = static_cast<int>(ns.size());
  }
  if (distinct_n < 2) {
    throw std::invalid_argument("reconstruct_spectrum: need curves for at least 2 distinct N");
  }

  struct Point {
    double s, var;
  };
  std::map<double, std::vector<Point>> bins;  // key: probe frequency
  SpectrumReconstruction out;
  std::size_t total = 0, saturated_high = 0;
  double cmin = std::numeric_limits<double>::infinity(), cmax = -cmin;

  for (const auto& curve : curves) {
    const int n = curve.sequence.family == SequenceFamily::Hahn ? 1 : curve.sequence.n_pulses;
    for (Eigen::Index i = 0; i < curve.size(); ++i) {
      ++total;
      const double t = curve.times_us[i];
      double c = curve.values[i];
      cmin = std::min(cmin, c);
      cmax = std::max(cmax, c);
      if (c <= opts.eps) {
        ++out.dropped_low;  // saturated: -ln C unreliable, drop rather than bias the fit
        continue;
      }
      if (c >= 1.0 - 1e-6) ++saturated_high;  // near-unity: S contribution ~ 0
      if (c > 1.0) {
        c = 1.0;
        ++out.clipped_high;
      }
      const double w0 = std::numbers::pi * n / t;
      const double s = -std::log(c) * std::numbers::pi * std::numbers::pi / (4.0 * t);
      double var = 1.0;
      if (curve.uncertainty) {
        const double u = (*curve.uncertainty)[i];
        const double sv = u / c * std::numbers::pi * std::numbers::pi / (4.0 * t);
        var = std::max(sv * sv, 1e-300);
      }
      // merge into an existing bin within relative tolerance
      auto it = bins.lower_bound(w0 * (1.0 - opts.merge_rel_tol));
      if (it != bins.end() && std::abs(it->first - w0) <= opts.merge_rel_tol * w0) {
        it->second.push_back({s, var});
      } else {
        bins[w0].push_back({s, var});
      }
    }
  }

  if (bins.empty() || out.dropped_low + saturated_high >= total) {
    std::ostringstream msg;
    msg << "reconstruct_spectrum: all " << total
        << " points saturated (coherence range [" << cmin << ", " << cmax
        << "], usable range (" << opts.eps << ", " << 1.0 - 1e-6 << "))";
    throw std::runtime_error(msg.str());
  }

  ArrayXd omegas(static_cast<Eigen::Index>(bins.size()));
  ArrayXd amps(omegas.size());
  ArrayXd errs(omegas.size());
  Eigen::Index k = 0;
  bool any_uncertainty = false;
  for (const auto& [w0, pts] : bins) {
    double wsum = 0, swsum = 0;
    for (const auto& pt : pts) {
      const double w = 1.0 / pt.var;
      wsum += w;
      swsum += w * pt.s;
    }
    omegas[k] = w0;
    amps[k] = swsum / wsum;
    errs[k] = std::sqrt(1.0 / wsum);
    if (pts[0].var != 1.0) any_uncertainty = true;
    ++k;
  }
  out.spectrum = NoiseSpectrum(
      std::move(omegas), std::move(amps), SpectrumProvenance::Reconstructed,
      any_uncertainty ? std::optional<ArrayXd>(std::move(errs)) : std::nullopt);
  return out;
}

FitResult fit_double_lorentzian(const NoiseSpectrum& spectrum,
                                std::optional<DoubleLorentzian> init) {
  const Eigen::Index m = spectrum.size();
  if (m < 8) throw std::invalid_argument("fit_double_lorentzian: need at least 8 points");
  const double w_lo = spectrum.omegas_rad_per_us[0];
  const double w_hi = spectrum.omegas_rad_per_us[m - 1];
  if (w_hi < 10.0 * w_lo) {
    throw std::invalid_argument("fit_double_lorentzian: points must span at least one decade");
  }

  DoubleLorentzian p0{};
  if (init) {
    p0 = *init;
  } else {
    // Knee-based heuristics: slow knee where S falls to half its low-w value,
    // fast component a decade above with the residual high-w amplitude.
    const double s_lo = std::max(spectrum.amplitudes[0], 1e-300);
    double w_knee = w_hi;
    for (Eigen::Index i = 0; i < m; ++i) {
      if (spectrum.amplitudes[i] < 0.5 * s_lo) {
        w_knee = spectrum.omegas_rad_per_us[i];
        break;
      }
    }
    p0.tau1_us = 1.0 / w_knee;
    p0.delta1 = std::sqrt(s_lo / p0.tau1_us);
    p0.tau2_us = p0.tau1_us / 10.0;
    const double s_hi = std::max(spectrum.amplitudes[m - 1], 1e-3 * s_lo);
    p0.delta2 = std::sqrt(s_hi * (1.0 + 1.0 / (w_hi * p0.tau2_us * w_hi * p0.tau2_us)) / p0.tau2_us);
  }

  Objective obj;
  const ArrayXd& ws = spectrum.omegas_rad_per_us;
  const ArrayXd& ss = spectrum.amplitudes;
  obj.residuals = [&ws, &ss](const VectorXd& p) {
    const DoubleLorentzian dl{p[0], p[1], p[2], p[3]};
    VectorXd r(ws.size());
    for (Eigen::Index i = 0; i < ws.size(); ++i) r[i] = dl(ws[i]) - ss[i];
    return r;
  };
  obj.lower = (VectorXd(4) << 0.0, 1e-9, 0.0, 1e-9).finished();
  obj.upper = VectorXd::Constant(4, std::numeric_limits<double>::infinity());
  obj.scale = (VectorXd(4) << std::max(p0.delta1, 1e-6), std::max(p0.tau1_us, 1e-6),
               std::max(p0.delta2, 1e-6), std::max(p0.tau2_us, 1e-6))
                  .finished();

  FitResult fit = least_squares_multistart(
      obj, (VectorXd(4) << p0.delta1, p0.tau1_us, p0.delta2, p0.tau2_us).finished(), 8,
      0x10125u, {"delta1", "tau1_us", "delta2", "tau2_us"});

  // Canonical order: slow component first; remove the permutation degeneracy.
  if (fit.params[3] > fit.params[1]) {
    std::swap(fit.params[0], fit.params[2]);
    std::swap(fit.params[1], fit.params[3]);
    std::swap(fit.std_errors[0], fit.std_errors[2]);
    std::swap(fit.std_errors[1], fit.std_errors[3]);
  }
  fit.params[0] = std::abs(fit.params[0]);
  fit.params[2] = std::abs(fit.params[2]);
  return fit;
}

DoubleLorentzian double_lorentzian_from_fit(const FitResult& fit) {
  return DoubleLorentzian{fit.param("delta1"), fit.param("tau1_us"), fit.param("delta2"),
                          fit.param("tau2_us")};
}

CoherenceCurve normalize_by_fast_noise(const CoherenceCurve& curve, double delta2,
                                       double tau2_us, const PhysicalConstants& constants) {
  if (!(tau2_us > 0)) throw std::invalid_argument("normalize_by_fast_noise: tau2 must be > 0");
  if (delta2 < 0) throw std::invalid_argument("normalize_by_fast_noise: delta2 must be >= 0");
  // The fast Lorentzian is an OU bath with (gamma b)^2 = delta2^2 / 2.
  const double gb_fast = delta2 / std::numbers::sqrt2;
  ArrayXd values(curve.size());
  for (Eigen::Index i = 0; i < curve.size(); ++i) {
    const PulseSequence seq = build_sequence(curve.sequence, curve.times_us[i]);
    const double chi_fast = ou_chi(product_modulation(seq), gb_fast, tau2_us);
    values[i] = curve.values[i] * std::exp(chi_fast);
  }
  std::optional<ArrayXd> unc;
  if (curve.uncertainty) {
    unc = *curve.uncertainty * (values / curve.values.max(1e-300));
  }
  (void)constants;
  return CoherenceCurve(curve.times_us, std::move(values), curve.sequence, std::move(unc));
}

}  // namespace spinbath
