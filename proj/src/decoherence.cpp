#include "spinbath/decoherence.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace spinbath {

OUNoise::OUNoise(double b_rms, double tau_c) : b_rms_tesla(b_rms), tau_c_us(tau_c) {
  if (!(std::isfinite(b_rms) && b_rms > 0)) {
    throw std::invalid_argument("OUNoise: b_rms must be > 0 T");
  }
  if (!(std::isfinite(tau_c) && tau_c > 0)) {
    throw std::invalid_argument("OUNoise: tau_c must be > 0 us");
  }
}

OUNoise OUNoise::from_bath(const SpinBathParams& bath, const NVSensor& sensor,
                           const PhysicalConstants& constants) {
  const double b = bath.b_rms_tesla ? *bath.b_rms_tesla
                                    : brms_from_density(bath, sensor, constants);
  return OUNoise(b, bath.tau_c_us);
}

double OUNoise::gamma_b(const PhysicalConstants& constants) const {
  return constants.gamma_e_rad_per_us_tesla() * b_rms_tesla;
}

double ou_phi(double x) {
  if (x < 0) throw std::domain_error("ou_phi: x must be >= 0");
  if (x < 0.03) {
    // x^2/2 (1 - x/3 + x^2/12 - x^3/60 + x^4/360 - x^5/2520)
    return x * x / 2.0 *
           (1.0 + x * (-1.0 / 3 + x * (1.0 / 12 + x * (-1.0 / 60 + x * (1.0 / 360 - x / 2520)))));
  }
  return std::expm1(-x) + x;
}

double hahn_phi(double x) {
  if (x < 0) throw std::domain_error("hahn_phi: x must be >= 0");
  if (x < 0.05) {
    // x^3/12 - x^4/32 + 7x^5/960 - x^6/768 + 31x^7/161280
    return x * x * x *
           (1.0 / 12 + x * (-1.0 / 32 + x * (7.0 / 960 + x * (-1.0 / 768 + x * 31.0 / 161280))));
  }
  return x - 3.0 + 4.0 * std::exp(-x / 2.0) - std::exp(-x);
}

double chi_free_evolution(double gamma_b, double tau_c_us, double t_us) {
  const double gbt = gamma_b * tau_c_us;
  return gbt * gbt * ou_phi(t_us / tau_c_us);
}

double chi_hahn(double gamma_b, double tau_c_us, double t_us) {
  const double gbt = gamma_b * tau_c_us;
  return gbt * gbt * hahn_phi(t_us / tau_c_us);
}

double ou_chi(const ModulationFunction& pattern, double gamma_b, double tau_c_us) {
  if (!(tau_c_us > 0)) throw std::domain_error("ou_chi: tau_c must be > 0");
  const std::size_t m = pattern.segments();
  const double tc = tau_c_us;

  // Segment edges u_0 = 0 < u_1 < ... < u_m = T and alternating signs.
  std::vector<double> edges(m + 1);
  edges[0] = 0.0;
  for (std::size_t j = 0; j < pattern.breakpoints_us.size(); ++j) {
    edges[j + 1] = pattern.breakpoints_us[j];
  }
  edges[m] = pattern.total_time_us;

  // Same-segment blocks: intint_{[0,L]^2} e^{-|d|/tc} = 2 tc^2 ou_phi(L/tc).
  // Cross blocks for [a,b] x [c,d], c >= b:
  //   tc^2 expm1(-(b-a)/tc) expm1(-(d-c)/tc) e^{-(c-b)/tc},
  // an exact factorisation that avoids cancellation for short segments.
  double acc = 0.0;
  std::vector<double> em1(m);  // expm1(-L_j/tc) per segment
  for (std::size_t j = 0; j < m; ++j) {
    const double len = edges[j + 1] - edges[j];
    em1[j] = std::expm1(-len / tc);
    acc += 2.0 * tc * tc * ou_phi(len / tc);  // h_j^2 = 1
  }
  double sign_j = 1.0;
  for (std::size_t j = 0; j < m; ++j, sign_j = -sign_j) {
    double sign_k = -sign_j;
    for (std::size_t k = j + 1; k < m; ++k, sign_k = -sign_k) {
      const double gap = edges[k] - edges[j + 1];
      const double cross = tc * tc * em1[j] * em1[k] * std::exp(-gap / tc);
      acc += 2.0 * sign_j * sign_k * cross;
    }
  }
  return 0.5 * gamma_b * gamma_b * acc;
}

double chi_correlation(const PulseSequence& seq, const OUNoise& noise, double t_us,
                       const PhysicalConstants& constants) {
  if (std::abs(t_us - seq.total_time_us) > seq.time_tolerance()) {
    throw std::domain_error("chi_correlation: t must equal the sequence total time");
  }
  return ou_chi(product_modulation(seq), noise.gamma_b(constants), noise.tau_c_us);
}

CoherenceCurve coherence_curve(const SequenceSpec& spec, const OUNoise& noise,
                               const ArrayXd& times_us, const PhysicalConstants& constants) {
  ArrayXd values(times_us.size());
  for (Eigen::Index i = 0; i < times_us.size(); ++i) {
    if (times_us[i] == 0) {
      values[i] = 1.0;  // no evolution, no dephasing
      continue;
    }
    const PulseSequence seq = build_sequence(spec, times_us[i]);
    values[i] = std::exp(-chi_correlation(seq, noise, times_us[i], constants));
  }
  return CoherenceCurve(times_us, std::move(values), spec);
}

TauSweep deer_echo_tau_sweep(double total_time_us, const ArrayXd& taus_us,
                             const OUNoise& noise, const PhysicalConstants& constants) {
  ArrayXd values(taus_us.size());
  for (Eigen::Index i = 0; i < taus_us.size(); ++i) {
    const PulseSequence seq =
        build_sequence(SequenceFamily::DeerEcho, total_time_us, 0, taus_us[i]);
    values[i] = std::exp(-chi_correlation(seq, noise, total_time_us, constants));
  }
  return TauSweep(total_time_us, taus_us, std::move(values));
}

double stretched_exp(double t_us, double t2_us, double p) {
  if (!(t2_us > 0)) throw std::domain_error("stretched_exp: T2 must be > 0");
  if (!(p > 0)) throw std::domain_error("stretched_exp: p must be > 0");
  return std::exp(-std::pow(t_us / t2_us, p));
}

ArrayXd stretched_exp(const ArrayXd& t_us, double t2_us, double p) {
  if (!(t2_us > 0)) throw std::domain_error("stretched_exp: T2 must be > 0");
  if (!(p > 0)) throw std::domain_error("stretched_exp: p must be > 0");
  return (-(t_us / t2_us).pow(p)).exp();
}

DipModel::DipModel(double center, double rabi, double contrast)
    : center_mhz(center), rabi_mhz(rabi), contrast_scale(contrast) {
  if (!(center > 0)) throw std::invalid_argument("DipModel: center must be > 0 MHz");
  if (!(rabi > 0)) throw std::invalid_argument("DipModel: rabi must be > 0 MHz");
}

ArrayXd deer_dip(const ArrayXd& freqs_mhz, const DipModel& model, double baseline_chi) {
  const double omega = 2.0 * std::numbers::pi * model.rabi_mhz;  // rad/us
  const double t_pi = 1.0 / (2.0 * model.rabi_mhz);              // us
  ArrayXd out(freqs_mhz.size());
  for (Eigen::Index i = 0; i < freqs_mhz.size(); ++i) {
    const double delta = 2.0 * std::numbers::pi * (freqs_mhz[i] - model.center_mhz);
    const double w2 = omega * omega + delta * delta;
    const double s = std::sin(0.5 * std::sqrt(w2) * t_pi);
    const double p_flip = omega * omega / w2 * s * s;
    out[i] = std::exp(-p_flip * baseline_chi * model.contrast_scale);
  }
  return out;
}

}  // namespace spinbath
