#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <numbers>

#include "oracles.hpp"
#include "spinbath/decoherence.hpp"

using namespace spinbath;

namespace {
double gamma_e() { return standard_constants().gamma_e_rad_per_us_tesla(); }
}  // namespace

TEST_CASE("ou noise invariants") {
  CHECK_THROWS_AS(OUNoise(0.0, 21.0), std::invalid_argument);
  CHECK_THROWS_AS(OUNoise(1e-6, 0.0), std::invalid_argument);
  const OUNoise n(1e-6, 21.0);
  CHECK(n.gamma_b() == doctest::Approx(1e-6 * gamma_e()));
}

TEST_CASE("deer closed form on a log grid") {
  // chi(DEER) must reproduce gamma^2 B^2 tau_c^2 (e^{-t/tc} + t/tc - 1)
  double worst = 0.0;
  for (int ib = 0; ib < 5; ++ib) {
    const double b = 1e-8 * std::pow(10.0, ib);  // 1e-8 .. 1e-4 T
    for (int ic = 0; ic < 5; ++ic) {
      const double tc = 0.1 * std::pow(10.0, ic);  // 0.1 .. 1e3 us
      for (int it = 0; it < 5; ++it) {
        const double t = tc * 0.01 * std::pow(10.0, it);  // 0.01 .. 100 tc
        const OUNoise noise(b, tc);
        const PulseSequence seq = build_sequence(SequenceFamily::Deer, t);
        const double chi = chi_correlation(seq, noise, t);
        const double gb = noise.gamma_b();
        const double ref = gb * gb * tc * tc * (std::expm1(-t / tc) + t / tc);
        if (ref > 0) worst = std::max(worst, std::abs(chi - ref) / ref);
      }
    }
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("ramsey short-time static limit") {
  const OUNoise noise(5e-7, 100.0);
  const double gb = noise.gamma_b();
  for (double t : {0.01, 0.3, 1.0}) {  // t <= 0.01 tau_c
    const PulseSequence seq = build_sequence(SequenceFamily::Ramsey, t);
    const double chi = chi_correlation(seq, noise, t);
    const double taylor = 0.5 * gb * gb * t * t;
    CHECK(chi == doctest::Approx(taylor).epsilon(0.01));
  }
}

TEST_CASE("hahn closed form vs independent double quadrature") {
  const OUNoise noise(5e-7, 7.0);
  const double gb = noise.gamma_b();
  for (double frac : {0.1, 1.0, 10.0}) {
    const double t = frac * noise.tau_c_us;
    const PulseSequence seq = build_sequence(SequenceFamily::Hahn, t);
    const double chi = chi_correlation(seq, noise, t);
    CHECK(chi == doctest::Approx(chi_hahn(gb, noise.tau_c_us, t)).epsilon(1e-12));
    const double quad = oracles::chi_by_double_quadrature(seq, gb, noise.tau_c_us);
    CHECK(chi == doctest::Approx(quad).epsilon(1e-6));
  }
  CHECK_THROWS_AS(
      chi_correlation(build_sequence(SequenceFamily::Hahn, 5.0), noise, 6.0),
      std::domain_error);
}

TEST_CASE("spectral route agrees with the time-domain engine") {
  // chi = (1/pi) int S(w) F(wt)/w^2 dw with S the OU Lorentzian must match
  // the piecewise evaluation; this pins the filter normalisation.
  const OUNoise noise(4e-7, 6.0);
  const double gb = noise.gamma_b();
  const double tc = noise.tau_c_us;
  const double t = 9.0;
  for (auto family : {SequenceFamily::Hahn, SequenceFamily::Cpmg}) {
    const PulseSequence seq = build_sequence(family, t, 4);
    const double chi_time = chi_correlation(seq, noise, t);
    auto integrand = [&](double w) {
      const double s = 2.0 * gb * gb * tc / (1.0 + w * w * tc * tc);
      return s * filter_function(seq, w) / (w * w) / std::numbers::pi;
    };
    double chi_freq = 0.0;
    double lo = 1e-7;
    const double omega_max = 3000.0 / t;  // tail below 1e-5 relative
    double step = 0.2 * std::numbers::pi / t;
    for (double a = lo; a < omega_max; a += step) {
      chi_freq += oracles::adaptive_simpson(integrand, a, std::min(a + step, omega_max), 1e-13);
    }
    CHECK(chi_freq == doctest::Approx(chi_time).epsilon(1e-4));
  }
}

TEST_CASE("piecewise engine vs quadrature on random patterns") {
  RandomStream rng(0xC0FFEEull);
  int checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const double total = 0.5 + 20.0 * rng.next_unit();
    const int n_flips = static_cast<int>(rng.next_u64() % 7);
    std::vector<double> breaks;
    for (int i = 0; i < n_flips; ++i) breaks.push_back(total * rng.next_unit());
    std::sort(breaks.begin(), breaks.end());
    breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());
    const ModulationFunction pattern{breaks, total};
    const double tc = 0.5 + 30.0 * rng.next_unit();
    const double gb = 0.01 + rng.next_unit();
    const double chi = ou_chi(pattern, gb, tc);

    std::vector<double> edges{0.0};
    for (double b : breaks) edges.push_back(b);
    edges.push_back(total);
    std::vector<double> signs;
    double s = 1.0;
    for (std::size_t j = 0; j + 1 < edges.size(); ++j) {
      signs.push_back(s);
      s = -s;
    }
    const double quad = oracles::chi_by_double_quadrature(edges, signs, gb, tc);
    const double scale = gb * gb * total * total;  // natural chi scale
    CHECK(std::abs(chi - quad) <= 1e-6 * std::max(std::abs(quad), 1e-6 * scale));
    ++checked;
  }
  CHECK(checked == 100);
}

TEST_CASE("bath sign convention is unobservable") {
  // negating the bath pattern g flips every product sign; chi only sees
  // pairwise products, so the quadrature gives the identical value
  std::vector<double> edges{0.0, 2.0, 4.5, 7.0};
  std::vector<double> signs{1.0, -1.0, 1.0};
  std::vector<double> negated{-1.0, 1.0, -1.0};
  const double a = oracles::chi_by_double_quadrature(edges, signs, 0.3, 5.0, 1e-10);
  const double b = oracles::chi_by_double_quadrature(edges, negated, 0.3, 5.0, 1e-10);
  CHECK(a == doctest::Approx(b).epsilon(1e-12));
  const ModulationFunction pattern{{2.0, 4.5}, 7.0};
  CHECK(ou_chi(pattern, 0.3, 5.0) == doctest::Approx(a).epsilon(1e-8));
}

TEST_CASE("chi grows with time, falls with pulse number") {
  const OUNoise noise(5e-7, 21.0);
  for (auto family : {SequenceFamily::Ramsey, SequenceFamily::Hahn, SequenceFamily::Deer}) {
    double prev = -1.0;
    for (double t = 1.0; t < 200.0; t *= 1.7) {
      const PulseSequence seq = build_sequence(family, t);
      const double chi = chi_correlation(seq, noise, t);
      CHECK(chi >= 0.0);
      CHECK(chi >= prev);
      prev = chi;
    }
  }
  const double t = 40.0;
  double prev = std::numeric_limits<double>::infinity();
  for (int n : {1, 2, 4, 8, 16, 32}) {
    const PulseSequence seq = build_sequence(SequenceFamily::Cpmg, t, n);
    const double chi = chi_correlation(seq, noise, t);
    CHECK(chi <= prev * (1 + 1e-12));
    prev = chi;
  }
}

TEST_CASE("curves and tau sweeps") {
  const OUNoise noise(5e-7, 21.0);
  ArrayXd times(4);
  times << 0.0, 5.0, 10.0, 20.0;
  const CoherenceCurve curve =
      coherence_curve({SequenceFamily::Deer, 0, 0.0}, noise, times);
  CHECK(curve.values[0] == 1.0);
  CHECK(curve.values[3] < curve.values[1]);

  // tau = t/2 leaves an inert end flip: identical to Hahn at every t
  ArrayXd ts(5);
  ts << 2.0, 6.0, 11.0, 17.0, 25.0;
  const CoherenceCurve hahn = coherence_curve({SequenceFamily::Hahn, 0, 0.0}, noise, ts);
  for (Eigen::Index i = 0; i < ts.size(); ++i) {
    const PulseSequence echo =
        build_sequence(SequenceFamily::DeerEcho, ts[i], 0, ts[i] / 2);
    const double c = std::exp(-chi_correlation(echo, noise, ts[i]));
    CHECK(c == doctest::Approx(hahn.values[i]).epsilon(1e-14));
  }

  // sweep endpoints hit the DEER and Hahn values
  const double t = 20.0;
  ArrayXd taus(5);
  taus << 0.0, 2.5, 5.0, 7.5, 10.0;
  const TauSweep sweep = deer_echo_tau_sweep(t, taus, noise);
  const double deer_c =
      std::exp(-chi_correlation(build_sequence(SequenceFamily::Deer, t), noise, t));
  const double hahn_c =
      std::exp(-chi_correlation(build_sequence(SequenceFamily::Hahn, t), noise, t));
  CHECK(sweep.values[0] == doctest::Approx(deer_c).epsilon(1e-12));
  CHECK(sweep.values[4] == doctest::Approx(hahn_c).epsilon(1e-12));
}

TEST_CASE("slow-bath limit avoids cancellation") {
  CHECK(ou_phi(1e-8) == doctest::Approx(0.5e-16).epsilon(1e-6));
  CHECK(hahn_phi(1e-4) == doctest::Approx(1e-12 / 12.0).epsilon(1e-4));
  // t/tau_c = 1e-6: free-evolution chi reduces to the static 0.5 (gb t)^2
  const OUNoise noise(1e-6, 1e7);
  const double t = 10.0;
  const double chi = chi_correlation(build_sequence(SequenceFamily::Ramsey, t), noise, t);
  const double gb = noise.gamma_b();
  CHECK(chi == doctest::Approx(0.5 * gb * gb * t * t).epsilon(1e-5));
}

TEST_CASE("stretched exponential") {
  CHECK(stretched_exp(10.0, 10.0, 0.7) == doctest::Approx(std::exp(-1.0)));
  CHECK(stretched_exp(10.0, 10.0, 3.0) == doctest::Approx(std::exp(-1.0)));
  CHECK_THROWS_AS(stretched_exp(1.0, 0.0, 1.0), std::domain_error);
  CHECK_THROWS_AS(stretched_exp(1.0, 10.0, 0.0), std::domain_error);
  ArrayXd t(2);
  t << 21.7, 36.8;
  const ArrayXd v = stretched_exp(t, 21.7, 1.3);
  CHECK(v[0] == doctest::Approx(std::exp(-1.0)));
}

TEST_CASE("deer dip shape and g=2 placement") {
  // g = 2 electrons at 382 G sit at 2.8025 MHz/G * 382 G inside the sweep
  const double center = standard_constants().gamma_e_hz_per_tesla * 1e-6 * 1e-4 * 382.0;
  CHECK(center == doctest::Approx(1070.553).epsilon(1e-5));
  CHECK(center > 910.0);
  CHECK(center < 1230.0);

  const DipModel model(center, 5.0, 1.0);
  const double baseline_chi = 0.4;
  ArrayXd freqs = ArrayXd::LinSpaced(801, 910.0, 1230.0);
  const ArrayXd dip = deer_dip(freqs, model, baseline_chi);

  Eigen::Index imin = 0;
  dip.minCoeff(&imin);
  CHECK(std::abs(freqs[imin] - center) <= (freqs[1] - freqs[0]));

  // on resonance the flip probability is exactly 1
  ArrayXd fc(1);
  fc << center;
  CHECK(deer_dip(fc, model, baseline_chi)[0] == doctest::Approx(std::exp(-baseline_chi)));
  // far detuned the bath is untouched
  ArrayXd ff(1);
  ff << center + 4000.0;
  CHECK(deer_dip(ff, model, baseline_chi)[0] == doctest::Approx(1.0).epsilon(1e-3));
  CHECK_THROWS_AS(DipModel(0.0, 5.0), std::invalid_argument);
  CHECK_THROWS_AS(DipModel(1000.0, 0.0), std::invalid_argument);
}
