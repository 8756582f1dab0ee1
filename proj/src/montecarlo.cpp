#include "spinbath/montecarlo.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <thread>

namespace spinbath {

namespace {

inline std::uint64_t sm_mix(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

constexpr std::uint64_t kBathTag = 0x626174685f746167ull;
constexpr std::uint64_t kTrialTag = 0x747269616c5f7467ull;
constexpr int kBlock = 256;  // trials per reduction block

}  // namespace

std::uint64_t RandomStream::derive(std::uint64_t seed, std::uint64_t index) {
  return sm_mix(seed ^ sm_mix(index));
}

std::uint64_t RandomStream::derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return derive(derive(seed, a), b);
}

void SimConfig::validate() const {
  if (n_trials < 1) throw std::invalid_argument("SimConfig: n_trials must be >= 1");
  if (disk_radius_factor < 10) {
    throw std::invalid_argument("SimConfig: disk_radius_factor must be >= 10");
  }
  if (time_step_us < 0) throw std::invalid_argument("SimConfig: time_step must be >= 0");
}

int resolve_workers(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("SPINBATH_WORKERS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

BathRealization sample_bath(const SpinBathParams& bath, const NVSensor& sensor,
                            std::uint64_t seed, const SimConfig& cfg,
                            const PhysicalConstants& constants) {
  cfg.validate();
  const double depth = sensor.depth_nm;
  const double radius = cfg.disk_radius_factor * depth;
  const double pref = constants.dipolar_prefactor_rad_nm3_per_us();
  const double sin_a = std::sin(sensor.axis_polar_angle);
  const double cos_a = std::cos(sensor.axis_polar_angle);

  RandomStream rng(seed);
  std::vector<double> xs, ys, as, ss;

  auto push_spin = [&](double r_lat, double phi) {
    const double x = r_lat * std::cos(phi);
    const double y = r_lat * std::sin(phi);
    const double r = std::sqrt(x * x + y * y + depth * depth);
    const double cth = (x * sin_a + depth * cos_a) / r;
    xs.push_back(x);
    ys.push_back(y);
    as.push_back(pref * (1.0 - 3.0 * cth * cth) / (r * r * r));
    ss.push_back(rng.next_sign_half());
  };

  if (cfg.fixed_spin_count >= 0) {
    for (long i = 0; i < cfg.fixed_spin_count; ++i) {
      push_spin(radius * std::sqrt(rng.next_unit()), 2.0 * std::numbers::pi * rng.next_unit());
    }
  } else {
    // Radial arrival process: cumulative unit-rate exponentials over the
    // intensity measure Lambda(r) = sigma pi r^2 give Poisson spins ordered
    // by radius.
    const double lambda_total = bath.sigma_per_nm2 * std::numbers::pi * radius * radius;
    double s = rng.next_exponential(1.0);
    while (s <= lambda_total) {
      const double r_lat = std::sqrt(s / (bath.sigma_per_nm2 * std::numbers::pi));
      push_spin(r_lat, 2.0 * std::numbers::pi * rng.next_unit());
      s += rng.next_exponential(1.0);
    }
  }

  BathRealization out;
  const Eigen::Index n = static_cast<Eigen::Index>(as.size());
  out.positions_nm.resize(n, 3);
  out.couplings_rad_per_us.resize(n);
  out.states.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.positions_nm(i, 0) = xs[static_cast<std::size_t>(i)];
    out.positions_nm(i, 1) = ys[static_cast<std::size_t>(i)];
    out.positions_nm(i, 2) = depth;
    out.couplings_rad_per_us[i] = as[static_cast<std::size_t>(i)];
    out.states[i] = ss[static_cast<std::size_t>(i)];
  }
  return out;
}

double realization_gamma_b_sq(const BathRealization& realization) {
  return realization.couplings_rad_per_us.square().sum() / 4.0;
}

double max_abs_coupling(const BathRealization& realization) {
  return realization.size() == 0 ? 0.0 : realization.couplings_rad_per_us.abs().maxCoeff();
}

BathRealization fixed_realization(const SpinBathParams& bath, const NVSensor& sensor,
                                  const SimConfig& cfg, const PhysicalConstants& constants) {
  return sample_bath(bath, sensor, RandomStream::derive(cfg.rng_seed, kBathTag), cfg, constants);
}

TelegraphTrajectories telegraph_evolve(const BathRealization& realization, double tau_c_us,
                                       double duration_us, std::uint64_t seed,
                                       double time_step_us) {
  if (!(tau_c_us > 0)) throw std::invalid_argument("telegraph_evolve: tau_c must be > 0");
  if (!(duration_us >= 0)) throw std::invalid_argument("telegraph_evolve: duration must be >= 0");
  const double mean_gap = 2.0 * tau_c_us;
  TelegraphTrajectories out;
  const std::size_t n = static_cast<std::size_t>(realization.size());
  out.flip_times_us.resize(n);
  out.initial_states.resize(n);
  out.segments.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    RandomStream rng(RandomStream::derive(seed, i));
    double s = rng.next_sign_half();
    out.initial_states[i] = s;
    double t = rng.next_exponential(mean_gap);
    double prev = 0.0;
    while (t < duration_us) {
      out.flip_times_us[i].push_back(t);
      // emit capped segments up to the flip
      while (time_step_us > 0 && t - prev > time_step_us) {
        prev += time_step_us;
        out.segments[i].emplace_back(prev, s);
      }
      out.segments[i].emplace_back(t, s);
      prev = t;
      s = -s;
      t += rng.next_exponential(mean_gap);
    }
    while (time_step_us > 0 && duration_us - prev > time_step_us) {
      prev += time_step_us;
      out.segments[i].emplace_back(prev, s);
    }
    out.segments[i].emplace_back(duration_us, s);
  }
  return out;
}

namespace {

// One sequence prepared for phase integration: edges of the combined
// sensor*bath sign pattern and per-segment signs.
struct PointPattern {
  double total_time;
  std::vector<double> edges;   // 0 = e[0] < ... < e[m] = total_time
  std::vector<double> signs;   // per segment
  double static_integral;      // int h dt (phase of a spin that never flips)
};

PointPattern prepare_pattern(const PulseSequence& seq) {
  const ModulationFunction h = product_modulation(seq);
  PointPattern p;
  p.total_time = seq.total_time_us;
  p.edges.reserve(h.breakpoints_us.size() + 2);
  p.edges.push_back(0.0);
  for (double b : h.breakpoints_us) p.edges.push_back(b);
  p.edges.push_back(seq.total_time_us);
  double sign = 1.0;
  for (std::size_t j = 0; j + 1 < p.edges.size(); ++j) {
    p.signs.push_back(sign);
    sign = -sign;
  }
  p.static_integral = h.integral();
  return p;
}

// int_0^{t_p} h(t') s(t') dt' for a telegraph history starting at s0 with the
// given flip times.
double integrate_pattern(const PointPattern& p, double s0, const double* flips,
                         std::size_t n_flips) {
  double integral = 0.0;
  double s = s0;
  double prev = 0.0;
  std::size_t seg = 0, fi = 0;
  const double t_end = p.total_time;
  while (prev < t_end) {
    const double edge = p.edges[seg + 1];
    const double flip = (fi < n_flips && flips[fi] < t_end)
                            ? flips[fi]
                            : std::numeric_limits<double>::infinity();
    if (flip < edge) {
      integral += s * p.signs[seg] * (flip - prev);
      s = -s;
      ++fi;
      prev = flip;
    } else {
      integral += s * p.signs[seg] * (edge - prev);
      ++seg;
      prev = edge;
    }
  }
  return integral;
}

struct BlockPartial {
  std::vector<double> sum_cos, sum_cos2, sum_sin, sum_sin2;
};

}  // namespace

std::vector<McEstimate> simulate_sequences(const std::vector<PulseSequence>& seqs,
                                           const SpinBathParams& bath, const NVSensor& sensor,
                                           const SimConfig& cfg,
                                           const PhysicalConstants& constants) {
  cfg.validate();
  const std::size_t n_points = seqs.size();
  if (n_points == 0) return {};

  std::vector<PointPattern> patterns;
  patterns.reserve(n_points);
  double t_max = 0.0;
  for (const auto& s : seqs) {
    patterns.push_back(prepare_pattern(s));
    t_max = std::max(t_max, s.total_time_us);
  }

  // Fixed-bath mode reuses one configuration; initial states are still drawn
  // per trial from the telegraph streams.
  BathRealization shared;
  if (!cfg.resample_bath) {
    shared = sample_bath(bath, sensor, RandomStream::derive(cfg.rng_seed, kBathTag), cfg,
                         constants);
  }

  const long n_trials = cfg.n_trials;
  const long n_blocks = (n_trials + kBlock - 1) / kBlock;
  std::vector<BlockPartial> partials(static_cast<std::size_t>(n_blocks));

  const double mean_gap = 2.0 * bath.tau_c_us;
  const double depth = sensor.depth_nm;
  const double radius = cfg.disk_radius_factor * depth;
  const double pref = constants.dipolar_prefactor_rad_nm3_per_us();
  const double sin_a = std::sin(sensor.axis_polar_angle);
  const double cos_a = std::cos(sensor.axis_polar_angle);
  const double lambda_total = bath.sigma_per_nm2 * std::numbers::pi * radius * radius;

  std::atomic<long> next_block{0};

  auto run_blocks = [&]() {
    std::vector<double> phases(n_points);
    std::vector<double> couplings;
    std::vector<double> flips;
    if (!cfg.resample_bath) {
      couplings.assign(shared.couplings_rad_per_us.data(),
                       shared.couplings_rad_per_us.data() + shared.size());
    }

    for (;;) {
      const long block = next_block.fetch_add(1);
      if (block >= n_blocks) break;
      BlockPartial part;
      part.sum_cos.assign(n_points, 0.0);
      part.sum_cos2.assign(n_points, 0.0);
      part.sum_sin.assign(n_points, 0.0);
      part.sum_sin2.assign(n_points, 0.0);

      const long lo = block * kBlock;
      const long hi = std::min(n_trials, lo + kBlock);
      for (long trial = lo; trial < hi; ++trial) {
        if (cfg.resample_bath) {
          couplings.clear();
          RandomStream brng(
              RandomStream::derive(cfg.rng_seed, kBathTag, static_cast<std::uint64_t>(trial)));
          auto emit = [&](double r_lat, double phi) {
            const double x = r_lat * std::cos(phi);
            const double y = r_lat * std::sin(phi);
            const double r = std::sqrt(x * x + y * y + depth * depth);
            const double cth = (x * sin_a + depth * cos_a) / r;
            couplings.push_back(pref * (1.0 - 3.0 * cth * cth) / (r * r * r));
          };
          if (cfg.fixed_spin_count >= 0) {
            for (long i = 0; i < cfg.fixed_spin_count; ++i) {
              emit(radius * std::sqrt(brng.next_unit()),
                   2.0 * std::numbers::pi * brng.next_unit());
            }
          } else {
            double s = brng.next_exponential(1.0);
            while (s <= lambda_total) {
              emit(std::sqrt(s / (bath.sigma_per_nm2 * std::numbers::pi)),
                   2.0 * std::numbers::pi * brng.next_unit());
              s += brng.next_exponential(1.0);
            }
          }
        }

        std::fill(phases.begin(), phases.end(), 0.0);
        const std::uint64_t trial_seed =
            RandomStream::derive(cfg.rng_seed, kTrialTag, static_cast<std::uint64_t>(trial));
        for (std::size_t i = 0; i < couplings.size(); ++i) {
          RandomStream rng(RandomStream::derive(trial_seed, i));
          const double s0 = rng.next_sign_half();
          const double a = couplings[i];
          double t = rng.next_exponential(mean_gap);
          if (t >= t_max) {
            // quiet spin: contributes s0 * int h dt to every point
            for (std::size_t p = 0; p < n_points; ++p) {
              phases[p] += a * s0 * patterns[p].static_integral;
            }
            continue;
          }
          flips.clear();
          while (t < t_max) {
            flips.push_back(t);
            t += rng.next_exponential(mean_gap);
          }
          for (std::size_t p = 0; p < n_points; ++p) {
            phases[p] += a * integrate_pattern(patterns[p], s0, flips.data(), flips.size());
          }
        }

        for (std::size_t p = 0; p < n_points; ++p) {
          const double c = std::cos(phases[p]);
          const double si = std::sin(phases[p]);
          part.sum_cos[p] += c;
          part.sum_cos2[p] += c * c;
          part.sum_sin[p] += si;
          part.sum_sin2[p] += si * si;
        }
      }
      partials[static_cast<std::size_t>(block)] = std::move(part);
    }
  };

  const int workers =
      static_cast<int>(std::max<long>(1, std::min<long>(resolve_workers(cfg.workers), n_blocks)));
  if (workers == 1) {
    run_blocks();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) pool.emplace_back(run_blocks);
    for (auto& th : pool) th.join();
  }

  // Deterministic reduction in block order.
  std::vector<McEstimate> out(n_points);
  for (std::size_t p = 0; p < n_points; ++p) {
    double sc = 0, sc2 = 0, ss = 0, ss2 = 0;
    for (const auto& part : partials) {
      sc += part.sum_cos[p];
      sc2 += part.sum_cos2[p];
      ss += part.sum_sin[p];
      ss2 += part.sum_sin2[p];
    }
    const double n = static_cast<double>(n_trials);
    McEstimate e;
    e.time_us = seqs[p].total_time_us;
    e.n_trials = n_trials;
    e.coherence = sc / n;
    e.sin_mean = ss / n;
    if (n_trials > 1) {
      const double var_c = std::max(0.0, (sc2 - n * e.coherence * e.coherence) / (n - 1.0));
      const double var_s = std::max(0.0, (ss2 - n * e.sin_mean * e.sin_mean) / (n - 1.0));
      e.std_error = std::sqrt(var_c / n);
      e.sin_std_error = std::sqrt(var_s / n);
    }
    out[p] = e;
  }
  return out;
}

McEstimate simulate_coherence(const PulseSequence& seq, const SpinBathParams& bath,
                              const NVSensor& sensor, const SimConfig& cfg,
                              const PhysicalConstants& constants) {
  return simulate_sequences({seq}, bath, sensor, cfg, constants)[0];
}

CoherenceCurve simulate_curve(const SequenceSpec& spec, const ArrayXd& times_us,
                              const SpinBathParams& bath, const NVSensor& sensor,
                              const SimConfig& cfg, const PhysicalConstants& constants) {
  std::vector<PulseSequence> seqs;
  std::vector<Eigen::Index> slot;
  seqs.reserve(static_cast<std::size_t>(times_us.size()));
  for (Eigen::Index i = 0; i < times_us.size(); ++i) {
    if (times_us[i] == 0) continue;  // t = 0 has coherence 1 by definition
    seqs.push_back(build_sequence(spec, times_us[i]));
    slot.push_back(i);
  }
  const auto est = simulate_sequences(seqs, bath, sensor, cfg, constants);
  ArrayXd values = ArrayXd::Ones(times_us.size());
  ArrayXd se = ArrayXd::Zero(times_us.size());
  for (std::size_t k = 0; k < est.size(); ++k) {
    values[slot[k]] = est[k].coherence;
    se[slot[k]] = est[k].std_error;
  }
  return CoherenceCurve(times_us, std::move(values), spec, std::move(se));
}

TauSweep simulate_tau_sweep(double total_time_us, const ArrayXd& taus_us,
                            const SpinBathParams& bath, const NVSensor& sensor,
                            const SimConfig& cfg, const PhysicalConstants& constants) {
  std::vector<PulseSequence> seqs;
  seqs.reserve(static_cast<std::size_t>(taus_us.size()));
  for (Eigen::Index i = 0; i < taus_us.size(); ++i) {
    seqs.push_back(build_sequence(SequenceFamily::DeerEcho, total_time_us, 0, taus_us[i]));
  }
  const auto est = simulate_sequences(seqs, bath, sensor, cfg, constants);
  ArrayXd values(taus_us.size()), se(taus_us.size());
  for (Eigen::Index i = 0; i < taus_us.size(); ++i) {
    values[i] = est[static_cast<std::size_t>(i)].coherence;
    se[i] = est[static_cast<std::size_t>(i)].std_error;
  }
  return TauSweep(total_time_us, taus_us, std::move(values), std::move(se));
}

}  // namespace spinbath
