#pragma once

#include <cstdint>
#include <vector>

#include "spinbath/decoherence.hpp"

namespace spinbath {

// Deterministic counter-style RNG (splitmix64). Child streams derived from
// (seed, index) pairs make results independent of evaluation order and
// worker count.
struct RandomStream {
  std::uint64_t state;

  explicit RandomStream(std::uint64_t seed) : state(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }
  double next_unit() {  // [0, 1)
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }
  double next_exponential(double mean) { return -mean * std::log1p(-next_unit()); }
  double next_sign_half() { return (next_u64() & 1) ? 0.5 : -0.5; }

  static std::uint64_t derive(std::uint64_t seed, std::uint64_t index);
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b);
};

struct SimConfig {
  long n_trials = 10000;            // >= 1
  double disk_radius_factor = 100;  // bath disk radius in units of depth, >= 10
  std::uint64_t rng_seed = 0;
  double time_step_us = 0;          // cap on emitted telegraph segment length (0 = none)
  bool resample_bath = true;        // fresh spin positions every trial
  long fixed_spin_count = -1;       // >= 0: fixed count instead of Poisson
  int workers = 0;                  // 0 = SPINBATH_WORKERS env var, else hardware

  void validate() const;
};

// One drawn configuration of discrete bath spins on the plane z = depth.
struct BathRealization {
  Eigen::Matrix<double, Eigen::Dynamic, 3> positions_nm;
  ArrayXd couplings_rad_per_us;  // secular coupling a_i, sign kept
  ArrayXd states;                // initial s_i = +-1/2

  Eigen::Index size() const { return couplings_rad_per_us.size(); }
};

// Poisson-distributed spins (mean sigma * pi * R^2) uniform on a disk of
// radius R = disk_radius_factor * depth above the sensor, with
//   a_i = (mu0/4pi) gamma^2 hbar (1 - 3 cos^2 theta_i) / r_i^3,
// theta_i measured from the sensor axis. Spins are emitted in order of
// increasing radius from a single stream, so enlarging the disk with the
// same seed keeps the inner spins identical.
BathRealization sample_bath(const SpinBathParams& bath, const NVSensor& sensor,
                            std::uint64_t seed, const SimConfig& cfg = {},
                            const PhysicalConstants& constants = standard_constants());

// sum a_i^2 / 4 over the realization = (gamma b_rms)^2 of this configuration.
double realization_gamma_b_sq(const BathRealization& realization);
double max_abs_coupling(const BathRealization& realization);

// The configuration the simulators reuse across trials when
// cfg.resample_bath is false.
BathRealization fixed_realization(const SpinBathParams& bath, const NVSensor& sensor,
                                  const SimConfig& cfg,
                                  const PhysicalConstants& constants = standard_constants());

// Random-telegraph trajectories: each spin flips as a Poisson process with
// rate 1/(2 tau_c), so <s(0)s(t)> = (1/4) e^{-t/tau_c}.
struct TelegraphTrajectories {
  std::vector<std::vector<double>> flip_times_us;  // ascending, within [0, duration)
  std::vector<double> initial_states;              // +-1/2
  // piecewise segments (end time, sign); segment lengths capped at
  // time_step_us when it is positive
  std::vector<std::vector<std::pair<double, double>>> segments;
};

TelegraphTrajectories telegraph_evolve(const BathRealization& realization, double tau_c_us,
                                       double duration_us, std::uint64_t seed,
                                       double time_step_us = 0);

struct McEstimate {
  double time_us = 0;
  double coherence = 0;   // <cos phi>
  double std_error = 0;
  double sin_mean = 0;    // <sin phi>, should be 0 within error
  double sin_std_error = 0;
  long n_trials = 0;
};

// Coherence of each sequence, one trial drawing a shared bath configuration
// and telegraph history for all of them. Estimates are unbiased per sequence;
// output is bit-reproducible for a fixed seed, independent of worker count.
std::vector<McEstimate> simulate_sequences(const std::vector<PulseSequence>& seqs,
                                           const SpinBathParams& bath, const NVSensor& sensor,
                                           const SimConfig& cfg,
                                           const PhysicalConstants& constants = standard_constants());

// Single-point estimate for one sequence.
McEstimate simulate_coherence(const PulseSequence& seq, const SpinBathParams& bath,
                              const NVSensor& sensor, const SimConfig& cfg,
                              const PhysicalConstants& constants = standard_constants());

// Family curve over a time grid (realizations shared across grid points).
CoherenceCurve simulate_curve(const SequenceSpec& spec, const ArrayXd& times_us,
                              const SpinBathParams& bath, const NVSensor& sensor,
                              const SimConfig& cfg,
                              const PhysicalConstants& constants = standard_constants());

// DEER-echo tau sweep at fixed total time.
TauSweep simulate_tau_sweep(double total_time_us, const ArrayXd& taus_us,
                            const SpinBathParams& bath, const NVSensor& sensor,
                            const SimConfig& cfg,
                            const PhysicalConstants& constants = standard_constants());

// Worker count resolution: explicit > SPINBATH_WORKERS env > hardware.
int resolve_workers(int requested);

}  // namespace spinbath
