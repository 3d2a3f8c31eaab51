#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "slowvoter/lattice.hpp"
#include "slowvoter/profile.hpp"
#include "slowvoter/rng.hpp"

namespace slowvoter {

// Random walk on Z^d whose coordinate 0 sees the slow bond between sites 0
// and 1. Jump rates in microscopic units: 1 per directed bond, except
// 0 -> 1 and 1 -> 0 along coordinate 0, which carry membrane_rate().
//
// Every public time parameter below is macroscopic. The walk runs at the
// accelerated rate (scale^2 times the bond rates), so a call with time t
// advances the microscopic chain by t * scale^2.
struct WalkD {
  std::vector<std::int64_t> coords;
};

// One transition of the embedded jump chain. dt is the macroscopic waiting
// time drawn for the exponential race at the current position.
struct Jump {
  WalkD state;
  double dt = 0.0;
};
Jump next_jump(const WalkD& w, const MembraneRates& rates, Philox& rng);

// Exact endpoint after macroscopic time t.
WalkD step_walk(WalkD w, double t, const MembraneRates& rates, Philox& rng);

// Coordinate-0 marginal on Z. Uniformized stepping with binomial batching
// away from the sites {0,1}; exact in distribution.
std::int64_t sample_walk_1d(std::int64_t start, double t, const MembraneRates& rates,
                            Philox& rng);

// Endpoint of the walk confined to a torus, where bonds follow bond_rate
// semantics (single membrane between coordinate-0 sites 0 and 1, wrap bond
// ordinary). Used to cross-check duality against the finite-lattice chain.
std::int64_t step_walk_torus(std::int64_t site, double t, const BoxGeometry& geom,
                             const MembraneRates& rates, Philox& rng);

struct Estimate {
  double value = 0.0;
  double std_error = 0.0;
  std::int64_t replicas = 0;
};

// Monte Carlo value of E[rho0(X_t / N)] for the walk started at x.
// With a torus geometry the walk wraps; this matches the occupation
// probability P(eta_t(x) = 1) of the finite-lattice chain exactly.
Estimate one_point_function(const std::vector<std::int64_t>& x, double t,
                            const MembraneRates& rates, const InitialProfile& rho0,
                            std::int64_t replicas, std::uint64_t seed,
                            const BoxGeometry* torus = nullptr);

// Monte Carlo value of P(eta_t(x) = 1, eta_s(y) = 1) for s <= t, via the
// walker-plus-frozen-walk pair: the walk from x runs for the whole window,
// the walk at y stays frozen for the first t - s and then joins; once the
// two meet they move together and the sample collapses to a single factor.
Estimate two_point_function(const std::vector<std::int64_t>& x,
                            const std::vector<std::int64_t>& y, double t, double s,
                            const MembraneRates& rates, const InitialProfile& rho0,
                            std::int64_t replicas, std::uint64_t seed,
                            const BoxGeometry* torus = nullptr);

// A moving walk plus a walk frozen at its origin until freeze_until; once
// they meet they move together, so met implies identical positions from
// meet_time on. Times are macroscopic epochs on the shared pair clock.
struct CoalescingPair {
  WalkD walker;
  WalkD frozen_walk;
  double freeze_until = 0.0;
  bool met = false;
  double meet_time = 0.0;
};

CoalescingPair run_coalescing_pair(const std::vector<std::int64_t>& x,
                                   const std::vector<std::int64_t>& y, double t_total,
                                   double freeze, const MembraneRates& rates,
                                   Philox& rng);

// First epoch (macroscopic, counted from the pair clock origin) at which the
// walker from x occupies the same site as the walk frozen at y until time s.
// Returns +infinity when no meeting happens before the horizon.
double meeting_time_sample(const std::vector<std::int64_t>& x,
                           const std::vector<std::int64_t>& y,
                           const MembraneRates& rates, double s, double horizon,
                           Philox& rng);

// Hitting estimates for the simple random walk, censored at a step horizon.
// value is the within-horizon frequency (a lower bound for the uncensored
// probability); residual_bound bounds the mass the censoring can hide.
struct CensoredEstimate {
  double value = 0.0;
  double std_error = 0.0;
  double residual_bound = 0.0;
  double censored_fraction = 0.0;
  std::int64_t replicas = 0;
  std::uint64_t horizon_steps = 0;
};

// Return probability of the simple random walk on Z^dim.
CensoredEstimate gamma_d(int dim, std::uint64_t horizon_steps, std::int64_t replicas,
                         std::uint64_t seed);

// Return-frequency curve over nested horizons, one shared path set per
// replica, so the curve is nondecreasing by construction.
std::vector<double> gamma_curve(int dim, const std::vector<std::uint64_t>& horizons,
                                std::int64_t replicas, std::uint64_t seed);

// Probability that the simple random walk on Z^(dim of z) started at z hits
// the origin within the horizon.
CensoredEstimate hitting_prob_Gamma(const std::vector<std::int64_t>& z,
                                    std::uint64_t horizon_steps, std::int64_t replicas,
                                    std::uint64_t seed);

// One CSV row per estimator invocation.
std::string estimator_csv_header();
std::string estimator_csv_row(const std::string& op, std::uint64_t params_hash,
                              double estimate, double std_error, std::int64_t replicas,
                              double horizon, double censored_fraction);

}  // namespace slowvoter
