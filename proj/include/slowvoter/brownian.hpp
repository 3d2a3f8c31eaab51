#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "slowvoter/lattice.hpp"
#include "slowvoter/rng.hpp"
#include "slowvoter/walks.hpp"

namespace slowvoter {

// State space of the membrane processes: two half-lines glued at the origin,
// with the origin itself doubled into 0+ and 0-. The side label is redundant
// away from 0 and mandatory at 0.
enum class Side { kMinus, kPlus };

inline Side opposite(Side s) { return s == Side::kPlus ? Side::kMinus : Side::kPlus; }

struct SignedHalfLinePoint {
  double value = 0.0;
  Side side = Side::kPlus;

  double signum() const { return side == Side::kPlus ? 1.0 : -1.0; }
  void validate() const;
};

// Derives the side from the sign; value 0 is rejected because it needs an
// explicit label.
SignedHalfLinePoint half_line_point(double value);
inline SignedHalfLinePoint plus_origin() { return {0.0, Side::kPlus}; }
inline SignedHalfLinePoint minus_origin() { return {0.0, Side::kMinus}; }

enum class BetaRegime { kSub, kCritical, kSuper };

BetaRegime regime_for_beta(double beta);
const char* regime_name(BetaRegime regime);

// Continuum counterpart of MembraneRates: which process family the membrane
// turns into, and with what crossing parameter. alpha is consulted only in
// the critical regime.
struct SnappingParams {
  double alpha = 1.0;
  BetaRegime regime = BetaRegime::kCritical;

  void validate() const;
};

// Joint draw of (|B_t|, L_t) for Brownian motion started at distance |u|
// from the origin; L_t is the local time at 0. terminal is the reflected
// magnitude, never signed: callers reattach sides.
struct BMPathSample {
  double terminal = 0.0;
  double local_time_at_0 = 0.0;
};

// Exact three-stage sampler: a hitting time from the stable-1/2 density
// |u| / sqrt(2 pi theta^3) * exp(-u^2 / (2 theta)), then either the
// absorbed-kernel terminal (no hit before t, local time 0) or the reflection
// identity (|B|, L) = (M - B, M) on the remaining horizon. Plain Brownian
// time: variance t, P(hit by t) = 2 Phi(-|u| / sqrt(t)). No discretization.
BMPathSample sample_bm_with_local_time(double u, double t, Philox& rng);

// P(cross | L) = (1 - exp(-2 alpha L)) / 2, the snapping weight.
double snapping_crossing_weight(double alpha, double local_time);

// One draw of the snapping-out process with parameter 2 alpha, exposing the
// local time and whether the endpoint landed on the far side of the start.
struct SnappingSample {
  SignedHalfLinePoint point;
  double local_time = 0.0;
  bool crossed = false;
};
SnappingSample sample_snapping_out(SignedHalfLinePoint u, double t, double alpha,
                                   Philox& rng);

// E_u[f(B_t under snapping)] = E[(1+e^{-2 alpha L})/2 f(sgn(u)|B_t|)
//                              + (1-e^{-2 alpha L})/2 f(-sgn(u)|B_t|)].
// Computed as f(same) + w_cross (f(far) - f(same)), so a constant f and an
// even f are reproduced exactly, not just in expectation.
Estimate snapping_out_expectation(const std::function<double(SignedHalfLinePoint)>& f,
                                  SignedHalfLinePoint u, double t, double alpha,
                                  std::int64_t replicas, std::uint64_t seed);

// Marginal at plain Brownian time t of the regime process: standard BM
// (sub), snapping-out BM (critical, parameter from params.alpha), reflected
// BM with the start side carried (super). t = 0 returns u.
SignedHalfLinePoint sample_B_beta(SignedHalfLinePoint u, double t,
                                  const SnappingParams& params, Philox& rng);

// Product process at macroscopic time t: coordinate 0 is the regime process
// at time 2t, the remaining coordinates are independent N(u_j, 2t). The
// doubling is internal; E[rho0(W_t)] solves d rho/dt = Laplacian rho.
// membrane_side is consulted only when u[0] == 0.
std::vector<double> sample_W(const std::vector<double>& u, Side membrane_side,
                             double t, const SnappingParams& params, Philox& rng);
// Convenience overload; u[0] == 0 is rejected for lacking a side.
std::vector<double> sample_W(const std::vector<double>& u, double t,
                             const SnappingParams& params, Philox& rng);

// Two-sample KS distance between the rescaled lattice walk endpoint
// X_{t N^2} / N (slow-bond walk, N = rates.scale) and the continuum marginal
// B^u_{2t} of the regime process. Start site: floor(u N) clamped away from
// {0}; the origin maps to site +1 or -1 by its side. params.regime must
// match rates.beta.
double invariance_distance(SignedHalfLinePoint u, double t, const MembraneRates& rates,
                           const SnappingParams& params, std::int64_t replicas,
                           std::uint64_t seed);

// CSV dump format for sample-level output: op,u,t,regime,value,local_time.
std::string sample_csv_header();
std::string sample_csv_row(const std::string& op, double u, double t,
                           BetaRegime regime, double value, double local_time);

}  // namespace slowvoter
