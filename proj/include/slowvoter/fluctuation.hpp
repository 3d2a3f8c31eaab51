#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "slowvoter/lattice.hpp"
#include "slowvoter/pde.hpp"
#include "slowvoter/profile.hpp"
#include "slowvoter/testfunc.hpp"
#include "slowvoter/walks.hpp"

namespace slowvoter {

// Membership checks for the slow-membrane test-function classes, by regime:
//   sub:      all derivatives up to order 2 k_max + 1 match across 0
//   critical: d^{2k+1}H(0+) = d^{2k+1}H(0-) = alpha (d^{2k}H(0+) - d^{2k}H(0-))
//   super:    odd one-sided derivatives vanish at 0
// Residuals are relative to 1 + the magnitudes entering each identity. On a
// full pass, H.verified_orders is raised to k_max.
struct SBetaReport {
  struct OrderCheck {
    int k = 0;
    double residual = 0.0;
    bool pass = false;
  };
  std::vector<OrderCheck> orders;
  bool pass = false;
  std::string to_json() const;
};
SBetaReport validate_sbeta(SBetaFunction& H, int k_max, double rel_tol = 1e-6);

// Fluctuation field N^{-(1+d/2)} sum_x (eta(x) - mean(x)) H(x/N).
// mean_field is indexed by site index; a non-finite mean at an occupied
// site is a domain error.
double field_eval(const LatticeConfig& config, const std::vector<double>& mean_field,
                  const SBetaFunction& H, int scale);

// Exact accelerated-generator pairing N^{2-d} sum_x eta(x) sum_{y~x}
// xi_{xy} (H(y/N) - H(x/N)), over the torus bonds of the configuration's
// box (wrap bonds included, so this matches the event engine exactly).
double generator_pi(const LatticeConfig& config, const SBetaFunction& H,
                    const MembraneRates& rates);

// The three-group expansion of generator_pi for large N:
//   laplacian       N^{-d} sum_x eta [sum_{i>=2} d2_i H + 1_{x1 not in {0,1}} d2_1 H]
//   boundary_plus   N^{1-d} sum_{x1=1} eta d+H
//   boundary_minus  -N^{1-d} sum_{x1=0} eta d-H
//   membrane        alpha N^{2-d-beta} one-site exchange differences of H
// total() differs from generator_pi by the Taylor remainder, O(1/N) per
// unit volume for H with three bounded derivatives (plus wrap-bond terms
// when H does not vanish at the box edge).
struct DynkinTerms {
  double laplacian = 0.0;
  double boundary_plus = 0.0;
  double boundary_minus = 0.0;
  double membrane = 0.0;
  double total() const { return laplacian + boundary_plus + boundary_minus + membrane; }
};
DynkinTerms dynkin_terms(const LatticeConfig& config, const SBetaFunction& H,
                         const MembraneRates& rates);

// Quadratic-variation integrand of the field martingale:
// N^{-d} sum over directed torus bonds of xi_{xy} (eta(x)-eta(y))^2 H^2(x/N).
double qv_integrand(const LatticeConfig& config, const SBetaFunction& H,
                    const MembraneRates& rates);

// Limit of the expected QV integrand: 4 d (1 - gamma_d) int rho(1-rho) H^2 du.
// The u_1 integral is the grid trapezoid (one-sided values at the doubled
// origin); perp factors contribute their exact squared-gaussian masses, an
// empty perp list contributes 1 (per-unit-perp-volume convention).
double qv_limit_reference(const Grid1D& rho, const SBetaFunction& H,
                          double gamma_d_value, int d);
// Time-integrated variant over a solution path, trapezoid in time up to t
// (t must be a frame time).
double qv_limit_integral(const SolutionPath& rho, double t, const SBetaFunction& H,
                         double gamma_d_value, int d);

// E[(eta_t(x) - eta_t(y))^2] summed over the 2d lattice neighbours y of x,
// assembled from dual one- and two-point functions. Pass a geometry to
// cross-check finite boxes; default is the infinite lattice.
Estimate pair_correlation_qv(const std::vector<std::int64_t>& x, double t,
                             const MembraneRates& rates, const InitialProfile& rho0,
                             std::int64_t replicas, std::uint64_t seed,
                             const BoxGeometry* torus = nullptr);

// Limit covariance 4 d (1-gamma_d) int_0^{t^s} int rho(1-rho) H G du dtau.
// t and s must be frame times of the density path.
double ou_covariance(const SBetaFunction& H, const SBetaFunction& G, double t, double s,
                     const SolutionPath& rho, double gamma_d_value, int d);

// Limit variance 4 d (1-gamma_d) int_0^t int rho(1-rho) (T_{t-tau} H)^2 du dtau
// for an H depending on u_1 only (empty perp list; per-unit-perp-volume).
// semigroup(tau, u1, side) must evaluate (T_tau H)(u1).
double limit_variance(const SBetaFunction& H, double t, const SolutionPath& rho,
                      const std::function<double(double, double, Side)>& semigroup,
                      double gamma_d_value, int d);

// Dynkin martingale M_t = Y_t - Y_0 - int_0^t N^2 L Y_s ds for the field,
// with the integral accumulated exactly between flip events (the integrand
// is constant there) and the exact torus generator (no Taylor remainder, so
// the identities below hold at every N). Per observation time:
//   mean_M   estimate of E[M_t]            (zero for the true chain)
//   qv_gap   estimate of E[M_t^2 - int_0^t QV ds]  (zero for the true chain)
//   mean_qv  estimate of E[int_0^t QV ds]  (for cross-checks)
struct MartingaleReport {
  std::vector<double> times;
  std::vector<Estimate> mean_M;
  std::vector<Estimate> qv_gap;
  std::vector<Estimate> mean_qv;
  std::string to_json() const;
};
MartingaleReport martingale_check(const LatticeConfig& initial, const SBetaFunction& H,
                                  const MembraneRates& rates,
                                  const std::vector<double>& times, std::int64_t replicas,
                                  std::uint64_t seed);
// Same ledger computed from recorded trajectories (events required). All
// trajectories must share the initial configuration's box and carry the
// requested times within their horizon; mismatched grids are domain errors.
MartingaleReport martingale_check(const std::vector<Trajectory>& trajectories,
                                  const SBetaFunction& H, const MembraneRates& rates,
                                  const std::vector<double>& times);

// Upper bound on Var(int_0^t sum_{x1=0} centered-occupation H ds) through
// the pairwise covariance bound Cov <= Gamma((x-y)_perp): for each box size
// N the bound is
//   t^2 * 4 sup_plane rho0(1-rho0) * sum_{x,y in plane} Gamma_hat |H H|
// with Gamma_hat a Monte Carlo radial table of the (d-1)-dimensional hitting
// probability, and the pair sum collapsed per torus displacement through the
// separable structure of H. fitted_exponent is the log-log slope across
// scales.
struct VarianceScalingReport {
  std::vector<int> scales;
  std::vector<double> bounds;
  double fitted_exponent = 0.0;
  std::string to_json() const;
};
VarianceScalingReport boundary_variance_scaling(const MembraneRates& rates,
                                                const InitialProfile& rho0,
                                                const SBetaFunction& H, int d,
                                                const std::vector<int>& scales, double t,
                                                std::int64_t replicas,
                                                std::uint64_t seed);

}  // namespace slowvoter
