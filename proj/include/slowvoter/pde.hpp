#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "slowvoter/brownian.hpp"
#include "slowvoter/profile.hpp"
#include "slowvoter/walks.hpp"

namespace slowvoter {

enum class InterfaceKind { kNone, kRobin, kNeumann };

struct InterfaceCondition {
  InterfaceKind kind = InterfaceKind::kNone;
  double alpha = 0.0;  // robin only

  static InterfaceCondition none() { return {InterfaceKind::kNone, 0.0}; }
  static InterfaceCondition robin(double alpha) { return {InterfaceKind::kRobin, alpha}; }
  static InterfaceCondition neumann() { return {InterfaceKind::kNeumann, 0.0}; }
  void validate() const;
};

// Symmetric 1D grid on [-window, window] with the origin doubled into a
// minus-side node and a plus-side node at the same position. positions[i]
// is exact; values hold the density. clip_excursion records how far the
// raw scheme output left [0,1] before being clamped at emission (0 for
// schemes that stayed inside).
struct Grid1D {
  double dx = 0.0;
  double window = 0.0;
  std::vector<double> positions;
  std::vector<double> values;
  int zero_minus = 0;
  int zero_plus = 0;
  double clip_excursion = 0.0;

  double value_minus() const { return values[static_cast<std::size_t>(zero_minus)]; }
  double value_plus() const { return values[static_cast<std::size_t>(zero_plus)]; }
  // Piecewise-linear interpolation; side resolves u == 0. |u| > window throws.
  double at(double u, Side side) const;
};

// Node layout without values; window/dx must be integral.
Grid1D make_grid(double dx, double window);

enum class TimeStepper { kCrankNicolson, kExplicitEuler };

// Finite-difference solution of d rho/dt = d^2 rho/du^2 on the doubled-node
// grid, outer ends reflecting. The interface rows eliminate a ghost node
// through the centered flux relation, so the membrane conditions
//   robin:   flux+ = flux- = alpha (rho(0+) - rho(0-))
//   neumann: flux+ = flux- = 0
// are built into the operator; kind none solves the ordinary heat stencil
// through 0 (both origin nodes stay equal). The discrete half-trapezoid
// mass (weight dx/2 at -window, 0-, 0+, window) is conserved exactly.
//
// dt = 0 picks 0.4 dx^2. The explicit stepper requires the monotone bound
// dt <= dx^2 / (2 (1 + alpha dx)); violations throw.
Grid1D solve_1d(const InitialProfile& rho0, double t, const InterfaceCondition& cond,
                double dx, double dt = 0.0, double window = 4.0,
                TimeStepper stepper = TimeStepper::kCrankNicolson);

struct SolutionPath {
  std::vector<double> times;
  std::vector<Grid1D> frames;
};

// Same solve, emitting `frames`+1 equally spaced snapshots (times[0] = 0).
SolutionPath solve_1d_path(const InitialProfile& rho0, double t, int frames,
                           const InterfaceCondition& cond, double dx, double dt = 0.0,
                           double window = 4.0,
                           TimeStepper stepper = TimeStepper::kCrankNicolson);

// Worst-case interface identities over all time steps of a solve, measured
// with first-order one-sided differences:
//   flux_mismatch  = max_t |flux+ - flux-|
//   robin_residual = max_t |flux+ - alpha (rho(0+) - rho(0-))|
// (for neumann, robin_residual uses alpha = 0, i.e. max |flux+|).
struct FluxReport {
  double flux_mismatch = 0.0;
  double robin_residual = 0.0;
};
FluxReport interface_flux_report(const InitialProfile& rho0, double t,
                                 const InterfaceCondition& cond, double dx,
                                 double dt = 0.0, double window = 4.0,
                                 TimeStepper stepper = TimeStepper::kCrankNicolson);

// Half-trapezoid quadrature of the grid values; the invariant functional of
// solve_1d.
double grid_mass(const Grid1D& g);

// Monte Carlo mean of rho0 at the product process W^u_t: the stochastic
// representation of the same three equations solve_1d discretizes, at the
// same t. membrane_side resolves u[0] == 0.
Estimate feynman_kac(const std::vector<double>& u, Side membrane_side, double t,
                     const InitialProfile& rho0, const SnappingParams& params,
                     std::int64_t replicas, std::uint64_t seed);
// General multi-coordinate initial datum.
Estimate feynman_kac(const std::vector<double>& u, Side membrane_side, double t,
                     const std::function<double(const std::vector<double>&)>& rho0,
                     const SnappingParams& params, std::int64_t replicas,
                     std::uint64_t seed);

// Two-sided compactly supported test function: each part is a polynomial on
// its half of [-radius, radius] and 0 beyond; parts may disagree at 0.
// Instances from bump_test_function are C^2 at the support edge by
// construction (the free polynomial is multiplied by (1 - (u/R)^2)^3).
struct PiecewiseTestFunction {
  std::vector<double> plus_coeffs;   // ascending powers, valid on [0, radius]
  std::vector<double> minus_coeffs;  // valid on [-radius, 0]
  double radius = 1.0;

  double value(double u, Side side) const;
  double d1(double u, Side side) const;
  double d2(double u, Side side) const;
  // C^2 at the support edge (value and two derivatives vanish at +-radius).
  void validate() const;
  // Continuous through 0 with matching first two derivatives?
  bool smooth_at_origin() const;
};
PiecewiseTestFunction bump_test_function(const std::vector<double>& plus_poly,
                                         const std::vector<double>& minus_poly,
                                         double radius);

// |LHS - RHS| of the weak formulation matching cond, with space and time
// integrals by composite trapezoid over the path frames:
//   LHS  = int rho_t H - int rho_0 H
//   RHS  = int_0^t { int_{u != 0} rho_s H'' du
//                    + rho_s(0+) d+H(0) - rho_s(0-) d-H(0)
//                    + [robin] alpha (rho_s(0-) - rho_s(0+)) (H(0+) - H(0-)) } ds.
// cond none demands H smooth through 0 (the heat weak form has no surface
// terms); a jump there, or a part that fails C^2 at the support edge, is a
// domain error. H's support must fit inside the grid window.
double weak_residual(const SolutionPath& rho, const PiecewiseTestFunction& H,
                     double t, const InterfaceCondition& cond);

// Box average of the grid over (0, epsilon) or (-epsilon, 0); epsilon >= dx.
double trace_average(const Grid1D& g, double epsilon, Side side);
// Box average of f over the one-sided box at base point u (u[0] on the
// membrane): coordinate 1 ranges over (0, epsilon) or (-epsilon, 0), the
// others over (u_i - epsilon, u_i + epsilon). Tensor midpoint rule.
double trace_average(const std::function<double(const std::vector<double>&)>& f,
                     const std::vector<double>& u, double epsilon, Side side,
                     int points_per_axis = 32);

// CSV profile dump: t,u1,side,rho with side in {-,+,bulk}.
std::string profile_csv_header();
std::string profile_csv(const Grid1D& g, double t);

}  // namespace slowvoter
