#pragma once
#include <cstdint>
#include <functional>
#include <vector>

#include "slowvoter/lattice.hpp"
#include "slowvoter/profile.hpp"

namespace svtest {

// Dense master-equation integration of the accelerated voter chain on boxes
// of at most 12 sites.  Deliberately independent of the event engine: the
// generator is assembled from bond_rate alone and integrated with fixed-step
// RK4, so it can arbitrate between simulation and duality estimates.
class MasterEquation {
 public:
  MasterEquation(const slowvoter::BoxGeometry& geom,
                 const slowvoter::MembraneRates& rates);

  std::size_t states() const { return n_states_; }

  std::vector<double> product_init(const slowvoter::InitialProfile& rho0) const;

  std::vector<double> evolve(std::vector<double> p, double t) const;

  // integral_0^t E[F(eta_s)] ds, trapezoid on the RK grid.
  double integrate_expectation(std::vector<double> p, double t,
                               const std::function<double(std::uint64_t)>& F) const;

  double expectation(const std::vector<double>& p,
                     const std::function<double(std::uint64_t)>& F) const;

  double mean(const std::vector<double>& p, std::int64_t site) const;

  // E[eta(a) eta(b)]
  double pair(const std::vector<double>& p, std::int64_t a, std::int64_t b) const;

  // E[eta_t(x) eta_s(y)], t >= s, from initial distribution p0.
  double unequal_pair(const std::vector<double>& p0, std::int64_t x, double t,
                      std::int64_t y, double s) const;

 private:
  void derivative(const std::vector<double>& p, std::vector<double>& dp) const;
  void rk4(std::vector<double>& p, double dt) const;
  double step_size() const;

  slowvoter::BoxGeometry geom_;
  int scale_;
  struct Bond {
    int from;
    int to;
    double rate;  // includes the N^2 acceleration
  };
  std::vector<Bond> bonds_;
  std::size_t n_states_;
  double total_rate_ = 0.0;
};

}  // namespace svtest
