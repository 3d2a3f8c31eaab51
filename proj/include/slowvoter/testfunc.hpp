#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "slowvoter/brownian.hpp"

namespace slowvoter {

// p(u) e^{-decay u^2} with p a polynomial in ascending powers. The class is
// closed under d/du, so every derivative is exact.
class PolyGauss {
 public:
  PolyGauss() : coeffs_{0.0} {}
  PolyGauss(std::vector<double> coeffs, double decay)
      : coeffs_(std::move(coeffs)), decay_(decay) {
    if (coeffs_.empty()) throw std::invalid_argument("need >= 1 coefficient");
    if (!(decay_ >= 0.0)) throw std::invalid_argument("decay must be >= 0");
  }

  static PolyGauss constant(double v) { return PolyGauss({v}, 0.0); }

  double operator()(double u) const {
    double p = 0.0;
    for (std::size_t i = coeffs_.size(); i-- > 0;) p = p * u + coeffs_[i];
    return p * std::exp(-decay_ * u * u);
  }

  // (p' - 2 decay u p) e^{-decay u^2}
  PolyGauss derivative() const {
    std::vector<double> d(coeffs_.size() + 1, 0.0);
    for (std::size_t i = 1; i < coeffs_.size(); ++i)
      d[i - 1] += static_cast<double>(i) * coeffs_[i];
    for (std::size_t i = 0; i < coeffs_.size(); ++i)
      d[i + 1] -= 2.0 * decay_ * coeffs_[i];
    while (d.size() > 1 && d.back() == 0.0) d.pop_back();
    return PolyGauss(std::move(d), decay_);
  }

  double derivative_at(double u, int order) const {
    if (order < 0) throw std::invalid_argument("order must be >= 0");
    PolyGauss g = *this;
    for (int k = 0; k < order; ++k) g = g.derivative();
    return g(u);
  }

  PolyGauss operator*(const PolyGauss& o) const {
    std::vector<double> c(coeffs_.size() + o.coeffs_.size() - 1, 0.0);
    for (std::size_t i = 0; i < coeffs_.size(); ++i)
      for (std::size_t j = 0; j < o.coeffs_.size(); ++j)
        c[i + j] += coeffs_[i] * o.coeffs_[j];
    return PolyGauss(std::move(c), decay_ + o.decay_);
  }

  const std::vector<double>& coeffs() const { return coeffs_; }
  double decay() const { return decay_; }

 private:
  std::vector<double> coeffs_;
  double decay_ = 0.0;
};

// int_R f du, exact: int u^{2k} e^{-c u^2} du = (2k-1)!! / (2c)^k sqrt(pi/c).
// Throws when the tail does not decay.
double gauss_integral(const PolyGauss& f);

// int_R f^2 du, exact.
inline double l2_integral(const PolyGauss& f) { return gauss_integral(f * f); }

// Two-sided test function on R^d, separable across coordinates: the
// membrane coordinate u_1 carries a plus and a minus part, coordinates
// 2..d carry the perp factors (an empty list means the constant factor 1
// in every perp coordinate). u_1 <= 0 selects the minus part, matching the
// lattice convention that the membrane sits between sites 0 and 1.
struct SBetaFunction {
  PolyGauss plus_part = PolyGauss::constant(0.0);
  PolyGauss minus_part = PolyGauss::constant(0.0);
  std::vector<PolyGauss> perp_parts;
  BetaRegime regime = BetaRegime::kCritical;
  double alpha = 1.0;      // critical matching constant
  int verified_orders = -1;  // highest k confirmed by validate_sbeta; -1 = none

  const PolyGauss& part(Side side) const {
    return side == Side::kPlus ? plus_part : minus_part;
  }
  const PolyGauss& part_at(double u1) const {
    return u1 > 0.0 ? plus_part : minus_part;
  }

  double value(const std::vector<double>& u) const {
    return part_at(u[0])(u[0]) * perp_product(u);
  }
  double d1_u1(const std::vector<double>& u) const {
    return part_at(u[0]).derivative_at(u[0], 1) * perp_product(u);
  }
  double d2_u1(const std::vector<double>& u) const {
    return part_at(u[0]).derivative_at(u[0], 2) * perp_product(u);
  }
  // Second derivative along a perp axis (1-based axis >= 1, i.e. u_{axis+1}).
  double d2_axis(int axis, const std::vector<double>& u) const;

  // One-sided derivative of the coordinate-1 factor at the membrane.
  double one_sided(int order, Side side) const {
    return part(side).derivative_at(0.0, order);
  }

  // Product of the perp factors at u_2..u_d; checks arity when factors exist.
  double perp_product(const std::vector<double>& u) const;
};

// H(u) = f(u_1) on both sides, even profile for the blocked-membrane class.
inline SBetaFunction even_super(PolyGauss f) {
  SBetaFunction h;
  h.plus_part = f;
  h.minus_part = std::move(f);
  h.regime = BetaRegime::kSuper;
  return h;
}

// Two-sided gaussian pair (a + b u) e^{-u^2} satisfying the order-0 slow
// membrane matching at the given alpha: both slopes equal alpha times the
// jump at 0.
SBetaFunction critical_gaussian_pair(double plus_level, double minus_level,
                                     double alpha);

}  // namespace slowvoter
