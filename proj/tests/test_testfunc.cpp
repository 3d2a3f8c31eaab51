#include <cmath>
#include <numbers>
#include <vector>

#include "doctest.h"
#include "slowvoter/testfunc.hpp"

using namespace slowvoter;

namespace {

double fd2_axis(const SBetaFunction& h, int axis, std::vector<double> u, double eps) {
  std::vector<double> up = u, um = u;
  up[static_cast<std::size_t>(axis)] += eps;
  um[static_cast<std::size_t>(axis)] -= eps;
  return (h.value(up) - 2.0 * h.value(u) + h.value(um)) / (eps * eps);
}

}  // namespace

TEST_CASE("polygauss: evaluation is polynomial times gaussian") {
  PolyGauss f({2.0, 1.0}, 1.0);  // (2 + u) e^{-u^2}
  CHECK(f(0.0) == doctest::Approx(2.0));
  CHECK(f(1.0) == doctest::Approx(3.0 * std::exp(-1.0)));
  CHECK(f(-2.0) == doctest::Approx(0.0 * std::exp(-4.0)));
  CHECK(PolyGauss::constant(5.0)(17.3) == doctest::Approx(5.0));
  CHECK_THROWS_AS(PolyGauss({}, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(PolyGauss({1.0}, -0.5), std::invalid_argument);
}

TEST_CASE("polygauss: derivative recursion matches the closed form") {
  PolyGauss f({2.0, 1.0}, 1.0);
  PolyGauss d = f.derivative();  // (1 - 4u - 2u^2) e^{-u^2}
  REQUIRE(d.coeffs().size() == 3);
  CHECK(d.coeffs()[0] == doctest::Approx(1.0));
  CHECK(d.coeffs()[1] == doctest::Approx(-4.0));
  CHECK(d.coeffs()[2] == doctest::Approx(-2.0));
  CHECK(d.decay() == doctest::Approx(1.0));

  // one-sided jet at 0 used throughout the membrane matching checks
  CHECK(f.derivative_at(0.0, 0) == doctest::Approx(2.0));
  CHECK(f.derivative_at(0.0, 1) == doctest::Approx(1.0));
  CHECK(f.derivative_at(0.0, 2) == doctest::Approx(-4.0));
  CHECK(f.derivative_at(0.0, 3) == doctest::Approx(-6.0));
  CHECK_THROWS_AS(f.derivative_at(0.0, -1), std::invalid_argument);
}

TEST_CASE("polygauss: derivative agrees with central differences") {
  PolyGauss f({0.5, -1.0, 0.0, 2.0}, 0.7);
  PolyGauss d = f.derivative();
  const double h = 1e-5;
  for (double u : {-1.7, -0.3, 0.0, 0.4, 2.1}) {
    double fd = (f(u + h) - f(u - h)) / (2.0 * h);
    CHECK(d(u) == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("polygauss: derivative of a constant collapses to zero") {
  PolyGauss z = PolyGauss::constant(3.0).derivative();
  CHECK(z.coeffs().size() == 1);
  CHECK(z(0.9) == 0.0);
}

TEST_CASE("polygauss: product multiplies polynomials and adds decays") {
  PolyGauss a({1.0, 1.0}, 1.0);   // (1 + u) e^{-u^2}
  PolyGauss b({2.0, -1.0}, 2.0);  // (2 - u) e^{-2u^2}
  PolyGauss p = a * b;            // (2 + u - u^2) e^{-3u^2}
  REQUIRE(p.coeffs().size() == 3);
  CHECK(p.coeffs()[0] == doctest::Approx(2.0));
  CHECK(p.coeffs()[1] == doctest::Approx(1.0));
  CHECK(p.coeffs()[2] == doctest::Approx(-1.0));
  CHECK(p.decay() == doctest::Approx(3.0));
  for (double u : {-1.2, 0.0, 0.8}) CHECK(p(u) == doctest::Approx(a(u) * b(u)));
}

TEST_CASE("gauss_integral: even moments, odd terms drop, no-decay throws") {
  const double pi = std::numbers::pi;
  CHECK(gauss_integral(PolyGauss({1.0}, 1.0)) == doctest::Approx(std::sqrt(pi)));
  CHECK(gauss_integral(PolyGauss({0.0, 0.0, 1.0}, 1.0)) ==
        doctest::Approx(0.5 * std::sqrt(pi)));
  CHECK(gauss_integral(PolyGauss({1.0, 7.0}, 1.0)) == doctest::Approx(std::sqrt(pi)));
  // int u^4 e^{-2u^2} = (3/16) sqrt(pi/2)
  CHECK(gauss_integral(PolyGauss({0.0, 0.0, 0.0, 0.0, 1.0}, 2.0)) ==
        doctest::Approx(3.0 / 16.0 * std::sqrt(pi / 2.0)));
  CHECK_THROWS_AS(gauss_integral(PolyGauss::constant(1.0)), std::domain_error);
}

TEST_CASE("l2_integral: normalized gaussian has unit mass") {
  PolyGauss g({std::pow(std::numbers::pi, -0.25)}, 0.5);
  CHECK(l2_integral(g) == doctest::Approx(1.0));
  // quadrature cross-check for a non-trivial polynomial part
  PolyGauss f({1.0, -2.0, 0.5}, 1.0);
  double sum = 0.0;
  const double du = 1e-4;
  for (double u = -8.0; u < 8.0; u += du) sum += f(u) * f(u) * du;
  CHECK(l2_integral(f) == doctest::Approx(sum).epsilon(1e-6));
}

TEST_CASE("sbeta function: u1 <= 0 selects the minus part") {
  SBetaFunction h;
  h.plus_part = PolyGauss::constant(2.0);
  h.minus_part = PolyGauss::constant(1.0);
  CHECK(h.value({0.5}) == doctest::Approx(2.0));
  CHECK(h.value({-0.5}) == doctest::Approx(1.0));
  CHECK(h.value({0.0}) == doctest::Approx(1.0));
  CHECK(h.part(Side::kPlus)(0.0) == doctest::Approx(2.0));
  CHECK(h.part(Side::kMinus)(0.0) == doctest::Approx(1.0));
}

TEST_CASE("sbeta function: perp factors multiply and check arity") {
  SBetaFunction h;
  h.plus_part = PolyGauss({1.0, 1.0}, 1.0);
  h.minus_part = h.plus_part;
  h.perp_parts = {PolyGauss({1.0}, 1.0), PolyGauss({1.0, 1.0}, 1.0)};
  std::vector<double> u = {0.5, 0.3, -0.2};
  double expect = (1.5 * std::exp(-0.25)) * std::exp(-0.09) *
                  (0.8 * std::exp(-0.04));
  CHECK(h.value(u) == doctest::Approx(expect));
  CHECK(h.perp_product(u) == doctest::Approx(expect / (1.5 * std::exp(-0.25))));
  CHECK_THROWS_AS(h.value({0.5, 0.3}), std::invalid_argument);
  CHECK_THROWS_AS(h.perp_product({}), std::invalid_argument);

  SBetaFunction flat = even_super(PolyGauss({1.0}, 1.0));
  CHECK(flat.perp_product({0.1, 9.0, -3.0, 2.0}) == doctest::Approx(1.0));
}

TEST_CASE("sbeta function: d2_axis matches finite differences") {
  SBetaFunction h;
  h.plus_part = PolyGauss({2.0, 1.0}, 1.0);
  h.minus_part = PolyGauss({1.0, 1.0}, 1.0);
  h.perp_parts = {PolyGauss({1.0, 0.5}, 1.0), PolyGauss({1.0}, 2.0)};
  std::vector<double> u = {0.4, -0.6, 0.2};
  CHECK(h.d2_axis(1, u) == doctest::Approx(fd2_axis(h, 1, u, 1e-4)).epsilon(1e-5));
  CHECK(h.d2_axis(2, u) == doctest::Approx(fd2_axis(h, 2, u, 1e-4)).epsilon(1e-5));
  CHECK(h.d2_u1(u) == doctest::Approx(fd2_axis(h, 0, u, 1e-4)).epsilon(1e-5));
  CHECK_THROWS_AS(h.d2_axis(0, u), std::invalid_argument);
  CHECK_THROWS_AS(h.d2_axis(3, u), std::invalid_argument);

  SBetaFunction flat = even_super(PolyGauss({1.0, 0.0, 1.0}, 1.0));
  CHECK(flat.d2_axis(5, {0.3, 1.0}) == 0.0);
}

TEST_CASE("even_super: mirrored parts give an even profile") {
  SBetaFunction h = even_super(PolyGauss({1.0, 0.0, -2.0}, 1.5));
  CHECK(h.regime == BetaRegime::kSuper);
  for (double u : {0.2, 0.7, 1.9})
    CHECK(h.value({u}) == doctest::Approx(h.value({-u})));
}

TEST_CASE("critical_gaussian_pair: slopes equal alpha times the jump") {
  SBetaFunction h = critical_gaussian_pair(2.0, 1.0, 1.0);
  CHECK(h.regime == BetaRegime::kCritical);
  CHECK(h.alpha == doctest::Approx(1.0));
  CHECK(h.one_sided(0, Side::kPlus) == doctest::Approx(2.0));
  CHECK(h.one_sided(0, Side::kMinus) == doctest::Approx(1.0));
  CHECK(h.one_sided(1, Side::kPlus) == doctest::Approx(1.0));
  CHECK(h.one_sided(1, Side::kMinus) == doctest::Approx(1.0));
  // second derivatives differ: the order-1 matching is *not* built in
  CHECK(h.one_sided(2, Side::kPlus) == doctest::Approx(-4.0));
  CHECK(h.one_sided(2, Side::kMinus) == doctest::Approx(-2.0));

  SBetaFunction g = critical_gaussian_pair(0.5, -0.25, 2.5);
  double jump = 0.5 - (-0.25);
  CHECK(g.one_sided(1, Side::kPlus) == doctest::Approx(2.5 * jump));
  CHECK(g.one_sided(1, Side::kMinus) == doctest::Approx(2.5 * jump));
  CHECK_THROWS_AS(critical_gaussian_pair(1.0, 0.0, 0.0), std::invalid_argument);
}
