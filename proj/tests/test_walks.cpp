#include "doctest.h"
#include "slowvoter/stats.hpp"
#include "slowvoter/walks.hpp"
#include "support/master_equation.hpp"

#include <cmath>
#include <map>
#include <random>

using namespace slowvoter;

namespace {

// single-step uniformization, no batching; independent of the library path
std::int64_t naive_walk_1d(std::int64_t x, double t, const MembraneRates& r, Philox& rng) {
  double T = t * r.scale * r.scale;
  double a = r.membrane_rate();
  double M = std::max(1.0, a);
  std::poisson_distribution<std::int64_t> pk(2.0 * M * T);
  for (std::int64_t k = pk(rng); k > 0; --k) {
    int dir = rng.bounded(2) ? 1 : -1;
    double rate = ((x == 0 && dir > 0) || (x == 1 && dir < 0)) ? a : 1.0;
    if (rng.uniform01() < rate / M) x += dir;
  }
  return x;
}

std::int64_t skellam(double mean, Philox& rng) {
  std::poisson_distribution<std::int64_t> p(mean);
  return p(rng) - p(rng);
}

// absorption probability at 0 of a symmetric walk on {0..cap} started at z0,
// run in two phases with the given jump rates; RK4 on the forward equation
double absorbed_by(std::int64_t z0, double rate1, double t1, double rate2, double t2) {
  const int cap = 400;
  std::vector<double> p(cap + 1, 0.0);
  p[static_cast<std::size_t>(z0)] = 1.0;
  auto deriv = [&](const std::vector<double>& q, double rate, std::vector<double>& out) {
    out.assign(cap + 1, 0.0);
    for (int z = 1; z < cap; ++z) {
      double half = rate / 2.0;
      out[static_cast<std::size_t>(z)] -= rate * q[static_cast<std::size_t>(z)];
      out[static_cast<std::size_t>(z - 1)] += half * q[static_cast<std::size_t>(z)];
      out[static_cast<std::size_t>(z + 1)] += half * q[static_cast<std::size_t>(z)];
    }
  };
  std::vector<double> k1, k2, k3, k4, tmp(cap + 1);
  auto run = [&](double rate, double t_total) {
    if (rate <= 0.0 || t_total <= 0.0) return;
    int steps = static_cast<int>(std::ceil(t_total * rate / 0.05));
    double dt = t_total / steps;
    for (int s = 0; s < steps; ++s) {
      deriv(p, rate, k1);
      for (int i = 0; i <= cap; ++i) tmp[static_cast<std::size_t>(i)] = p[static_cast<std::size_t>(i)] + 0.5 * dt * k1[static_cast<std::size_t>(i)];
      deriv(tmp, rate, k2);
      for (int i = 0; i <= cap; ++i) tmp[static_cast<std::size_t>(i)] = p[static_cast<std::size_t>(i)] + 0.5 * dt * k2[static_cast<std::size_t>(i)];
      deriv(tmp, rate, k3);
      for (int i = 0; i <= cap; ++i) tmp[static_cast<std::size_t>(i)] = p[static_cast<std::size_t>(i)] + dt * k3[static_cast<std::size_t>(i)];
      deriv(tmp, rate, k4);
      for (int i = 0; i <= cap; ++i)
        p[static_cast<std::size_t>(i)] += dt / 6.0 *
            (k1[static_cast<std::size_t>(i)] + 2.0 * k2[static_cast<std::size_t>(i)] +
             2.0 * k3[static_cast<std::size_t>(i)] + k4[static_cast<std::size_t>(i)]);
    }
  };
  run(rate1, t1);
  run(rate2, t2);
  return p[0];
}

}  // namespace

TEST_CASE("next_jump: neighbor choice and waiting time") {
  MembraneRates flat{1.0, 0.0, 1};
  Philox rng(41, 0);
  std::map<std::pair<std::int64_t, std::int64_t>, double> hist;
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    auto j = next_jump(WalkD{{5, 5}}, flat, rng);
    hist[{j.state.coords[0], j.state.coords[1]}] += 1.0;
  }
  std::vector<double> obs, expd;
  for (auto& [k, v] : hist) {
    obs.push_back(v);
    expd.push_back(draws / 4.0);
  }
  REQUIRE(obs.size() == 4);
  CHECK(chi_square_p(obs, expd) > 0.01);

  // slow bond: from coordinate-0 site 1, the race to 0 has rate a vs 1 to 2
  MembraneRates slow{1.0, 1.0, 10};
  double a = slow.membrane_rate();
  CHECK(a == doctest::Approx(0.1));
  int to_zero = 0, total = 0;
  std::vector<double> dts;
  for (int i = 0; i < 100000; ++i) {
    auto j = next_jump(WalkD{{1}}, slow, rng);
    dts.push_back(j.dt);
    ++total;
    if (j.state.coords[0] == 0) ++to_zero;
  }
  double p_hat = static_cast<double>(to_zero) / total;
  double p_true = a / (1.0 + a);
  CHECK(std::fabs(p_hat - p_true) < 3.0 * std::sqrt(p_true * (1.0 - p_true) / total));
  // total rate (1 + a) accelerated by N^2
  double R = (1.0 + a) * 100.0;
  double d = ks_one_sample(dts, [R](double x) { return 1.0 - std::exp(-R * x); });
  CHECK(ks_one_sample_p(d, dts.size()) > 0.01);
}

TEST_CASE("step_walk: blocked membrane is impassable") {
  MembraneRates blocked{1.0, 1e9, 2};
  CHECK(blocked.membrane_rate() == 0.0);
  Philox rng(7, 1);
  for (int i = 0; i < 300; ++i) {
    auto w = step_walk(WalkD{{5}}, 3.0, blocked, rng);
    CHECK(w.coords[0] >= 1);
    auto v = step_walk(WalkD{{-5}}, 3.0, blocked, rng);
    CHECK(v.coords[0] <= 0);
  }
}

TEST_CASE("sample_walk_1d: batched path matches single-step reference") {
  for (MembraneRates r : {MembraneRates{0.7, 1.0, 3}, MembraneRates{3.0, 0.0, 1}}) {
    for (std::int64_t start : {0, 7}) {
      Philox rng_fast(91, 0), rng_ref(91, 1);
      std::vector<double> fast, ref;
      for (int i = 0; i < 20000; ++i) {
        fast.push_back(static_cast<double>(sample_walk_1d(start, 0.8, r, rng_fast)));
        ref.push_back(static_cast<double>(naive_walk_1d(start, 0.8, r, rng_ref)));
      }
      double d = ks_two_sample(fast, ref);
      CHECK(ks_two_sample_p(d, fast.size(), ref.size()) > 0.005);
    }
  }
}

TEST_CASE("step_walk: perpendicular coordinates are independent rate-1 walks") {
  MembraneRates r{1.0, 1.0, 5};
  double T = 1.0 * 25.0;  // microscopic window
  const int n = 20000;
  MeanVar c1, c2, cross;
  Philox rng(13, 2);
  for (int i = 0; i < n; ++i) {
    auto w = step_walk(WalkD{{3, 0, 0}}, 1.0, r, rng);
    double u = static_cast<double>(w.coords[1]);
    double v = static_cast<double>(w.coords[2]);
    c1.add(u);
    c2.add(v);
    cross.add(u * v);
  }
  CHECK(std::fabs(c1.mean()) < 3.0 * std::sqrt(2.0 * T / n));
  CHECK(std::fabs(c2.mean()) < 3.0 * std::sqrt(2.0 * T / n));
  double var_sd = std::sqrt((2.0 * T + 8.0 * T * T) / n);
  CHECK(std::fabs(c1.variance() - 2.0 * T) < 3.0 * var_sd);
  CHECK(std::fabs(c2.variance() - 2.0 * T) < 3.0 * var_sd);
  // covariance of independent coordinates
  CHECK(std::fabs(cross.mean()) < 3.0 * 2.0 * T / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("one_point_function: degenerate profiles are exact") {
  MembraneRates r{1.0, 1.0, 4};
  auto c = one_point_function({2}, 0.7, r, InitialProfile::constant(0.42), 200, 3);
  CHECK(c.value == doctest::Approx(0.42));
  CHECK(c.std_error == doctest::Approx(0.0));

  auto t0 = one_point_function({2}, 0.0, r, InitialProfile::ramp(0.5, 0.25), 100, 3);
  CHECK(t0.value == doctest::Approx(0.5 + 0.25 * 0.5));
  CHECK(t0.std_error == doctest::Approx(0.0));
}

TEST_CASE("one_point_function: affine and monotone in the initial profile") {
  MembraneRates r{1.0, 1.0, 2};
  std::vector<double> knots{-2.0, -1.0, 0.0, 1.0, 2.0};
  std::vector<double> lo{0.1, 0.2, 0.3, 0.2, 0.1};
  std::vector<double> hi{0.5, 0.6, 0.9, 0.8, 0.7};
  std::vector<double> mix(5);
  for (int i = 0; i < 5; ++i) mix[i] = 0.4 * lo[i] + 0.6 * hi[i];
  auto pl = InitialProfile::tabulated(knots, lo);
  auto ph = InitialProfile::tabulated(knots, hi);
  auto pm = InitialProfile::tabulated(knots, mix);
  auto el = one_point_function({1}, 0.5, r, pl, 4000, 9);
  auto eh = one_point_function({1}, 0.5, r, ph, 4000, 9);
  auto em = one_point_function({1}, 0.5, r, pm, 4000, 9);
  CHECK(em.value == doctest::Approx(0.4 * el.value + 0.6 * eh.value).epsilon(1e-12));
  CHECK(el.value <= eh.value);

  auto again = one_point_function({1}, 0.5, r, pm, 4000, 9);
  CHECK(again.value == em.value);
}

TEST_CASE("duality: one_point_function matches the full-chain master equation") {
  auto g = BoxGeometry::with_site_count(1, 6);
  auto rho = InitialProfile::step(0.8, 0.3);
  const std::int64_t reps = 40000;
  for (double beta : {0.0, 1.0, 2.0}) {
    MembraneRates r{1.3, beta, 2};
    svtest::MasterEquation me(g, r);
    auto pt = me.evolve(me.product_init(rho), 0.35);
    for (int site : {0, 1, -2}) {
      auto est = one_point_function({site}, 0.35, r, rho, reps, 1234, &g);
      double truth = me.mean(pt, g.index_of({site}));
      CHECK(std::fabs(est.value - truth) < 3.0 * est.std_error + 1e-9);
    }
  }
}

TEST_CASE("duality: two_point_function matches the master equation, s = t and s < t") {
  auto g = BoxGeometry::with_site_count(1, 6);
  auto rho = InitialProfile::step(0.8, 0.3);
  const std::int64_t reps = 40000;
  for (double beta : {0.0, 1.0}) {
    MembraneRates r{1.3, beta, 2};
    svtest::MasterEquation me(g, r);
    auto p0 = me.product_init(rho);

    auto eq = two_point_function({1}, {-1}, 0.3, 0.3, r, rho, reps, 77, &g);
    auto pt = me.evolve(p0, 0.3);
    double truth_eq = me.pair(pt, g.index_of({1}), g.index_of({-1}));
    CHECK(std::fabs(eq.value - truth_eq) < 3.0 * eq.std_error + 1e-9);

    auto uneq = two_point_function({1}, {-1}, 0.3, 0.12, r, rho, reps, 78, &g);
    double truth_uneq = me.unequal_pair(p0, g.index_of({1}), 0.3, g.index_of({-1}), 0.12);
    CHECK(std::fabs(uneq.value - truth_uneq) < 3.0 * uneq.std_error + 1e-9);
  }
}

TEST_CASE("two_point_function: degenerate cases") {
  MembraneRates r{1.0, 1.0, 2};
  auto ones = two_point_function({0}, {3}, 0.4, 0.2, r, InitialProfile::constant(1.0), 500, 5);
  CHECK(ones.value == doctest::Approx(1.0));
  CHECK(ones.std_error == doctest::Approx(0.0));
  auto zeros = two_point_function({0}, {3}, 0.4, 0.2, r, InitialProfile::constant(0.0), 500, 5);
  CHECK(zeros.value == doctest::Approx(0.0));

  // x = y at equal times collapses to the one-point function
  auto rho = InitialProfile::step(0.9, 0.2);
  auto two = two_point_function({1}, {1}, 0.3, 0.3, r, rho, 40000, 6);
  auto one = one_point_function({1}, 0.3, r, rho, 40000, 6);
  double sd = std::sqrt(two.std_error * two.std_error + one.std_error * one.std_error);
  CHECK(std::fabs(two.value - one.value) < 3.0 * sd);

  CHECK_THROWS(two_point_function({0}, {1}, 0.2, 0.3, r, rho, 10, 1));
}

TEST_CASE("one_point_function: torus and unbounded walks agree away from the wrap") {
  auto g = BoxGeometry::with_site_count(1, 30);
  MembraneRates r{1.0, 1.0, 3};
  auto rho = InitialProfile::ramp(0.5, 0.3);
  auto free_est = one_point_function({1}, 0.2, r, rho, 30000, 11);
  auto torus_est = one_point_function({1}, 0.2, r, rho, 30000, 12, &g);
  double sd = std::sqrt(free_est.std_error * free_est.std_error +
                        torus_est.std_error * torus_est.std_error);
  CHECK(std::fabs(free_est.value - torus_est.value) < 3.0 * sd);
}

TEST_CASE("coalescing pair: perpendicular difference is a doubled simple walk") {
  // far apart in coordinate 0, so the pair never meets within the window
  const int n = 20000;
  double T = 2.0;  // microscopic (scale 1)
  for (MembraneRates r : {MembraneRates{0.5, 1.0, 1}, MembraneRates{3.0, 0.0, 1}}) {
    Philox rng(55, 0), oracle_rng(55, 1);
    std::vector<double> d1, d2, ref1, ref2;
    for (int i = 0; i < n; ++i) {
      auto pair = run_coalescing_pair({0, 0, 0}, {41, 0, 0}, 2.0, 0.0, r, rng);
      CHECK_FALSE(pair.met);
      d1.push_back(static_cast<double>(pair.walker.coords[1] - pair.frozen_walk.coords[1]));
      d2.push_back(static_cast<double>(pair.walker.coords[2] - pair.frozen_walk.coords[2]));
      ref1.push_back(static_cast<double>(skellam(2.0 * T, oracle_rng)));
      ref2.push_back(static_cast<double>(skellam(2.0 * T, oracle_rng)));
    }
    CHECK(ks_two_sample_p(ks_two_sample(d1, ref1), d1.size(), ref1.size()) > 0.005);
    CHECK(ks_two_sample_p(ks_two_sample(d2, ref2), d2.size(), ref2.size()) > 0.005);
  }
}

TEST_CASE("coalescing pair: met implies merged endpoint and recorded epoch") {
  // difference walk: rate 2 while one side is frozen, rate 4 once both move
  MembraneRates r{1.0, 0.0, 1};
  Philox rng(66, 0);
  int met_count = 0;
  const int reps = 2000;
  for (int i = 0; i < reps; ++i) {
    auto pair = run_coalescing_pair({0}, {4}, 30.0, 0.5, r, rng);
    if (pair.met) {
      ++met_count;
      CHECK(pair.walker.coords == pair.frozen_walk.coords);
      CHECK(pair.meet_time >= 0.5);
      CHECK(pair.meet_time <= 30.0);
    }
  }
  double p_meet = absorbed_by(4, 2.0, 0.5, 4.0, 29.5);
  double sd = std::sqrt(reps * p_meet * (1.0 - p_meet));
  CHECK(std::fabs(met_count - reps * p_meet) < 3.5 * sd);
}

TEST_CASE("meeting_time_sample: conventions and recurrence") {
  MembraneRates r{1.0, 0.0, 1};
  Philox rng(8, 0);
  CHECK(meeting_time_sample({3}, {3}, r, 0.0, 10.0, rng) == doctest::Approx(0.0));
  CHECK(std::isinf(meeting_time_sample({3}, {5}, r, 20.0, 10.0, rng)));

  int finite_short = 0, finite_long = 0;
  const int reps = 1000;
  for (int i = 0; i < reps; ++i) {
    if (std::isfinite(meeting_time_sample({0}, {6}, r, 0.0, 2.5, rng))) ++finite_short;
    if (std::isfinite(meeting_time_sample({0}, {6}, r, 0.0, 50.0, rng))) ++finite_long;
  }
  CHECK(finite_long > finite_short);
  double p_long = absorbed_by(6, 4.0, 50.0, 0.0, 0.0);
  double sd = std::sqrt(reps * p_long * (1.0 - p_long));
  CHECK(std::fabs(finite_long - reps * p_long) < 3.5 * sd);
}

TEST_CASE("meeting_time_sample: transverse separation suppresses meetings in d = 4") {
  MembraneRates r{1.0, 1.0, 1};
  Philox rng(9, 0);
  const int reps = 1000;
  int met_near = 0, met_far = 0;
  for (int i = 0; i < reps; ++i) {
    if (std::isfinite(meeting_time_sample({0, 0, 0, 0}, {0, 1, 0, 0}, r, 0.0, 50.0, rng)))
      ++met_near;
    if (std::isfinite(meeting_time_sample({0, 0, 0, 0}, {0, 8, 0, 0}, r, 0.0, 50.0, rng)))
      ++met_far;
  }
  CHECK(met_near > met_far + 50);
}

TEST_CASE("gamma_d: recurrent and transient benchmarks at unit-test scale") {
  auto g1 = gamma_d(1, 10000, 20000, 101);
  CHECK(g1.value > 0.985);
  CHECK(g1.value + g1.residual_bound >= 1.0);  // the bound must cover the true value 1
  CHECK(g1.censored_fraction == doctest::Approx(1.0 - g1.value));

  auto g3 = gamma_d(3, 10000, 20000, 102);
  CHECK(g3.value > 0.3405 - g3.residual_bound - 3.0 * g3.std_error);
  CHECK(g3.value < 0.3405 + 3.0 * g3.std_error);

  auto g4 = gamma_d(4, 40000, 20000, 103);
  CHECK(g4.value > 0.1932 - g4.residual_bound - 3.0 * g4.std_error);
  CHECK(g4.value < 0.1932 + 3.0 * g4.std_error);
}

TEST_CASE("gamma_curve: shares paths with gamma_d and is monotone") {
  std::vector<std::uint64_t> horizons{500, 2000, 10000};
  auto curve = gamma_curve(3, horizons, 5000, 102);
  REQUIRE(curve.size() == 3);
  CHECK(curve[0] <= curve[1]);
  CHECK(curve[1] <= curve[2]);
  auto direct = gamma_d(3, 10000, 5000, 102);
  CHECK(curve[2] == doctest::Approx(direct.value));
  CHECK_THROWS(gamma_curve(3, {10, 10}, 100, 1));
}

TEST_CASE("gamma_d: horizon extrapolation recovers the d = 3 return probability") {
  std::vector<std::uint64_t> horizons{2500, 10000, 40000};
  const std::int64_t reps = 100000;
  auto curve = gamma_curve(3, horizons, reps, 104);
  // censored estimates follow gamma - c * H^{-1/2}; extrapolate H -> infinity
  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < horizons.size(); ++i) {
    xs.push_back(1.0 / std::sqrt(static_cast<double>(horizons[i])));
    ys.push_back(curve[i]);
  }
  auto fit = fit_line(xs, ys);
  CHECK(std::fabs(fit.intercept - 0.340537) < 0.012);
  CHECK(fit.slope < 0.0);
}

TEST_CASE("hitting_prob_Gamma: origin, bounds, decay, and return consistency") {
  auto at0 = hitting_prob_Gamma({0, 0, 0}, 100, 50, 7);
  CHECK(at0.value == doctest::Approx(1.0));
  CHECK(at0.std_error == doctest::Approx(0.0));

  auto far = hitting_prob_Gamma({4, 0, 0}, 30000, 10000, 201);
  auto farther = hitting_prob_Gamma({8, 0, 0}, 30000, 10000, 202);
  CHECK(far.value <= 1.0);
  CHECK(farther.value < far.value);
  double ratio = (far.value * 4.0) / (farther.value * 8.0);
  CHECK(ratio > 0.5);
  CHECK(ratio < 2.0);

  // hitting from a neighbor of the origin is the d = 3 return probability
  auto from_e0 = hitting_prob_Gamma({1, 0, 0}, 10000, 20000, 203);
  auto ret = gamma_d(3, 10000, 20000, 203);
  double sd = std::sqrt(from_e0.std_error * from_e0.std_error + ret.std_error * ret.std_error);
  CHECK(std::fabs(from_e0.value - ret.value) < 3.0 * sd + 1e-4);

  // longer horizon with the same seed extends the same paths
  auto short_h = hitting_prob_Gamma({4, 0, 0}, 1000, 2000, 204);
  auto long_h = hitting_prob_Gamma({4, 0, 0}, 10000, 2000, 204);
  CHECK(long_h.value >= short_h.value);
}

TEST_CASE("estimator csv: shape") {
  CHECK(estimator_csv_header() ==
        "op,params_hash,estimate,std_error,replicas,horizon,censored_fraction\n");
  auto row = estimator_csv_row("gamma_d", 0xabcull, 0.34, 0.001, 1000, 1e6, 0.66);
  CHECK(std::count(row.begin(), row.end(), ',') == 6);
  CHECK(row.back() == '\n');
  CHECK(row.find("gamma_d,") == 0);
  CHECK(row.find("0000000000000abc") != std::string::npos);
}
