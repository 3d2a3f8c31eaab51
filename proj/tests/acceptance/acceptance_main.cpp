// Acceptance gate: nine end-to-end checks at full scale, one PASS/FAIL line
// each, every tolerance pinned here. Exit status is the number of failures.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <numbers>
#include <string>
#include <vector>

#include "slowvoter/brownian.hpp"
#include "slowvoter/fluctuation.hpp"
#include "slowvoter/lattice.hpp"
#include "slowvoter/pde.hpp"
#include "slowvoter/stats.hpp"
#include "slowvoter/walks.hpp"
#include "support/master_equation.hpp"

using namespace slowvoter;
using svtest::MasterEquation;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double zdiff(double a, double sa, double b, double sb) {
  double denom = std::sqrt(sa * sa + sb * sb);
  double gap = std::fabs(a - b);
  if (denom == 0.0) return gap == 0.0 ? 0.0 : INFINITY;
  return gap / denom;
}

// shared return-probability oracle in d = 4; horizon and replica count are
// part of the gate, so both consumers read the same single run
const std::vector<std::uint64_t> kGammaHorizons = {10000, 100000, 1000000};

const std::vector<double>& gamma4_curve() {
  static const std::vector<double> curve = [] {
    auto t0 = std::chrono::steady_clock::now();
    std::vector<double> c = gamma_curve(4, kGammaHorizons, 1000000, 0xA48);
    std::printf("    [shared] d=4 return-probability curve, 1e6 replicas, horizon 1e6:"
                " %.5f (%.0fs)\n",
                c.back(), seconds_since(t0));
    return c;
  }();
  return curve;
}

// ---- A1: six-site ring, three routes agree ---------------------------------

bool criterion_a1() {
  constexpr double kZMax = 3.0;
  const double times[2] = {0.1, 1.0};
  const std::int64_t sites[6] = {-2, -1, 0, 1, 2, 3};
  const std::int64_t pairs[3][2] = {{0, 1}, {-1, 2}, {2, 3}};
  const std::int64_t reps = 100000;

  BoxGeometry geom = BoxGeometry::with_site_count(1, 6);
  InitialProfile rho0 = InitialProfile::ramp(0.5, 0.3);
  bool ok = true;

  for (double beta : {0.0, 1.0, 2.0}) {
    MembraneRates rates{1.0, beta, 2};
    std::uint64_t tag = static_cast<std::uint64_t>(beta);

    // dense 64-state integration (error-free reference)
    MasterEquation me(geom, rates);
    std::vector<double> p = me.product_init(rho0);
    std::vector<std::vector<double>> dist;
    dist.push_back(me.evolve(p, times[0]));
    dist.push_back(me.evolve(dist[0], times[1] - times[0]));

    // direct event simulation, both times from one trajectory set
    MeanVar sim_mean[2][6];
    MeanVar sim_pair[2][3];
    for (std::int64_t r = 0; r < reps; ++r) {
      LatticeConfig init =
          sample_initial(geom, rho0, 2, 0xA100 + tag * 1000003ull +
                                            static_cast<std::uint64_t>(r));
      SimulateOptions opt;
      opt.t_end = times[1];
      opt.seed = 0xA1D0 + tag;
      opt.replica = static_cast<std::uint64_t>(r);
      opt.snapshot_times = {times[0], times[1]};
      Trajectory traj = simulate(init, rates, opt);
      for (int k = 0; k < 2; ++k) {
        const LatticeConfig& cfg = traj.snapshots[static_cast<std::size_t>(k)].second;
        double occ[6];
        for (int s = 0; s < 6; ++s) {
          occ[s] = cfg.get(geom.index_of({static_cast<int>(sites[s])})) ? 1.0 : 0.0;
          sim_mean[k][s].add(occ[s]);
        }
        for (int q = 0; q < 3; ++q)
          sim_pair[k][q].add(occ[pairs[q][0] + 2] * occ[pairs[q][1] + 2]);
      }
    }

    // duality estimators on the same torus
    double worst = 0.0;
    int comparisons = 0;
    auto compare3 = [&](double sim, double sim_se, const Estimate& dual, double exact) {
      worst = std::max(worst, zdiff(sim, sim_se, dual.value, dual.std_error));
      worst = std::max(worst, zdiff(sim, sim_se, exact, 0.0));
      worst = std::max(worst, zdiff(dual.value, dual.std_error, exact, 0.0));
      comparisons += 3;
    };
    std::uint64_t sub = 0;
    for (int k = 0; k < 2; ++k) {
      for (int s = 0; s < 6; ++s) {
        Estimate dual = one_point_function({sites[s]}, times[k], rates, rho0, reps,
                                           0xA1E0 + tag * 7919 + 1000003ull * ++sub,
                                           &geom);
        compare3(sim_mean[k][s].mean(), sim_mean[k][s].stderr_mean(), dual,
                 me.mean(dist[static_cast<std::size_t>(k)],
                         geom.index_of({static_cast<int>(sites[s])})));
      }
      for (int q = 0; q < 3; ++q) {
        Estimate dual = two_point_function({pairs[q][0]}, {pairs[q][1]}, times[k],
                                           times[k], rates, rho0, reps,
                                           0xA1F0 + tag * 7919 + 1000003ull * ++sub,
                                           &geom);
        compare3(sim_pair[k][q].mean(), sim_pair[k][q].stderr_mean(), dual,
                 me.pair(dist[static_cast<std::size_t>(k)],
                         geom.index_of({static_cast<int>(pairs[q][0])}),
                         geom.index_of({static_cast<int>(pairs[q][1])})));
      }
    }
    std::printf("    beta=%.0f: worst |z| = %.2f over %d route comparisons (gate %.0f)\n",
                beta, worst, comparisons, kZMax);
    ok = ok && worst <= kZMax;
  }
  return ok;
}

// ---- A2: rescaled walk endpoint vs regime limit law -------------------------

bool criterion_a2() {
  constexpr double kKsMax = 0.05;
  constexpr int kScale = 200;
  constexpr double kT = 0.5;
  constexpr std::int64_t kReps = 100000;
  struct Case {
    double beta;
    SignedHalfLinePoint u;
  };
  const Case cases[5] = {{0.5, {1.0, Side::kPlus}},
                         {1.0, {0.0, Side::kPlus}},
                         {1.0, {-1.0, Side::kMinus}},
                         {2.0, {0.0, Side::kPlus}},
                         {2.0, {1.0, Side::kPlus}}};
  bool ok = true;
  for (int i = 0; i < 5; ++i) {
    MembraneRates rates{1.0, cases[i].beta, kScale};
    SnappingParams params;
    params.alpha = 1.0;
    params.regime = regime_for_beta(cases[i].beta);
    double ks = invariance_distance(cases[i].u, kT, rates, params, kReps,
                                    0xA200 + 1000003ull * static_cast<std::uint64_t>(i));
    std::printf("    beta=%.1f u=%s%.0f: KS = %.4f (gate %.2f)\n", cases[i].beta,
                cases[i].u.side == Side::kPlus ? "+" : "-",
                std::fabs(cases[i].u.value), ks, kKsMax);
    ok = ok && ks <= kKsMax;
  }
  return ok;
}

// ---- A3: duality density profile vs interface heat solver -------------------

bool criterion_a3() {
  constexpr double kSupMax = 0.02;
  constexpr int kScale = 500;
  constexpr double kT = 0.1;
  constexpr std::int64_t kReps = 100000;
  InitialProfile rho0 = InitialProfile::ramp(0.5, 0.5);
  struct Regime {
    double beta;
    InterfaceCondition cond;
    const char* name;
  };
  const Regime regimes[3] = {{0.5, InterfaceCondition::none(), "free"},
                             {1.0, InterfaceCondition::robin(1.0), "robin"},
                             {2.0, InterfaceCondition::neumann(), "neumann"}};
  bool ok = true;
  for (const Regime& rg : regimes) {
    Grid1D ref = solve_1d(rho0, kT, rg.cond, 0.0025);
    MembraneRates rates{1.0, rg.beta, kScale};
    double sup = 0.0;
    for (int i = 0; i <= 20; ++i) {
      double u = -1.0 + 0.1 * i;
      std::int64_t site = std::llround(u * kScale);
      Side side = site <= 0 ? Side::kMinus : Side::kPlus;
      Estimate est = one_point_function(
          {site}, kT, rates, rho0, kReps,
          0xA300 + static_cast<std::uint64_t>(rg.beta * 10) * 7919 +
              1000003ull * static_cast<std::uint64_t>(i));
      sup = std::max(sup, std::fabs(est.value - ref.at(u, side)));
    }
    std::printf("    beta=%.1f (%s): sup |duality - solver| = %.4f (gate %.2f)\n",
                rg.beta, rg.name, sup, kSupMax);
    ok = ok && sup <= kSupMax;
  }
  return ok;
}

// ---- A4: interface flux identity and grid refinement -------------------------

InitialProfile a4_profile() {
  // 0.5 + 0.25 sign(u) (1 - cos(pi min(|u|,2)/2)), tabulated on the finest
  // grid so every solve sees the identical initial datum
  std::vector<double> u, r;
  for (int i = -3200; i <= 3200; ++i) {
    double x = i / 800.0;
    double m = std::min(std::fabs(x), 2.0);
    double s = x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0);
    u.push_back(x);
    r.push_back(0.5 + 0.25 * s * (1.0 - std::cos(std::numbers::pi * m / 2.0)));
  }
  return InitialProfile::tabulated(u, r);
}

bool criterion_a4() {
  constexpr double kAlpha = 1.0;
  constexpr double kT = 0.1;
  constexpr double kFluxSlack = 10.0;   // residual gate is 10 dx
  constexpr double kRefineGain = 4.0;   // halving dx must cut the error 4x
  InitialProfile rho0 = a4_profile();
  InterfaceCondition robin = InterfaceCondition::robin(kAlpha);
  bool ok = true;

  for (double dx : {0.01, 0.005}) {
    FluxReport rep = interface_flux_report(rho0, kT, robin, dx);
    double worst = std::max(rep.flux_mismatch, rep.robin_residual);
    std::printf("    dx=%.4f: flux mismatch %.5f, jump residual %.5f (gate %.3f)\n", dx,
                rep.flux_mismatch, rep.robin_residual, kFluxSlack * dx);
    ok = ok && worst <= kFluxSlack * dx;
  }

  Grid1D ref = solve_1d(rho0, kT, robin, 1.0 / 800.0);
  auto sup_err = [&](double dx) {
    Grid1D g = solve_1d(rho0, kT, robin, dx);
    double e = 0.0;
    for (std::size_t i = 0; i < g.positions.size(); ++i) {
      Side side =
          i <= static_cast<std::size_t>(g.zero_minus) ? Side::kMinus : Side::kPlus;
      e = std::max(e, std::fabs(g.values[i] - ref.at(g.positions[i], side)));
    }
    return e;
  };
  double coarse = sup_err(0.01);
  double fine = sup_err(0.005);
  std::printf("    refinement vs dx=1/800: sup err %.3e -> %.3e, gain %.2f (gate >= %.0f)\n",
              coarse, fine, coarse / fine, kRefineGain);
  ok = ok && fine * kRefineGain <= coarse;
  return ok;
}

// ---- A5: bulk discordance rate vs transient-walk constant --------------------

bool criterion_a5() {
  constexpr double kRelMax = 0.10;
  constexpr int kD = 4;
  constexpr int kScale = 50;
  constexpr double kT = 0.1;
  constexpr std::int64_t kReps = 30000;

  double gamma4 = gamma4_curve().back();
  BoxGeometry torus = BoxGeometry::with_site_count(kD, kScale);
  MembraneRates rates{1.0, 1.0, kScale};
  InitialProfile rho0 = InitialProfile::constant(0.5);
  Estimate qv =
      pair_correlation_qv({25, 0, 0, 0}, kT, rates, rho0, kReps, 0xA500, &torus);
  double target = 4.0 * kD * (1.0 - gamma4) * 0.25;
  double rel = std::fabs(qv.value / target - 1.0);
  std::printf("    per-site discordance %.5f +- %.5f vs 4d(1-gamma)rho(1-rho) = %.5f,"
              " rel %.4f (gate %.2f)\n",
              qv.value, qv.std_error, target, rel, kRelMax);
  return rel <= kRelMax;
}

// ---- A6: martingale ledger closes on the six-site box ------------------------

bool criterion_a6() {
  constexpr double kZMax = 3.0;
  constexpr std::int64_t kReps = 100000;
  BoxGeometry geom = BoxGeometry::with_site_count(1, 6);
  MembraneRates rates{1.0, 0.0, 1};
  SBetaFunction H = critical_gaussian_pair(2.0, 1.0, 1.0);
  LatticeConfig init = sample_initial(geom, InitialProfile::ramp(0.5, 0.3), 1, 0xA600);
  MartingaleReport rep = martingale_check(init, H, rates, {0.1, 0.5}, kReps, 0xA601);
  bool ok = true;
  for (std::size_t k = 0; k < rep.times.size(); ++k) {
    double zm = zdiff(rep.mean_M[k].value, rep.mean_M[k].std_error, 0.0, 0.0);
    double zg = zdiff(rep.qv_gap[k].value, rep.qv_gap[k].std_error, 0.0, 0.0);
    std::printf("    t=%.1f: |E[M]| z = %.2f, |E[M^2]-E[QV]| z = %.2f (gate %.0f)\n",
                rep.times[k], zm, zg, kZMax);
    ok = ok && zm <= kZMax && zg <= kZMax;
  }
  return ok;
}

// ---- A7: plane hitting probability decays like 1/|z| --------------------------

bool criterion_a7() {
  constexpr double kRatioMax = 3.0;
  constexpr std::uint64_t kHorizon = 100000;
  constexpr std::int64_t kReps = 100000;
  const std::int64_t zs[3] = {4, 8, 16};
  double scaled[3];
  for (int i = 0; i < 3; ++i) {
    CensoredEstimate e = hitting_prob_Gamma({zs[i], 0, 0}, kHorizon, kReps,
                                            0xA700 + static_cast<std::uint64_t>(i));
    scaled[i] = e.value * static_cast<double>(zs[i]);
    std::printf("    |z|=%2lld: Gamma = %.5f +- %.5f, Gamma*|z| = %.4f\n",
                static_cast<long long>(zs[i]), e.value, e.std_error, scaled[i]);
  }
  double ratio = *std::max_element(scaled, scaled + 3) /
                 *std::min_element(scaled, scaled + 3);
  std::printf("    max/min of Gamma*|z| = %.3f (gate %.0f)\n", ratio, kRatioMax);
  return ratio <= kRatioMax;
}

// ---- A8: return probabilities against the extrapolation oracle ----------------

bool criterion_a8() {
  constexpr double kRecurrentMin = 0.99;
  constexpr double kGamma3 = 0.3405, kGamma4 = 0.1932, kBand = 0.01;
  bool ok = true;

  CensoredEstimate g1 = gamma_d(1, 1000000, 100000, 0xA810);
  std::printf("    d=1: return frequency %.5f at horizon 1e6 (gate >= %.2f)\n", g1.value,
              kRecurrentMin);
  ok = ok && g1.value >= kRecurrentMin;

  // censored values follow gamma - c H^{1 - d/2}; extrapolate the horizon away
  auto extrapolate = [&](const std::vector<double>& curve, double tail_power) {
    std::vector<double> xs, ys;
    for (std::size_t i = 0; i < curve.size(); ++i) {
      xs.push_back(std::pow(static_cast<double>(kGammaHorizons[i]), tail_power));
      ys.push_back(curve[i]);
    }
    return fit_line(xs, ys).intercept;
  };
  double g3 = extrapolate(gamma_curve(3, kGammaHorizons, 100000, 0xA830), -0.5);
  std::printf("    d=3: extrapolated return probability %.5f (gate %.4f +- %.2f)\n", g3,
              kGamma3, kBand);
  ok = ok && std::fabs(g3 - kGamma3) <= kBand;

  double g4 = extrapolate(gamma4_curve(), -1.0);
  std::printf("    d=4: extrapolated return probability %.5f (gate %.4f +- %.2f)\n", g4,
              kGamma4, kBand);
  ok = ok && std::fabs(g4 - kGamma4) <= kBand;
  return ok;
}

// ---- A9: snapping process consistency ------------------------------------------

bool criterion_a9() {
  constexpr double kZMax = 3.0;
  constexpr double kFkMax = 0.01;
  constexpr std::int64_t kReps = 200000;
  const SignedHalfLinePoint start{0.7, Side::kPlus};
  bool ok = true;

  // even observables cannot see the crossing, so snapping equals reflection
  auto feven = [](SignedHalfLinePoint p) { return 1.0 / (1.0 + p.value * p.value); };
  int idx = 0;
  for (double alpha : {0.5, 1.0, 2.0})
    for (double t : {0.25, 1.0}) {
      Estimate snap = snapping_out_expectation(feven, start, t, alpha, kReps,
                                               0xA900 + 1000003ull *
                                                            static_cast<std::uint64_t>(idx));
      SnappingParams reflected;
      reflected.alpha = alpha;
      reflected.regime = BetaRegime::kSuper;
      Philox rng = make_stream(0xA910, static_cast<std::uint64_t>(idx), 0);
      MeanVar refl;
      for (std::int64_t r = 0; r < kReps; ++r)
        refl.add(feven(sample_B_beta(start, t, reflected, rng)));
      double z = zdiff(snap.value, snap.std_error, refl.mean(), refl.stderr_mean());
      std::printf("    alpha=%.1f t=%.2f: snapping %.5f vs reflected %.5f, |z| = %.2f"
                  " (gate %.0f)\n",
                  alpha, t, snap.value, refl.mean(), z, kZMax);
      ok = ok && z <= kZMax;
      ++idx;
    }

  // the crossing split is a convex combination: constants come back exactly
  auto fone = [](SignedHalfLinePoint) { return 1.0; };
  Estimate mass = snapping_out_expectation(fone, start, 0.5, 1.0, 10000, 0xA920);
  std::printf("    mass: E[1] - 1 = %.1e, std error = %.1e (gate exact)\n",
              mass.value - 1.0, mass.std_error);
  ok = ok && mass.value == 1.0 && mass.std_error == 0.0;

  // stochastic representation vs grid solver, membrane at critical strength
  InitialProfile ramp = InitialProfile::ramp(0.5, 0.5);
  Grid1D grid = solve_1d(ramp, 0.1, InterfaceCondition::robin(1.0), 0.0025);
  SnappingParams crit;
  crit.alpha = 1.0;
  crit.regime = BetaRegime::kCritical;
  double worst = 0.0;
  int pt = 0;
  for (double u : {-0.9, -0.7, -0.5, -0.3, -0.1, 0.1, 0.3, 0.5, 0.7, 0.9}) {
    Side side = u < 0 ? Side::kMinus : Side::kPlus;
    Estimate fk = feynman_kac({u}, side, 0.1, ramp, crit, kReps,
                              0xA930 + 1000003ull * static_cast<std::uint64_t>(pt++));
    worst = std::max(worst, std::fabs(fk.value - grid.at(u, side)));
  }
  std::printf("    path sampler vs solver at 10 points: sup diff = %.5f (gate %.2f)\n",
              worst, kFkMax);
  return ok && worst <= kFkMax;
}

struct Entry {
  const char* id;
  const char* label;
  bool (*fn)();
  double budget;  // wall-clock gate in seconds, 0 = none
};

}  // namespace

// With no arguments every criterion runs; ids on the command line select a
// subset (development aid, the test harness always runs all nine).
int main(int argc, char** argv) {
  const Entry entries[] = {
      {"A1", "six-site ring: simulation, duality, dense integration agree", criterion_a1,
       120.0},
      {"A2", "rescaled walk endpoints match the regime limit laws", criterion_a2, 600.0},
      {"A3", "duality density profiles match the interface heat solver", criterion_a3,
       900.0},
      {"A4", "interface fluxes obey the jump relation and refine 4x", criterion_a4, 0.0},
      {"A5", "bulk discordance rate matches the transient-walk constant", criterion_a5,
       0.0},
      {"A6", "martingale ledger closes on the six-site box", criterion_a6, 0.0},
      {"A7", "plane hitting probabilities decay like the inverse distance", criterion_a7,
       0.0},
      {"A8", "walk return probabilities hit the extrapolated constants", criterion_a8,
       0.0},
      {"A9", "snapping process: reflection, mass, and solver consistency", criterion_a9,
       0.0},
  };
  int failures = 0;
  int selected = 0;
  for (const Entry& e : entries) {
    if (argc > 1) {
      bool match = false;
      for (int i = 1; i < argc; ++i)
        if (std::strcmp(argv[i], e.id) == 0) match = true;
      if (!match) continue;
    }
    ++selected;
    std::printf("%s %s\n", e.id, e.label);
    auto t0 = std::chrono::steady_clock::now();
    bool ok = e.fn();
    double secs = seconds_since(t0);
    if (e.budget > 0.0) {
      std::printf("    runtime %.1fs (budget %.0fs)\n", secs, e.budget);
      ok = ok && secs <= e.budget;
    }
    std::printf("%s %s: %s (%.1fs)\n", e.id, e.label, ok ? "PASS" : "FAIL", secs);
    if (!ok) ++failures;
    std::fflush(stdout);
  }
  std::printf("acceptance: %d/%d criteria passed\n", selected - failures, selected);
  return failures;
}
