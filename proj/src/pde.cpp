#include "slowvoter/pde.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "slowvoter/rng.hpp"
#include "slowvoter/stats.hpp"

namespace slowvoter {

namespace {

constexpr std::uint64_t kPurposeFeynmanKac = 0x9de00001ull;

int half_cells(double dx, double window) {
  if (!(dx > 0.0)) throw std::invalid_argument("dx must be positive");
  if (!(window > 0.0)) throw std::invalid_argument("window must be positive");
  double m = window / dx;
  long long mi = std::llround(m);
  if (mi < 2 || std::fabs(m - static_cast<double>(mi)) > 1e-9 * m)
    throw std::invalid_argument("window must be an integer multiple of dx");
  return static_cast<int>(mi);
}

struct Tridiag {
  std::vector<double> lower, diag, upper;
  std::size_t size() const { return diag.size(); }
};

// Heat operator on the doubled grid; the interface rows come from ghost
// elimination through the centered flux relation.
Tridiag doubled_operator(int m, double dx, double alpha) {
  std::size_t n = static_cast<std::size_t>(2 * m + 2);
  double inv = 1.0 / (dx * dx);
  Tridiag a{std::vector<double>(n, inv), std::vector<double>(n, -2.0 * inv),
            std::vector<double>(n, inv)};
  std::size_t zm = static_cast<std::size_t>(m), zp = zm + 1;
  a.diag[0] = -2.0 * inv;
  a.upper[0] = 2.0 * inv;
  a.lower[zm] = 2.0 * inv;
  a.diag[zm] = -2.0 * inv - 2.0 * alpha / dx;
  a.upper[zm] = 2.0 * alpha / dx;
  a.lower[zp] = 2.0 * alpha / dx;
  a.diag[zp] = -2.0 * inv - 2.0 * alpha / dx;
  a.upper[zp] = 2.0 * inv;
  a.lower[n - 1] = 2.0 * inv;
  a.diag[n - 1] = -2.0 * inv;
  return a;
}

// Ordinary stencil on the plain (single-origin) grid, reflecting ends.
Tridiag plain_operator(int m, double dx) {
  std::size_t n = static_cast<std::size_t>(2 * m + 1);
  double inv = 1.0 / (dx * dx);
  Tridiag a{std::vector<double>(n, inv), std::vector<double>(n, -2.0 * inv),
            std::vector<double>(n, inv)};
  a.diag[0] = -2.0 * inv;
  a.upper[0] = 2.0 * inv;
  a.lower[n - 1] = 2.0 * inv;
  a.diag[n - 1] = -2.0 * inv;
  return a;
}

void apply(const Tridiag& a, const std::vector<double>& u, std::vector<double>& out) {
  std::size_t n = a.size();
  out.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double v = a.diag[i] * u[i];
    if (i > 0) v += a.lower[i] * u[i - 1];
    if (i + 1 < n) v += a.upper[i] * u[i + 1];
    out[i] = v;
  }
}

// Prefactored Thomas solve for M x = rhs with M = I - h A (M is constant
// across time steps, so the elimination coefficients are computed once).
struct ThomasFactor {
  std::vector<double> cp;       // eliminated upper diagonal
  std::vector<double> inv_den;  // 1 / (diag - lower * cp_prev)
  std::vector<double> lower;

  ThomasFactor(const Tridiag& a, double h) {
    std::size_t n = a.size();
    cp.resize(n);
    inv_den.resize(n);
    lower.resize(n);
    double prev = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double diag = 1.0 - h * a.diag[i];
      double lo = i > 0 ? -h * a.lower[i] : 0.0;
      double up = i + 1 < n ? -h * a.upper[i] : 0.0;
      double den = diag - lo * prev;
      inv_den[i] = 1.0 / den;
      cp[i] = up * inv_den[i];
      lower[i] = lo;
      prev = cp[i];
    }
  }

  void solve(std::vector<double>& rhs) const {
    std::size_t n = cp.size();
    rhs[0] *= inv_den[0];
    for (std::size_t i = 1; i < n; ++i)
      rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) * inv_den[i];
    for (std::size_t i = n - 1; i-- > 0;) rhs[i] -= cp[i] * rhs[i + 1];
  }
};

double right_limit(const InitialProfile& rho0) {
  return rho0(std::nextafter(0.0, 1.0));
}

Grid1D emit(const Grid1D& layout, const std::vector<double>& raw, bool doubled) {
  Grid1D g = layout;
  std::size_t n = g.positions.size();
  double excursion = 0.0;
  std::size_t zm = static_cast<std::size_t>(g.zero_minus);
  for (std::size_t i = 0; i < n; ++i) {
    // plain-grid solves share the single origin value between both nodes
    std::size_t src = doubled ? i : (i <= zm ? i : i - 1);
    double v = raw[src];
    excursion = std::max({excursion, -v, v - 1.0});
    g.values[i] = std::clamp(v, 0.0, 1.0);
  }
  g.clip_excursion = std::max(0.0, excursion);
  return g;
}

struct SolveRun {
  SolutionPath path;
  FluxReport flux;
};

SolveRun run_solve(const InitialProfile& rho0, double t, int frames,
                   const InterfaceCondition& cond, double dx, double dt,
                   double window, TimeStepper stepper, bool track_flux) {
  cond.validate();
  if (!(t >= 0.0)) throw std::invalid_argument("time must be >= 0");
  if (frames < 1) throw std::invalid_argument("need >= 1 frames");
  if (dt < 0.0) throw std::invalid_argument("dt must be >= 0");
  Grid1D layout = make_grid(dx, window);
  int m = layout.zero_minus;
  bool doubled = cond.kind != InterfaceKind::kNone;

  std::vector<double> u;
  if (doubled) {
    u.resize(static_cast<std::size_t>(2 * m + 2));
    for (int i = 0; i < 2 * m + 2; ++i)
      u[static_cast<std::size_t>(i)] = rho0(layout.positions[static_cast<std::size_t>(i)]);
    u[static_cast<std::size_t>(m + 1)] = right_limit(rho0);
  } else {
    u.resize(static_cast<std::size_t>(2 * m + 1));
    for (int i = 0; i < m; ++i)
      u[static_cast<std::size_t>(i)] = rho0(layout.positions[static_cast<std::size_t>(i)]);
    u[static_cast<std::size_t>(m)] = 0.5 * (rho0(0.0) + right_limit(rho0));
    for (int i = m + 1; i <= 2 * m; ++i)
      u[static_cast<std::size_t>(i)] = rho0(layout.positions[static_cast<std::size_t>(i + 1)]);
  }

  SolveRun out;
  out.path.times.push_back(0.0);
  out.path.frames.push_back(emit(layout, u, doubled));
  if (t == 0.0) return out;

  double h_req = dt > 0.0 ? dt : 0.4 * dx * dx;
  double frame_len = t / static_cast<double>(frames);
  long long per_frame = std::max<long long>(
      1, static_cast<long long>(std::ceil(frame_len / h_req - 1e-12)));
  double h = frame_len / static_cast<double>(per_frame);
  double alpha = cond.kind == InterfaceKind::kRobin ? cond.alpha : 0.0;
  if (stepper == TimeStepper::kExplicitEuler) {
    double cfl = dx * dx / (2.0 * (1.0 + alpha * dx));
    if (h > cfl * (1.0 + 1e-12) || (dt > 0.0 && dt > cfl * (1.0 + 1e-12)))
      throw std::invalid_argument("explicit step violates the stability bound");
  }

  Tridiag a = doubled ? doubled_operator(m, dx, alpha) : plain_operator(m, dx);
  ThomasFactor factor(a, stepper == TimeStepper::kCrankNicolson ? h / 2.0 : 0.0);
  std::vector<double> au;
  std::size_t zm = static_cast<std::size_t>(m), zp = zm + 1;

  auto record_flux = [&]() {
    if (!track_flux || !doubled) return;
    double fplus = (u[zp + 1] - u[zp]) / dx;
    double fminus = (u[zm] - u[zm - 1]) / dx;
    out.flux.flux_mismatch = std::max(out.flux.flux_mismatch, std::fabs(fplus - fminus));
    out.flux.robin_residual =
        std::max(out.flux.robin_residual, std::fabs(fplus - alpha * (u[zp] - u[zm])));
  };

  for (int f = 1; f <= frames; ++f) {
    for (long long s = 0; s < per_frame; ++s) {
      apply(a, u, au);
      if (stepper == TimeStepper::kCrankNicolson) {
        for (std::size_t i = 0; i < u.size(); ++i) u[i] += 0.5 * h * au[i];
        factor.solve(u);
      } else {
        for (std::size_t i = 0; i < u.size(); ++i) u[i] += h * au[i];
      }
      record_flux();
    }
    out.path.times.push_back(frame_len * static_cast<double>(f));
    out.path.frames.push_back(emit(layout, u, doubled));
  }
  return out;
}

double poly_eval(const std::vector<double>& c, double u) {
  double v = 0.0;
  for (std::size_t i = c.size(); i-- > 0;) v = v * u + c[i];
  return v;
}

std::vector<double> poly_derivative(const std::vector<double>& c) {
  if (c.size() <= 1) return {0.0};
  std::vector<double> d(c.size() - 1);
  for (std::size_t i = 1; i < c.size(); ++i) d[i - 1] = static_cast<double>(i) * c[i];
  return d;
}

double poly_scale(const std::vector<double>& c, double radius) {
  double s = 0.0, p = 1.0;
  for (double ck : c) {
    s += std::fabs(ck) * p;
    p *= radius;
  }
  return s;
}

}  // namespace

void InterfaceCondition::validate() const {
  if (kind == InterfaceKind::kRobin && !(alpha > 0.0))
    throw std::invalid_argument("robin interface needs alpha > 0");
}

Grid1D make_grid(double dx, double window) {
  int m = half_cells(dx, window);
  Grid1D g;
  g.dx = dx;
  g.window = window;
  g.zero_minus = m;
  g.zero_plus = m + 1;
  g.positions.resize(static_cast<std::size_t>(2 * m + 2));
  g.values.assign(static_cast<std::size_t>(2 * m + 2), 0.0);
  for (int i = 0; i <= m; ++i)
    g.positions[static_cast<std::size_t>(i)] = static_cast<double>(i - m) * dx;
  for (int i = m + 1; i <= 2 * m + 1; ++i)
    g.positions[static_cast<std::size_t>(i)] = static_cast<double>(i - m - 1) * dx;
  return g;
}

double Grid1D::at(double u, Side side) const {
  if (!(std::fabs(u) <= window * (1.0 + 1e-12)))
    throw std::invalid_argument("probe outside the grid window");
  int m = zero_minus;
  if (u == 0.0)
    return side == Side::kPlus ? value_plus() : value_minus();
  double x = std::min(std::fabs(u), window) / dx;
  int j = std::min(static_cast<int>(x), m - 1);
  double w = x - static_cast<double>(j);
  if (u > 0.0) {
    std::size_t base = static_cast<std::size_t>(zero_plus + j);
    return values[base] * (1.0 - w) + values[base + 1] * w;
  }
  std::size_t base = static_cast<std::size_t>(zero_minus - j);
  return values[base] * (1.0 - w) + values[base - 1] * w;
}

Grid1D solve_1d(const InitialProfile& rho0, double t, const InterfaceCondition& cond,
                double dx, double dt, double window, TimeStepper stepper) {
  SolveRun run = run_solve(rho0, t, 1, cond, dx, dt, window, stepper, false);
  return run.path.frames.back();
}

SolutionPath solve_1d_path(const InitialProfile& rho0, double t, int frames,
                           const InterfaceCondition& cond, double dx, double dt,
                           double window, TimeStepper stepper) {
  return run_solve(rho0, t, frames, cond, dx, dt, window, stepper, false).path;
}

FluxReport interface_flux_report(const InitialProfile& rho0, double t,
                                 const InterfaceCondition& cond, double dx, double dt,
                                 double window, TimeStepper stepper) {
  if (cond.kind == InterfaceKind::kNone)
    throw std::invalid_argument("flux report needs an interface condition");
  return run_solve(rho0, t, 1, cond, dx, dt, window, stepper, true).flux;
}

double grid_mass(const Grid1D& g) {
  double sum = 0.0;
  std::size_t n = g.values.size();
  for (std::size_t i = 0; i < n; ++i) {
    bool half = i == 0 || i + 1 == n || static_cast<int>(i) == g.zero_minus ||
                static_cast<int>(i) == g.zero_plus;
    sum += (half ? 0.5 : 1.0) * g.values[i];
  }
  return sum * g.dx;
}

Estimate feynman_kac(const std::vector<double>& u, Side membrane_side, double t,
                     const InitialProfile& rho0, const SnappingParams& params,
                     std::int64_t replicas, std::uint64_t seed) {
  return feynman_kac(
      u, membrane_side, t,
      [&rho0](const std::vector<double>& w) { return rho0(w[0]); }, params, replicas,
      seed);
}

Estimate feynman_kac(const std::vector<double>& u, Side membrane_side, double t,
                     const std::function<double(const std::vector<double>&)>& rho0,
                     const SnappingParams& params, std::int64_t replicas,
                     std::uint64_t seed) {
  if (!(t > 0.0)) throw std::invalid_argument("time must be positive");
  if (replicas < 1) throw std::invalid_argument("replicas must be >= 1");
  params.validate();
  MeanVar acc;
  for (std::int64_t r = 0; r < replicas; ++r) {
    Philox rng = make_stream(seed, kPurposeFeynmanKac, static_cast<std::uint64_t>(r));
    acc.add(rho0(sample_W(u, membrane_side, t, params, rng)));
  }
  return {acc.mean(), acc.stderr_mean(), replicas};
}

double PiecewiseTestFunction::value(double u, Side side) const {
  if (std::fabs(u) >= radius) return 0.0;
  bool plus = u > 0.0 || (u == 0.0 && side == Side::kPlus);
  return poly_eval(plus ? plus_coeffs : minus_coeffs, u);
}

double PiecewiseTestFunction::d1(double u, Side side) const {
  if (std::fabs(u) >= radius) return 0.0;
  bool plus = u > 0.0 || (u == 0.0 && side == Side::kPlus);
  return poly_eval(poly_derivative(plus ? plus_coeffs : minus_coeffs), u);
}

double PiecewiseTestFunction::d2(double u, Side side) const {
  if (std::fabs(u) >= radius) return 0.0;
  bool plus = u > 0.0 || (u == 0.0 && side == Side::kPlus);
  return poly_eval(poly_derivative(poly_derivative(plus ? plus_coeffs : minus_coeffs)), u);
}

void PiecewiseTestFunction::validate() const {
  if (!(radius > 0.0)) throw std::invalid_argument("support radius must be positive");
  for (int side = 0; side < 2; ++side) {
    std::vector<double> c = side == 0 ? plus_coeffs : minus_coeffs;
    double edge = side == 0 ? radius : -radius;
    double tol = 1e-9 * (1.0 + poly_scale(c, radius));
    for (int k = 0; k < 3; ++k) {
      if (std::fabs(poly_eval(c, edge)) > tol)
        throw std::invalid_argument("test function is not C^2 at the support edge");
      c = poly_derivative(c);
    }
  }
}

bool PiecewiseTestFunction::smooth_at_origin() const {
  double tol = 1e-9 * (1.0 + poly_scale(plus_coeffs, radius) +
                       poly_scale(minus_coeffs, radius));
  std::vector<double> p = plus_coeffs, q = minus_coeffs;
  for (int k = 0; k < 3; ++k) {
    if (std::fabs(poly_eval(p, 0.0) - poly_eval(q, 0.0)) > tol) return false;
    p = poly_derivative(p);
    q = poly_derivative(q);
  }
  return true;
}

PiecewiseTestFunction bump_test_function(const std::vector<double>& plus_poly,
                                         const std::vector<double>& minus_poly,
                                         double radius) {
  if (!(radius > 0.0)) throw std::invalid_argument("support radius must be positive");
  double r2 = radius * radius;
  // (1 - (u/R)^2)^3 expanded in ascending powers
  std::vector<double> bump = {1.0, 0.0, -3.0 / r2, 0.0, 3.0 / (r2 * r2),
                              0.0, -1.0 / (r2 * r2 * r2)};
  auto mul = [&bump](const std::vector<double>& p) {
    std::vector<double> out(p.size() + bump.size() - 1, 0.0);
    for (std::size_t i = 0; i < p.size(); ++i)
      for (std::size_t j = 0; j < bump.size(); ++j) out[i + j] += p[i] * bump[j];
    return out;
  };
  PiecewiseTestFunction h{mul(plus_poly), mul(minus_poly), radius};
  h.validate();
  return h;
}

double weak_residual(const SolutionPath& rho, const PiecewiseTestFunction& H, double t,
                     const InterfaceCondition& cond) {
  cond.validate();
  H.validate();
  if (rho.frames.empty() || rho.times.size() != rho.frames.size())
    throw std::invalid_argument("solution path is empty or inconsistent");
  if (cond.kind == InterfaceKind::kNone && !H.smooth_at_origin())
    throw std::invalid_argument("the membrane-free weak form needs H smooth at 0");
  const Grid1D& g0 = rho.frames.front();
  if (H.radius > g0.window * (1.0 + 1e-12))
    throw std::invalid_argument("test function support exceeds the grid window");

  std::size_t last = rho.times.size();
  bool found = false;
  std::size_t idx = 0;
  for (std::size_t j = 0; j < last; ++j)
    if (std::fabs(rho.times[j] - t) <= 1e-9 * std::max(1.0, t)) {
      idx = j;
      found = true;
    }
  if (!found) throw std::invalid_argument("t is not a frame time of the path");

  // trapezoid of rho * f over each half, one-sided values at the origin
  auto pair_integral = [](const Grid1D& g, const std::function<double(double, Side)>& f) {
    double acc = 0.0;
    int m = g.zero_minus;
    for (int i = 0; i < m; ++i) {
      std::size_t a = static_cast<std::size_t>(i);
      acc += 0.5 * g.dx *
             (g.values[a] * f(g.positions[a], Side::kMinus) +
              g.values[a + 1] * f(g.positions[a + 1], Side::kMinus));
    }
    for (int i = m + 1; i <= 2 * m; ++i) {
      std::size_t a = static_cast<std::size_t>(i);
      acc += 0.5 * g.dx *
             (g.values[a] * f(g.positions[a], Side::kPlus) +
              g.values[a + 1] * f(g.positions[a + 1], Side::kPlus));
    }
    return acc;
  };
  auto value_of = [&H](double u, Side s) { return H.value(u, s); };
  auto curvature_of = [&H](double u, Side s) { return H.d2(u, s); };

  auto generator_term = [&](const Grid1D& g) {
    double bulk = pair_integral(g, curvature_of);
    double surface = g.value_plus() * H.d1(0.0, Side::kPlus) -
                     g.value_minus() * H.d1(0.0, Side::kMinus);
    double jump = 0.0;
    if (cond.kind == InterfaceKind::kRobin)
      jump = cond.alpha * (g.value_minus() - g.value_plus()) *
             (H.value(0.0, Side::kPlus) - H.value(0.0, Side::kMinus));
    return bulk + surface + jump;
  };

  double lhs = pair_integral(rho.frames[idx], value_of) - pair_integral(g0, value_of);
  double rhs = 0.0;
  for (std::size_t j = 0; j < idx; ++j) {
    double dt = rho.times[j + 1] - rho.times[j];
    rhs += 0.5 * dt * (generator_term(rho.frames[j]) + generator_term(rho.frames[j + 1]));
  }
  return std::fabs(lhs - rhs);
}

double trace_average(const Grid1D& g, double epsilon, Side side) {
  if (epsilon < g.dx * (1.0 - 1e-12))
    throw std::invalid_argument("averaging window smaller than the grid spacing");
  if (epsilon > g.window) throw std::invalid_argument("averaging window exceeds the grid");
  int cells = static_cast<int>(std::floor(epsilon / g.dx + 1e-12));
  cells = std::min(cells, g.zero_minus);
  double dir = side == Side::kPlus ? 1.0 : -1.0;
  int origin = side == Side::kPlus ? g.zero_plus : g.zero_minus;
  auto node = [&](int j) {
    return g.values[static_cast<std::size_t>(origin + (side == Side::kPlus ? j : -j))];
  };
  double acc = 0.0;
  for (int j = 0; j < cells; ++j) acc += 0.5 * g.dx * (node(j) + node(j + 1));
  double rest = epsilon - static_cast<double>(cells) * g.dx;
  if (rest > 1e-12 * g.dx) {
    double f_end = g.at(dir * epsilon, side);
    acc += 0.5 * rest * (node(cells) + f_end);
  }
  return acc / epsilon;
}

double trace_average(const std::function<double(const std::vector<double>&)>& f,
                     const std::vector<double>& u, double epsilon, Side side,
                     int points_per_axis) {
  if (u.empty()) throw std::invalid_argument("base point must have >= 1 coordinate");
  if (u[0] != 0.0) throw std::invalid_argument("base point must sit on the membrane");
  if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be positive");
  if (points_per_axis < 1) throw std::invalid_argument("need >= 1 points per axis");
  std::size_t d = u.size();
  double dir = side == Side::kPlus ? 1.0 : -1.0;
  double p = static_cast<double>(points_per_axis);
  std::vector<int> ix(d, 0);
  std::vector<double> v(d);
  double acc = 0.0;
  long long total = 1;
  for (std::size_t j = 0; j < d; ++j) total *= points_per_axis;
  for (long long it = 0; it < total; ++it) {
    long long rem = it;
    for (std::size_t j = 0; j < d; ++j) {
      ix[j] = static_cast<int>(rem % points_per_axis);
      rem /= points_per_axis;
    }
    v[0] = dir * (static_cast<double>(ix[0]) + 0.5) * epsilon / p;
    for (std::size_t j = 1; j < d; ++j)
      v[j] = u[j] - epsilon + (static_cast<double>(ix[j]) + 0.5) * 2.0 * epsilon / p;
    acc += f(v);
  }
  return acc / static_cast<double>(total);
}

std::string profile_csv_header() { return "t,u1,side,rho\n"; }

std::string profile_csv(const Grid1D& g, double t) {
  std::string out;
  out.reserve(g.values.size() * 32);
  char buf[96];
  for (std::size_t i = 0; i < g.values.size(); ++i) {
    const char* side = "bulk";
    if (static_cast<int>(i) == g.zero_minus) side = "-";
    if (static_cast<int>(i) == g.zero_plus) side = "+";
    std::snprintf(buf, sizeof(buf), "%.10g,%.10g,%s,%.10g\n", t, g.positions[i], side,
                  g.values[i]);
    out += buf;
  }
  return out;
}

}  // namespace slowvoter
