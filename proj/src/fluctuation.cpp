#include "slowvoter/fluctuation.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <stdexcept>
#include <unordered_map>

#include "json.hpp"
#include "slowvoter/stats.hpp"

namespace slowvoter {

namespace {

constexpr std::uint64_t kPurposeMartingale = 0xf1c70001ull;

// Per-radius walk budget for the hitting-probability table of
// boundary_variance_scaling. Censoring at this horizon biases the table
// low by O(horizon^{1-(d-1)/2}); the table feeds an upper-bound *scaling*
// fit, where the bias cancels across box sizes.
constexpr std::uint64_t kGammaTableHorizon = 20000;

double pow_int(double base, int e) {
  double r = 1.0;
  bool inv = e < 0;
  for (int k = 0; k < (inv ? -e : e); ++k) r *= base;
  return inv ? 1.0 / r : r;
}

// Site tables for one (geometry, H, rates) triple: H(x/N), H(x/N)^2 and the
// exchange pairing c(x) = sum_{y~x} xi_{xy} (H(y/N) - H(x/N)) over torus
// bonds. Everything the martingale ledger needs per flip is O(d) lookups.
struct SiteTables {
  std::vector<double> h, h2, c;
  double scale_pow_minus_d = 0.0;  // N^{-d}
};

SiteTables build_tables(const BoxGeometry& geom, const SBetaFunction& H,
                        const MembraneRates& rates) {
  rates.validate();
  const int d = geom.dim();
  const std::int64_t n = geom.site_count();
  SiteTables t;
  t.h.resize(static_cast<std::size_t>(n));
  t.h2.resize(static_cast<std::size_t>(n));
  t.c.resize(static_cast<std::size_t>(n));
  std::vector<double> u(static_cast<std::size_t>(d));
  for (std::int64_t i = 0; i < n; ++i) {
    for (int a = 0; a < d; ++a)
      u[static_cast<std::size_t>(a)] =
          static_cast<double>(geom.coord(i, a)) / rates.scale;
    double v = H.value(u);
    t.h[static_cast<std::size_t>(i)] = v;
    t.h2[static_cast<std::size_t>(i)] = v * v;
  }
  const double mem = rates.membrane_rate();
  for (std::int64_t i = 0; i < n; ++i) {
    double c = 0.0;
    for (int a = 0; a < d; ++a)
      for (int dir : {1, -1}) {
        std::int64_t j = geom.neighbor(i, a, dir);
        double xi = geom.crosses_membrane(i, a, dir) ? mem : 1.0;
        c += xi * (t.h[static_cast<std::size_t>(j)] - t.h[static_cast<std::size_t>(i)]);
      }
    t.c[static_cast<std::size_t>(i)] = c;
  }
  t.scale_pow_minus_d = pow_int(static_cast<double>(rates.scale), -d);
  return t;
}

double qv_from_tables(const LatticeConfig& cfg, const SiteTables& t,
                      const MembraneRates& rates) {
  const auto& geom = cfg.geometry();
  const double mem = rates.membrane_rate();
  double sum = 0.0;
  for (std::int64_t i = 0; i < geom.site_count(); ++i) {
    bool ei = cfg.get(i);
    for (int a = 0; a < geom.dim(); ++a) {
      std::int64_t j = geom.neighbor(i, a, 1);
      if (cfg.get(j) == ei) continue;
      double xi = geom.crosses_membrane(i, a, 1) ? mem : 1.0;
      sum += xi * (t.h2[static_cast<std::size_t>(i)] + t.h2[static_cast<std::size_t>(j)]);
    }
  }
  return sum * t.scale_pow_minus_d;
}

// Shared accumulation core for both martingale_check variants. Holds the
// running field pairing, generator pairing and QV integrand together with
// their exact time integrals; apply_flip expects the configuration already
// flipped (the engine observer convention).
struct MartingaleLedger {
  const SiteTables* tables = nullptr;
  const MembraneRates* rates = nullptr;
  LatticeConfig cfg;
  double field_coeff = 0.0;  // N^{-(1+d/2)}
  double gen_coeff = 0.0;    // N^{2-d} * N^{d/2-1}: generator pairing to field units
  double field0 = 0.0;
  double field = 0.0;
  double sum_c = 0.0;  // sum over occupied sites of c(x)
  double qv = 0.0;
  double int_gen = 0.0;
  double int_qv = 0.0;
  double last_t = 0.0;

  MartingaleLedger(const LatticeConfig& initial, const SiteTables& t,
                   const MembraneRates& r)
      : tables(&t), rates(&r), cfg(initial) {
    const int d = initial.geometry().dim();
    field_coeff = std::pow(static_cast<double>(r.scale), -(1.0 + 0.5 * d));
    gen_coeff = std::pow(static_cast<double>(r.scale), 1.0 - 0.5 * d);
    double fh = 0.0, fc = 0.0;
    for (std::int64_t i = 0; i < initial.geometry().site_count(); ++i) {
      if (!initial.get(i)) continue;
      fh += t.h[static_cast<std::size_t>(i)];
      fc += t.c[static_cast<std::size_t>(i)];
    }
    field = field_coeff * fh;
    field0 = field;
    sum_c = fc;
    qv = qv_from_tables(initial, t, r);
  }

  double martingale_at(double t) const {
    return field - field0 - (int_gen + gen_coeff * sum_c * (t - last_t));
  }
  double qv_integral_at(double t) const { return int_qv + qv * (t - last_t); }

  void advance_to(double t) {
    int_gen += gen_coeff * sum_c * (t - last_t);
    int_qv += qv * (t - last_t);
    last_t = t;
  }

  void apply_flip(std::int64_t site, bool new_value) {
    const auto& geom = cfg.geometry();
    const SiteTables& t = *tables;
    const double mem = rates->membrane_rate();
    double delta = new_value ? 1.0 : -1.0;
    field += field_coeff * delta * t.h[static_cast<std::size_t>(site)];
    sum_c += delta * t.c[static_cast<std::size_t>(site)];
    double dq = 0.0;
    for (int a = 0; a < geom.dim(); ++a)
      for (int dir : {1, -1}) {
        std::int64_t j = geom.neighbor(site, a, dir);
        bool ej = cfg.get(j);
        int after = (new_value != ej) ? 1 : 0;
        int before = (!new_value != ej) ? 1 : 0;
        if (after == before) continue;
        double xi = geom.crosses_membrane(site, a, dir) ? mem : 1.0;
        dq += xi * static_cast<double>(after - before) *
              (t.h2[static_cast<std::size_t>(site)] + t.h2[static_cast<std::size_t>(j)]);
      }
    qv += dq * t.scale_pow_minus_d;
  }
};

void check_times(const std::vector<double>& times) {
  if (times.empty()) throw std::invalid_argument("need >= 1 observation time");
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (!std::isfinite(times[i]) || times[i] < 0.0)
      throw std::invalid_argument("observation times must be finite and >= 0");
    if (i > 0 && !(times[i] > times[i - 1]))
      throw std::invalid_argument("observation times must be strictly increasing");
  }
}

struct MartingaleAccum {
  std::vector<MeanVar> m, gap, qv;
  explicit MartingaleAccum(std::size_t k) : m(k), gap(k), qv(k) {}
};

MartingaleReport finish_report(const std::vector<double>& times, const MartingaleAccum& a) {
  MartingaleReport rep;
  rep.times = times;
  for (std::size_t k = 0; k < times.size(); ++k) {
    auto est = [](const MeanVar& v) {
      return Estimate{v.mean(), v.stderr_mean(), static_cast<std::int64_t>(v.count())};
    };
    rep.mean_M.push_back(est(a.m[k]));
    rep.qv_gap.push_back(est(a.gap[k]));
    rep.mean_qv.push_back(est(a.qv[k]));
  }
  return rep;
}

// Run one replica's event stream through the ledger. next_event(t) hands out
// flips in time order; observation times are settled just before the first
// event beyond them, so each integral segment uses the configuration that
// actually occupied it.
template <class EventSource>
void accumulate_replica(MartingaleLedger& led, const std::vector<double>& times,
                        MartingaleAccum& acc, EventSource&& for_each_event) {
  std::size_t next_obs = 0;
  auto flush_upto = [&](double t, bool inclusive) {
    while (next_obs < times.size() &&
           (times[next_obs] < t || (inclusive && times[next_obs] <= t))) {
      double tau = times[next_obs];
      double m = led.martingale_at(tau);
      acc.m[next_obs].add(m);
      acc.gap[next_obs].add(m * m - led.qv_integral_at(tau));
      acc.qv[next_obs].add(led.qv_integral_at(tau));
      ++next_obs;
    }
  };
  for_each_event([&](double t, std::int64_t site, bool new_value) {
    flush_upto(t, false);
    led.advance_to(t);
    led.cfg.set(site, new_value);
    led.apply_flip(site, new_value);
    flush_upto(t, true);
  });
  flush_upto(times.back(), true);
}

// Radial hitting-probability model: Monte Carlo values at the table radii,
// linear interpolation in 1/r between them, power tail r^{3-d} beyond the
// last entry (exact order for the transient perpendicular walk).
class GammaRadialTable {
 public:
  GammaRadialTable(int perp_dim, std::int64_t replicas, std::uint64_t seed)
      : perp_dim_(perp_dim) {
    for (int r : {1, 2, 3, 4, 5, 6, 7, 8, 11, 16, 22, 28}) {
      std::vector<std::int64_t> z(static_cast<std::size_t>(perp_dim_), 0);
      z[0] = r;
      CensoredEstimate e = hitting_prob_Gamma(
          z, kGammaTableHorizon, replicas,
          seed + 1000003ull * static_cast<std::uint64_t>(r));
      radii_.push_back(static_cast<double>(r));
      values_.push_back(e.value);
    }
  }

  double at(double r) const {
    if (r <= 0.0) return 1.0;  // hits itself
    if (r <= radii_.front()) return values_.front();
    if (r >= radii_.back()) {
      int tail = perp_dim_ >= 3 ? perp_dim_ - 2 : 0;
      return values_.back() * pow_int(radii_.back() / r, tail);
    }
    auto it = std::upper_bound(radii_.begin(), radii_.end(), r);
    std::size_t i = static_cast<std::size_t>(it - radii_.begin());
    double x0 = 1.0 / radii_[i - 1], x1 = 1.0 / radii_[i];
    double w = (1.0 / r - x0) / (x1 - x0);
    return values_[i - 1] + w * (values_[i] - values_[i - 1]);
  }

 private:
  int perp_dim_;
  std::vector<double> radii_, values_;
};

nlohmann::json estimate_json(const Estimate& e) {
  return {{"value", e.value}, {"std_error", e.std_error}, {"replicas", e.replicas}};
}

}  // namespace

// ---- test-function calculus ------------------------------------------------

double gauss_integral(const PolyGauss& f) {
  double c = f.decay();
  if (!(c > 0.0)) throw std::domain_error("gauss_integral needs positive decay");
  double moment = std::sqrt(std::numbers::pi / c);  // int e^{-c u^2}
  double sum = 0.0;
  const auto& a = f.coeffs();
  for (std::size_t k = 0; 2 * k < a.size(); ++k) {
    if (k > 0) moment *= static_cast<double>(2 * k - 1) / (2.0 * c);
    sum += a[2 * k] * moment;
  }
  return sum;
}

double SBetaFunction::perp_product(const std::vector<double>& u) const {
  if (u.empty()) throw std::invalid_argument("need >= 1 coordinate");
  if (perp_parts.empty()) return 1.0;
  if (u.size() != perp_parts.size() + 1)
    throw std::invalid_argument("coordinate count does not match perp factors");
  double p = 1.0;
  for (std::size_t j = 0; j < perp_parts.size(); ++j) p *= perp_parts[j](u[j + 1]);
  return p;
}

double SBetaFunction::d2_axis(int axis, const std::vector<double>& u) const {
  if (axis < 1) throw std::invalid_argument("axis must be >= 1 (use d2_u1 for axis 0)");
  if (perp_parts.empty()) return 0.0;
  if (u.size() != perp_parts.size() + 1)
    throw std::invalid_argument("coordinate count does not match perp factors");
  if (static_cast<std::size_t>(axis) > perp_parts.size())
    throw std::invalid_argument("axis outside perp factor list");
  double p = part_at(u[0])(u[0]);
  for (std::size_t j = 0; j < perp_parts.size(); ++j) {
    double uj = u[j + 1];
    p *= (static_cast<int>(j) == axis - 1) ? perp_parts[j].derivative_at(uj, 2)
                                           : perp_parts[j](uj);
  }
  return p;
}

SBetaFunction critical_gaussian_pair(double plus_level, double minus_level,
                                     double alpha) {
  if (!(alpha > 0.0)) throw std::invalid_argument("alpha must be positive");
  double slope = alpha * (plus_level - minus_level);
  SBetaFunction h;
  h.plus_part = PolyGauss({plus_level, slope}, 1.0);
  h.minus_part = PolyGauss({minus_level, slope}, 1.0);
  h.regime = BetaRegime::kCritical;
  h.alpha = alpha;
  return h;
}

// ---- membership validation --------------------------------------------------

SBetaReport validate_sbeta(SBetaFunction& H, int k_max, double rel_tol) {
  if (k_max < 0) throw std::invalid_argument("k_max must be >= 0");
  if (!(rel_tol > 0.0)) throw std::invalid_argument("rel_tol must be positive");
  if (H.regime == BetaRegime::kCritical && !(H.alpha > 0.0))
    throw std::domain_error("critical matching needs alpha > 0");
  SBetaReport rep;
  rep.pass = true;
  for (int k = 0; k <= k_max; ++k) {
    double even_p = H.one_sided(2 * k, Side::kPlus);
    double even_m = H.one_sided(2 * k, Side::kMinus);
    double odd_p = H.one_sided(2 * k + 1, Side::kPlus);
    double odd_m = H.one_sided(2 * k + 1, Side::kMinus);
    double scale = 1.0 + std::fabs(even_p) + std::fabs(even_m);
    double res = 0.0;
    switch (H.regime) {
      case BetaRegime::kCritical: {
        double target = H.alpha * (even_p - even_m);
        res = std::max({std::fabs(odd_p - odd_m), std::fabs(odd_p - target),
                        std::fabs(odd_m - target)}) /
              scale;
        break;
      }
      case BetaRegime::kSuper:
        res = std::max(std::fabs(odd_p), std::fabs(odd_m)) / scale;
        break;
      case BetaRegime::kSub:
        res = std::max(std::fabs(even_p - even_m), std::fabs(odd_p - odd_m)) / scale;
        break;
    }
    bool ok = res <= rel_tol;
    rep.orders.push_back({k, res, ok});
    rep.pass = rep.pass && ok;
  }
  int prefix = -1;
  for (const auto& o : rep.orders) {
    if (!o.pass) break;
    prefix = o.k;
  }
  H.verified_orders = std::max(H.verified_orders, prefix);
  return rep;
}

std::string SBetaReport::to_json() const {
  nlohmann::json j;
  j["op"] = "validate_sbeta";
  j["pass"] = pass;
  j["orders"] = nlohmann::json::array();
  for (const auto& o : orders)
    j["orders"].push_back({{"k", o.k}, {"residual", o.residual}, {"pass", o.pass}});
  return j.dump();
}

// ---- field and generator pairings -------------------------------------------

double field_eval(const LatticeConfig& config, const std::vector<double>& mean_field,
                  const SBetaFunction& H, int scale) {
  const auto& geom = config.geometry();
  if (scale < 1) throw std::invalid_argument("scale must be >= 1");
  if (static_cast<std::int64_t>(mean_field.size()) != geom.site_count())
    throw std::invalid_argument("mean field size does not match box");
  const int d = geom.dim();
  double sum = 0.0;
  std::vector<double> u(static_cast<std::size_t>(d));
  for (std::int64_t i = 0; i < geom.site_count(); ++i) {
    double mean = mean_field[static_cast<std::size_t>(i)];
    bool occupied = config.get(i);
    if (!std::isfinite(mean)) {
      if (occupied)
        throw std::domain_error("missing mean at an occupied site");
      continue;  // unobserved empty site: no contribution
    }
    double centered = (occupied ? 1.0 : 0.0) - mean;
    if (centered == 0.0) continue;
    for (int a = 0; a < d; ++a)
      u[static_cast<std::size_t>(a)] = static_cast<double>(geom.coord(i, a)) / scale;
    sum += centered * H.value(u);
  }
  return std::pow(static_cast<double>(scale), -(1.0 + 0.5 * d)) * sum;
}

double generator_pi(const LatticeConfig& config, const SBetaFunction& H,
                    const MembraneRates& rates) {
  const auto& geom = config.geometry();
  SiteTables t = build_tables(geom, H, rates);
  double sum = 0.0;
  for (std::int64_t i = 0; i < geom.site_count(); ++i)
    if (config.get(i)) sum += t.c[static_cast<std::size_t>(i)];
  return pow_int(static_cast<double>(rates.scale), 2 - geom.dim()) * sum;
}

DynkinTerms dynkin_terms(const LatticeConfig& config, const SBetaFunction& H,
                         const MembraneRates& rates) {
  rates.validate();
  const auto& geom = config.geometry();
  const int d = geom.dim();
  const int n_scale = rates.scale;
  DynkinTerms out;
  std::vector<double> u(static_cast<std::size_t>(d));
  std::vector<double> uy(static_cast<std::size_t>(d));
  for (std::int64_t i = 0; i < geom.site_count(); ++i) {
    if (!config.get(i)) continue;
    int c1 = geom.coord(i, 0);
    for (int a = 0; a < d; ++a)
      u[static_cast<std::size_t>(a)] = static_cast<double>(geom.coord(i, a)) / n_scale;
    double lap = 0.0;
    for (int a = 1; a < d; ++a) lap += H.d2_axis(a, u);
    if (c1 != 0 && c1 != 1) lap += H.d2_u1(u);
    out.laplacian += lap;
    if (c1 == 0 || c1 == 1) {
      if (c1 == 1)
        out.boundary_plus += H.d1_u1(u);
      else
        out.boundary_minus -= H.d1_u1(u);
      uy = u;
      uy[0] = static_cast<double>(c1 == 0 ? 1 : 0) / n_scale;
      out.membrane += H.value(uy) - H.value(u);
    }
  }
  double n_minus_d = pow_int(static_cast<double>(n_scale), -d);
  out.laplacian *= n_minus_d;
  out.boundary_plus *= n_minus_d * n_scale;
  out.boundary_minus *= n_minus_d * n_scale;
  out.membrane *= n_minus_d * n_scale * n_scale * rates.membrane_rate();
  return out;
}

double qv_integrand(const LatticeConfig& config, const SBetaFunction& H,
                    const MembraneRates& rates) {
  SiteTables t = build_tables(config.geometry(), H, rates);
  return qv_from_tables(config, t, rates);
}

// ---- limit references --------------------------------------------------------

namespace {

double check_gamma_dim(double gamma_d_value, int d) {
  if (d < 1) throw std::invalid_argument("dimension must be >= 1");
  if (!(gamma_d_value >= 0.0 && gamma_d_value < 1.0))
    throw std::invalid_argument("gamma_d must lie in [0, 1)");
  return 4.0 * d * (1.0 - gamma_d_value);
}

// Trapezoid of rho (1-rho) * f(u1) * g(u1) over the doubled-origin grid,
// with one-sided factor values at the two origin nodes. The doubled nodes
// share a position, so the pair contributes no width.
double grid_weighted_product(const Grid1D& rho,
                             const std::function<double(double, Side)>& f,
                             const std::function<double(double, Side)>& g) {
  std::vector<double> fx(rho.values.size());
  for (std::size_t i = 0; i < rho.values.size(); ++i) {
    Side side = static_cast<int>(i) <= rho.zero_minus ? Side::kMinus : Side::kPlus;
    double r = rho.values[i];
    fx[i] = r * (1.0 - r) * f(rho.positions[i], side) * g(rho.positions[i], side);
  }
  double sum = 0.0;
  for (std::size_t i = 0; i + 1 < fx.size(); ++i)
    sum += 0.5 * (fx[i] + fx[i + 1]) * (rho.positions[i + 1] - rho.positions[i]);
  return sum;
}

double perp_l2_mass(const SBetaFunction& H, int d) {
  if (H.perp_parts.empty()) return 1.0;  // constant-1 factors: per unit volume
  if (static_cast<int>(H.perp_parts.size()) != d - 1)
    throw std::invalid_argument("perp factor count does not match dimension");
  double m = 1.0;
  for (const auto& p : H.perp_parts) m *= l2_integral(p);
  return m;
}

std::size_t frame_index(const SolutionPath& path, double t) {
  for (std::size_t i = 0; i < path.times.size(); ++i)
    if (std::fabs(path.times[i] - t) <= 1e-9 * std::max(1.0, std::fabs(t))) return i;
  throw std::invalid_argument("t is not a frame time of the density path");
}

double side_value(const SBetaFunction& H, double u1, Side side) {
  return u1 == 0.0 ? H.part(side)(0.0) : H.part_at(u1)(u1);
}

}  // namespace

double qv_limit_reference(const Grid1D& rho, const SBetaFunction& H,
                          double gamma_d_value, int d) {
  double pref = check_gamma_dim(gamma_d_value, d);
  auto h = [&H](double u, Side s) { return side_value(H, u, s); };
  return pref * perp_l2_mass(H, d) * grid_weighted_product(rho, h, h);
}

double qv_limit_integral(const SolutionPath& rho, double t, const SBetaFunction& H,
                         double gamma_d_value, int d) {
  if (rho.times.empty() || rho.times.size() != rho.frames.size())
    throw std::invalid_argument("density path is empty or inconsistent");
  std::size_t last = frame_index(rho, t);
  double sum = 0.0;
  double prev = 0.0;
  for (std::size_t i = 0; i <= last; ++i) {
    double v = qv_limit_reference(rho.frames[i], H, gamma_d_value, d);
    if (i > 0) sum += 0.5 * (prev + v) * (rho.times[i] - rho.times[i - 1]);
    prev = v;
  }
  return sum;
}

Estimate pair_correlation_qv(const std::vector<std::int64_t>& x, double t,
                             const MembraneRates& rates, const InitialProfile& rho0,
                             std::int64_t replicas, std::uint64_t seed,
                             const BoxGeometry* torus) {
  if (x.empty()) throw std::invalid_argument("need >= 1 coordinate");
  if (replicas < 1) throw std::invalid_argument("need >= 1 replica");
  rates.validate();
  const int d = static_cast<int>(x.size());

  std::vector<std::vector<std::int64_t>> neighbors;
  if (torus) {
    if (torus->dim() != d) throw std::invalid_argument("torus dimension mismatch");
    std::vector<int> xi(x.begin(), x.end());
    std::int64_t idx = torus->index_of(xi);
    for (int a = 0; a < d; ++a)
      for (int dir : {1, -1}) {
        std::int64_t j = torus->neighbor(idx, a, dir);
        std::vector<int> yc = torus->coords_of(j);
        neighbors.emplace_back(yc.begin(), yc.end());
      }
  } else {
    for (int a = 0; a < d; ++a)
      for (int dir : {1, -1}) {
        std::vector<std::int64_t> y = x;
        y[static_cast<std::size_t>(a)] += dir;
        neighbors.push_back(std::move(y));
      }
  }

  auto sub_seed = [seed](std::uint64_t k) { return seed + 1000003ull * k; };
  Estimate px = one_point_function(x, t, rates, rho0, replicas, sub_seed(0), torus);
  double value = 0.0;
  double var = pow_int(static_cast<double>(2 * d) * px.std_error, 2);
  std::uint64_t k = 1;
  for (const auto& y : neighbors) {
    Estimate py = one_point_function(y, t, rates, rho0, replicas, sub_seed(k++), torus);
    Estimate pxy = two_point_function(x, y, t, t, rates, rho0, replicas, sub_seed(k++), torus);
    value += px.value + py.value - 2.0 * pxy.value;
    var += py.std_error * py.std_error + 4.0 * pxy.std_error * pxy.std_error;
  }
  return Estimate{value, std::sqrt(var), replicas};
}

double ou_covariance(const SBetaFunction& H, const SBetaFunction& G, double t, double s,
                     const SolutionPath& rho, double gamma_d_value, int d) {
  double pref = check_gamma_dim(gamma_d_value, d);
  if (!(t >= 0.0) || !(s >= 0.0)) throw std::invalid_argument("times must be >= 0");
  if (rho.times.empty() || rho.times.size() != rho.frames.size())
    throw std::invalid_argument("density path is empty or inconsistent");

  double perp = 1.0;
  if (H.perp_parts.empty() && G.perp_parts.empty()) {
    perp = 1.0;  // both constant across the perp volume: per-unit convention
  } else if (H.perp_parts.empty() || G.perp_parts.empty()) {
    const auto& parts = H.perp_parts.empty() ? G.perp_parts : H.perp_parts;
    if (static_cast<int>(parts.size()) != d - 1)
      throw std::invalid_argument("perp factor count does not match dimension");
    for (const auto& p : parts) perp *= gauss_integral(p);
  } else {
    if (H.perp_parts.size() != G.perp_parts.size() ||
        static_cast<int>(H.perp_parts.size()) != d - 1)
      throw std::invalid_argument("perp factor count does not match dimension");
    for (std::size_t j = 0; j < H.perp_parts.size(); ++j)
      perp *= gauss_integral(H.perp_parts[j] * G.perp_parts[j]);
  }

  std::size_t last = frame_index(rho, std::min(t, s));
  auto h = [&H](double u, Side sd) { return side_value(H, u, sd); };
  auto g = [&G](double u, Side sd) { return side_value(G, u, sd); };
  double sum = 0.0, prev = 0.0;
  for (std::size_t i = 0; i <= last; ++i) {
    double v = grid_weighted_product(rho.frames[i], h, g);
    if (i > 0) sum += 0.5 * (prev + v) * (rho.times[i] - rho.times[i - 1]);
    prev = v;
  }
  return pref * perp * sum;
}

double limit_variance(const SBetaFunction& H, double t, const SolutionPath& rho,
                      const std::function<double(double, double, Side)>& semigroup,
                      double gamma_d_value, int d) {
  double pref = check_gamma_dim(gamma_d_value, d);
  if (!H.perp_parts.empty())
    throw std::domain_error("limit_variance expects an H depending on u1 only");
  if (!semigroup) throw std::invalid_argument("semigroup evaluator required");
  if (rho.times.empty() || rho.times.size() != rho.frames.size())
    throw std::invalid_argument("density path is empty or inconsistent");
  std::size_t last = frame_index(rho, t);
  double sum = 0.0, prev = 0.0;
  for (std::size_t i = 0; i <= last; ++i) {
    double lag = t - rho.times[i];
    auto th = [&](double u, Side sd) { return semigroup(lag, u, sd); };
    double v = grid_weighted_product(rho.frames[i], th, th);
    if (i > 0) sum += 0.5 * (prev + v) * (rho.times[i] - rho.times[i - 1]);
    prev = v;
  }
  return pref * sum;
}

// ---- martingale ledger --------------------------------------------------------

MartingaleReport martingale_check(const LatticeConfig& initial, const SBetaFunction& H,
                                  const MembraneRates& rates,
                                  const std::vector<double>& times, std::int64_t replicas,
                                  std::uint64_t seed) {
  check_times(times);
  if (replicas < 1) throw std::invalid_argument("need >= 1 replica");
  SiteTables tables = build_tables(initial.geometry(), H, rates);
  VoterEngine engine(initial.geometry(), rates);
  MartingaleAccum acc(times.size());
  double t_end = times.back();
  for (std::int64_t r = 0; r < replicas; ++r) {
    MartingaleLedger led(initial, tables, rates);
    Philox rng = make_stream(seed, kPurposeMartingale, static_cast<std::uint64_t>(r));
    accumulate_replica(led, times, acc, [&](auto&& on_event) {
      if (t_end > 0.0)
        engine.run(led.cfg, t_end, rng,
                   [&](double t, std::int64_t site, std::int64_t, bool nv) {
                     // the engine already applied the flip; rewind so the
                     // ledger sees pre-flip state for the integral segment
                     led.cfg.set(site, !nv);
                     on_event(t, site, nv);
                   });
    });
  }
  return finish_report(times, acc);
}

MartingaleReport martingale_check(const std::vector<Trajectory>& trajectories,
                                  const SBetaFunction& H, const MembraneRates& rates,
                                  const std::vector<double>& times) {
  check_times(times);
  if (trajectories.empty()) throw std::invalid_argument("need >= 1 trajectory");

  const auto& geom = trajectories.front().final_config.geometry();
  const auto& grid = trajectories.front().snapshots;
  if (grid.empty())
    throw std::domain_error("trajectories must carry snapshot grids");
  for (double tau : times) {
    bool found = false;
    for (const auto& s : grid)
      if (std::fabs(s.first - tau) <= 1e-9 * std::max(1.0, std::fabs(tau))) found = true;
    if (!found)
      throw std::domain_error("observation time missing from the trajectory grid");
  }

  SiteTables tables = build_tables(geom, H, rates);
  MartingaleAccum acc(times.size());
  for (const auto& traj : trajectories) {
    if (!(traj.final_config.geometry() == geom))
      throw std::domain_error("trajectories live on different boxes");
    if (traj.snapshots.size() != grid.size())
      throw std::domain_error("inconsistent observation grids across trajectories");
    for (std::size_t i = 0; i < grid.size(); ++i)
      if (traj.snapshots[i].first != grid[i].first)
        throw std::domain_error("inconsistent observation grids across trajectories");

    LatticeConfig initial = traj.final_config;
    for (auto it = traj.events.rbegin(); it != traj.events.rend(); ++it)
      initial.set(it->site, !it->new_value);

    MartingaleLedger led(initial, tables, rates);
    std::size_t snap = 0;
    auto check_snapshots_upto = [&](double t) {
      while (snap < traj.snapshots.size() && traj.snapshots[snap].first <= t) {
        if (!(led.cfg == traj.snapshots[snap].second))
          throw std::domain_error(
              "snapshot disagrees with event replay (were events recorded?)");
        ++snap;
      }
    };
    accumulate_replica(led, times, acc, [&](auto&& on_event) {
      for (const auto& e : traj.events) {
        check_snapshots_upto(e.t);
        on_event(e.t, e.site, e.new_value);
      }
      check_snapshots_upto(traj.snapshots.back().first);
    });
    if (!(led.cfg == traj.final_config))
      throw std::domain_error("event replay does not reach the final configuration");
  }
  return finish_report(times, acc);
}

std::string MartingaleReport::to_json() const {
  nlohmann::json j;
  j["op"] = "martingale_check";
  j["times"] = times;
  auto block = [](const std::vector<Estimate>& v) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : v) arr.push_back(estimate_json(e));
    return arr;
  };
  j["mean_M"] = block(mean_M);
  j["qv_gap"] = block(qv_gap);
  j["mean_qv"] = block(mean_qv);
  return j.dump();
}

// ---- boundary variance scaling --------------------------------------------------

VarianceScalingReport boundary_variance_scaling(const MembraneRates& rates,
                                                const InitialProfile& rho0,
                                                const SBetaFunction& H, int d,
                                                const std::vector<int>& scales, double t,
                                                std::int64_t replicas,
                                                std::uint64_t seed) {
  rates.validate();
  if (d < 2) throw std::invalid_argument("needs a membrane plane, d >= 2");
  if (scales.empty()) throw std::invalid_argument("need >= 1 scale");
  if (!(t >= 0.0)) throw std::invalid_argument("t must be >= 0");
  if (replicas < 1) throw std::invalid_argument("need >= 1 replica");
  if (!H.perp_parts.empty() && static_cast<int>(H.perp_parts.size()) != d - 1)
    throw std::invalid_argument("perp factor count does not match dimension");

  double v0 = rho0(0.0);
  double occupancy_cap = v0 * (1.0 - v0);  // rho0 is u1-only: constant on the plane
  double h0 = H.minus_part(0.0);           // u1 = 0 sits on the minus side

  VarianceScalingReport rep;
  rep.scales = scales;
  if (occupancy_cap == 0.0 || h0 == 0.0) {
    rep.bounds.assign(scales.size(), 0.0);
    return rep;
  }

  GammaRadialTable gamma(d - 1, replicas, seed);
  for (int n : scales) {
    BoxGeometry box = BoxGeometry::with_site_count(d, n);
    int extent = box.extent(1);
    // per-axis correlation of |h| against its torus shift
    std::vector<std::vector<double>> chi(static_cast<std::size_t>(d - 1));
    for (int a = 1; a < d; ++a) {
      std::vector<double> habs(static_cast<std::size_t>(extent));
      for (int c = box.lo(a); c <= box.hi(a); ++c) {
        double val = H.perp_parts.empty()
                         ? 1.0
                         : H.perp_parts[static_cast<std::size_t>(a - 1)](
                               static_cast<double>(c) / n);
        habs[static_cast<std::size_t>(c - box.lo(a))] = std::fabs(val);
      }
      std::vector<double>& ca = chi[static_cast<std::size_t>(a - 1)];
      ca.assign(static_cast<std::size_t>(extent), 0.0);
      for (int z = 0; z < extent; ++z)
        for (int i = 0; i < extent; ++i)
          ca[static_cast<std::size_t>(z)] +=
              habs[static_cast<std::size_t>(i)] *
              habs[static_cast<std::size_t>((i + z) % extent)];
    }
    // sum over torus displacements, radial hitting probability memoized on
    // the integer squared wrapped distance
    std::unordered_map<std::int64_t, double> gamma_cache;
    std::vector<int> z(static_cast<std::size_t>(d - 1), 0);
    double pair_sum = 0.0;
    while (true) {
      double weight = 1.0;
      std::int64_t r2 = 0;
      for (int a = 0; a < d - 1; ++a) {
        int za = z[static_cast<std::size_t>(a)];
        weight *= chi[static_cast<std::size_t>(a)][static_cast<std::size_t>(za)];
        std::int64_t m = std::min(za, extent - za);
        r2 += m * m;
      }
      auto it = gamma_cache.find(r2);
      double g = it != gamma_cache.end()
                     ? it->second
                     : (gamma_cache[r2] = gamma.at(std::sqrt(static_cast<double>(r2))));
      pair_sum += weight * g;
      int a = 0;
      for (; a < d - 1; ++a) {
        if (++z[static_cast<std::size_t>(a)] < extent) break;
        z[static_cast<std::size_t>(a)] = 0;
      }
      if (a == d - 1) break;
    }
    rep.bounds.push_back(t * t * 4.0 * occupancy_cap * h0 * h0 * pair_sum);
  }

  bool positive = true;
  for (double b : rep.bounds) positive = positive && b > 0.0;
  if (positive && rep.bounds.size() >= 2) {
    std::vector<double> lx, ly;
    for (std::size_t i = 0; i < rep.bounds.size(); ++i) {
      lx.push_back(std::log(static_cast<double>(scales[i])));
      ly.push_back(std::log(rep.bounds[i]));
    }
    rep.fitted_exponent = fit_line(lx, ly).slope;
  }
  return rep;
}

std::string VarianceScalingReport::to_json() const {
  nlohmann::json j;
  j["op"] = "boundary_variance_scaling";
  j["scales"] = scales;
  j["bounds"] = bounds;
  j["fitted_exponent"] = fitted_exponent;
  return j.dump();
}

}  // namespace slowvoter
