#include "slowvoter/walks.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

#include "slowvoter/stats.hpp"

namespace slowvoter {

namespace {

constexpr std::uint64_t kPurposeOnePoint = 0x77a1c001;
constexpr std::uint64_t kPurposeTwoPoint = 0x77a1c002;
constexpr std::uint64_t kPurposeGamma = 0x77a1c003;
constexpr std::uint64_t kPurposeGammaHit = 0x77a1c004;

constexpr std::uint64_t kNoHit = std::numeric_limits<std::uint64_t>::max();

std::int64_t poisson(double mean, Philox& rng) {
  if (mean <= 0.0) return 0;
  std::poisson_distribution<std::int64_t> p(mean);
  return p(rng);
}

// Binomial(n, 1/2) by popcount of raw bits for small n, standard sampler
// above that. Exact either way.
std::int64_t binomial_half(std::int64_t n, Philox& rng) {
  if (n <= 0) return 0;
  if (n <= 1024) {
    std::int64_t c = 0, left = n;
    while (left >= 64) {
      c += std::popcount(rng());
      left -= 64;
    }
    if (left > 0) c += std::popcount(rng() & ((1ull << left) - 1));
    return c;
  }
  std::binomial_distribution<std::int64_t> b(n, 0.5);
  return b(rng);
}

double micro_time(double t, const MembraneRates& rates) {
  if (!(t >= 0.0)) throw std::invalid_argument("time must be >= 0");
  double s = static_cast<double>(rates.scale);
  return t * s * s;
}

bool crossing_z(std::int64_t x0, int dir) {
  return (x0 == 0 && dir > 0) || (x0 == 1 && dir < 0);
}

// Uniformization headroom per directed bond. Above 1 only when the membrane
// rate exceeds the bulk rate (alpha > 1 with beta = 0); every proposal is
// then thinned by rate/M.
double headroom(const MembraneRates& rates) {
  return std::max(1.0, rates.membrane_rate());
}

// K uniformized steps of the coordinate-0 chain at rate 2M. Away from sites
// {0,1} a proposal is accepted with probability 1/M (always, when M = 1), so
// runs there batch into a Binomial thinning followed by a Binomial
// displacement: from x >= 2 the next x-1 accepted steps cannot touch the
// slow bond, same from x <= -1.
std::int64_t run_steps_1d(std::int64_t x, std::int64_t K, double a, double M,
                          Philox& rng) {
  while (K > 0) {
    if (x >= 2 || x <= -1) {
      std::int64_t dist = x >= 2 ? x - 1 : -x;
      std::int64_t b = std::min(dist, K);
      std::int64_t acc = b;
      if (M > 1.0) {
        std::binomial_distribution<std::int64_t> thin(b, 1.0 / M);
        acc = thin(rng);
      }
      x += 2 * binomial_half(acc, rng) - acc;
      K -= b;
    } else {
      int dir = rng.bounded(2) ? 1 : -1;
      double p = (crossing_z(x, dir) ? a : 1.0) / M;
      if (p >= 1.0 || rng.uniform01() < p) x += dir;
      --K;
    }
  }
  return x;
}

// Walk space policies: unbounded lattice vs torus. run_pair and the
// single-walk advance are generic over them.
struct FreeSpace {
  int d;
  const MembraneRates* rates;
  using Pos = std::vector<std::int64_t>;
  int dim() const { return d; }
  bool crossing(const Pos& p, int axis, int dir) const {
    return axis == 0 && crossing_z(p[0], dir);
  }
  void move(Pos& p, int axis, int dir) const { p[static_cast<std::size_t>(axis)] += dir; }
  static bool equal(const Pos& a, const Pos& b) { return a == b; }
  double u1(const Pos& p) const { return static_cast<double>(p[0]) / rates->scale; }
  void advance(Pos& p, double t, Philox& rng) const {
    double T = micro_time(t, *rates);
    double M = headroom(*rates);
    p[0] = run_steps_1d(p[0], poisson(2.0 * M * T, rng), rates->membrane_rate(), M, rng);
    for (int j = 1; j < d; ++j)
      p[static_cast<std::size_t>(j)] += poisson(T, rng) - poisson(T, rng);
  }
};

struct TorusSpace {
  const BoxGeometry* g;
  const MembraneRates* rates;
  using Pos = std::int64_t;
  int dim() const { return g->dim(); }
  bool crossing(Pos p, int axis, int dir) const { return g->crosses_membrane(p, axis, dir); }
  void move(Pos& p, int axis, int dir) const { p = g->neighbor(p, axis, dir); }
  static bool equal(Pos a, Pos b) { return a == b; }
  double u1(Pos p) const { return static_cast<double>(g->coord(p, 0)) / rates->scale; }
  void advance(Pos& p, double t, Philox& rng) const {
    double T = micro_time(t, *rates);
    double a = rates->membrane_rate();
    double M = headroom(*rates);
    int d = g->dim();
    std::int64_t K = poisson(2.0 * d * M * T, rng);
    for (std::int64_t k = 0; k < K; ++k) {
      std::uint64_t slot = rng.bounded(2 * static_cast<std::uint64_t>(d));
      int axis = static_cast<int>(slot >> 1);
      int dir = (slot & 1) ? 1 : -1;
      double pr = (crossing(p, axis, dir) ? a : 1.0) / M;
      if (pr >= 1.0 || rng.uniform01() < pr) move(p, axis, dir);
    }
  }
};

struct PairOutcome {
  bool met = false;
  double meet_epoch = std::numeric_limits<double>::infinity();
};

// Both walks active for the given macroscopic duration. Pair events arrive
// at microscopic rate 4d (2d per walk); each event picks a walk, then one of
// its 2d directed moves, thinned by the membrane rate. Meeting is checked at
// entry and after every accepted move; on meeting, the merged walk finishes
// the window alone.
template <class Space>
PairOutcome run_pair(const Space& sp, typename Space::Pos& X, typename Space::Pos& Xhat,
                     double duration, const MembraneRates& rates, Philox& rng) {
  if (duration < 0.0) throw std::invalid_argument("pair duration must be >= 0");
  auto merge = [&](double epoch) {
    sp.advance(X, duration - epoch, rng);
    Xhat = X;
    return PairOutcome{true, epoch};
  };
  if (Space::equal(X, Xhat)) return merge(0.0);

  int d = sp.dim();
  double a = rates.membrane_rate();
  double M = headroom(rates);
  double s = static_cast<double>(rates.scale);
  double event_rate = 4.0 * d * M * s * s;
  double elapsed = 0.0;
  for (;;) {
    elapsed += rng.exponential(event_rate);
    if (elapsed > duration) return {};
    std::uint64_t slot = rng.bounded(4 * static_cast<std::uint64_t>(d));
    auto& P = (slot >= 2 * static_cast<std::uint64_t>(d)) ? Xhat : X;
    std::uint64_t m = slot % (2 * static_cast<std::uint64_t>(d));
    int axis = static_cast<int>(m >> 1);
    int dir = (m & 1) ? 1 : -1;
    double pr = (sp.crossing(P, axis, dir) ? a : 1.0) / M;
    if (pr >= 1.0 || rng.uniform01() < pr) {
      sp.move(P, axis, dir);
      if (Space::equal(X, Xhat)) return merge(elapsed);
    }
  }
}

std::vector<int> narrow_coords(const std::vector<std::int64_t>& x) {
  std::vector<int> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<int>(x[i]);
  return out;
}

template <class Space, class Pos>
Estimate one_point_impl(const Space& sp, const Pos& start, double t,
                        const InitialProfile& rho0, std::int64_t replicas,
                        std::uint64_t seed) {
  MeanVar mv;
  for (std::int64_t r = 0; r < replicas; ++r) {
    Philox rng = make_stream(seed, kPurposeOnePoint, static_cast<std::uint64_t>(r));
    Pos p = start;
    sp.advance(p, t, rng);
    mv.add(rho0(sp.u1(p)));
  }
  return {mv.mean(), mv.stderr_mean(), replicas};
}

template <class Space, class Pos>
Estimate two_point_impl(const Space& sp, const Pos& x0, const Pos& y0, double t, double s,
                        const MembraneRates& rates, const InitialProfile& rho0,
                        std::int64_t replicas, std::uint64_t seed) {
  MeanVar mv;
  for (std::int64_t r = 0; r < replicas; ++r) {
    Philox rng = make_stream(seed, kPurposeTwoPoint, static_cast<std::uint64_t>(r));
    Pos X = x0, Xhat = y0;
    sp.advance(X, t - s, rng);
    PairOutcome po = run_pair(sp, X, Xhat, s, rates, rng);
    double zx = rho0(sp.u1(X));
    mv.add(po.met ? zx : zx * rho0(sp.u1(Xhat)));
  }
  return {mv.mean(), mv.stderr_mean(), replicas};
}

// First visit to the origin within max_steps steps, 1-based; kNoHit if none.
// Specialized loops below pack coordinates into biased uint16 lanes of one
// 64-bit word; positions stay far inside lane range, so full-width add and
// subtract never carry across lanes.
constexpr std::uint64_t kBias = 0x8000800080008000ull;

std::uint64_t pack_lanes(const std::vector<std::int64_t>& x) {
  std::uint64_t p = kBias;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (std::llabs(x[i]) > 8192) throw std::invalid_argument("start too far for packed walk");
    p += static_cast<std::uint64_t>(x[i]) << (16 * i);
  }
  return p;
}

std::uint64_t first_hit_d4(std::uint64_t pos, std::uint64_t max_steps, Philox& rng) {
  static const std::uint64_t delta[8] = {
      1ull,       static_cast<std::uint64_t>(-1ll),
      1ull << 16, static_cast<std::uint64_t>(-(1ll << 16)),
      1ull << 32, static_cast<std::uint64_t>(-(1ll << 32)),
      1ull << 48, static_cast<std::uint64_t>(-(1ll << 48)),
  };
  std::uint64_t step = 0;
  while (step < max_steps) {
    std::uint64_t r = rng();
    int take = static_cast<int>(std::min<std::uint64_t>(21, max_steps - step));
    for (int i = 0; i < take; ++i) {
      pos += delta[r & 7];
      r >>= 3;
      ++step;
      if (pos == kBias) return step;
    }
  }
  return kNoHit;
}

std::uint64_t first_hit_d3(std::uint64_t pos, std::uint64_t max_steps, Philox& rng) {
  static const std::uint64_t delta[6] = {
      1ull,       static_cast<std::uint64_t>(-1ll),
      1ull << 16, static_cast<std::uint64_t>(-(1ll << 16)),
      1ull << 32, static_cast<std::uint64_t>(-(1ll << 32)),
  };
  // lane 3 is a dead lane pinned at the bias; borrows never reach it because
  // active lanes never underflow.
  std::uint64_t step = 0;
  while (step < max_steps) {
    std::uint64_t r = rng();
    for (int i = 0; i < 8 && step < max_steps; ++i) {
      unsigned c = static_cast<unsigned>(r & 0xFF);
      r >>= 8;
      if (c >= 252) continue;  // rejected chunk keeps directions exactly uniform
      pos += delta[c % 6];
      ++step;
      if (pos == kBias) return step;
    }
  }
  return kNoHit;
}

std::uint64_t first_hit_d1(std::int64_t pos, std::uint64_t max_steps, Philox& rng) {
  std::uint64_t step = 0;
  while (step < max_steps) {
    std::uint64_t r = rng();
    int take = static_cast<int>(std::min<std::uint64_t>(64, max_steps - step));
    for (int i = 0; i < take; ++i) {
      pos += (r & 1) ? 1 : -1;
      r >>= 1;
      ++step;
      if (pos == 0) return step;
    }
  }
  return kNoHit;
}

std::uint64_t first_hit_generic(int dim, std::vector<std::int64_t> pos,
                                std::uint64_t max_steps, Philox& rng) {
  auto at_origin = [&] {
    for (std::int64_t c : pos)
      if (c != 0) return false;
    return true;
  };
  for (std::uint64_t step = 1; step <= max_steps; ++step) {
    std::uint64_t slot = rng.bounded(2 * static_cast<std::uint64_t>(dim));
    pos[static_cast<std::size_t>(slot >> 1)] += (slot & 1) ? 1 : -1;
    if (at_origin()) return step;
  }
  return kNoHit;
}

std::uint64_t first_hit_step(int dim, const std::vector<std::int64_t>& start,
                             std::uint64_t max_steps, Philox& rng) {
  if (dim == 1) return first_hit_d1(start[0], max_steps, rng);
  if (dim == 3) {
    bool near = true;
    for (std::int64_t c : start) near = near && std::llabs(c) <= 8192;
    if (near) return first_hit_d3(pack_lanes(start), max_steps, rng);
  }
  if (dim == 4) {
    bool near = true;
    for (std::int64_t c : start) near = near && std::llabs(c) <= 8192;
    if (near) return first_hit_d4(pack_lanes(start), max_steps, rng);
  }
  return first_hit_generic(dim, start, max_steps, rng);
}

// Tail of the return-time distribution past n steps, from the local CLT
// envelope of the on-diagonal transition probabilities, with a 1.5 margin.
double residual_bound(int dim, std::uint64_t n) {
  if (n == 0) return 1.0;
  double nn = static_cast<double>(n);
  if (dim == 1) return 1.5 * std::sqrt(2.0 / (std::numbers::pi * nn));
  if (dim == 2) return std::numeric_limits<double>::infinity();
  double half = dim / 2.0;
  return 1.5 * std::pow(dim / (2.0 * std::numbers::pi), half) *
         std::pow(nn, 1.0 - half) / (half - 1.0);
}

}  // namespace

Jump next_jump(const WalkD& w, const MembraneRates& rates, Philox& rng) {
  rates.validate();
  int d = static_cast<int>(w.coords.size());
  if (d < 1) throw std::invalid_argument("walk needs at least one coordinate");
  double a = rates.membrane_rate();
  std::int64_t x0 = w.coords[0];
  bool slow_up = (x0 == 0), slow_down = (x0 == 1);
  double total = 2.0 * d + ((slow_up || slow_down) ? a - 1.0 : 0.0);
  double s = static_cast<double>(rates.scale);
  Jump out;
  out.dt = rng.exponential(total * s * s);
  out.state = w;
  double u = rng.uniform01() * total;
  double up_rate = slow_up ? a : 1.0;
  double down_rate = slow_down ? a : 1.0;
  if (u < up_rate) {
    out.state.coords[0] += 1;
    return out;
  }
  u -= up_rate;
  if (u < down_rate) {
    out.state.coords[0] -= 1;
    return out;
  }
  u -= down_rate;
  int slot = std::min(static_cast<int>(u), 2 * d - 3);
  out.state.coords[static_cast<std::size_t>(1 + slot / 2)] += (slot % 2) ? -1 : 1;
  return out;
}

WalkD step_walk(WalkD w, double t, const MembraneRates& rates, Philox& rng) {
  rates.validate();
  if (w.coords.empty()) throw std::invalid_argument("walk needs at least one coordinate");
  FreeSpace sp{static_cast<int>(w.coords.size()), &rates};
  sp.advance(w.coords, t, rng);
  return w;
}

std::int64_t sample_walk_1d(std::int64_t start, double t, const MembraneRates& rates,
                            Philox& rng) {
  rates.validate();
  double T = micro_time(t, rates);
  double M = headroom(rates);
  return run_steps_1d(start, poisson(2.0 * M * T, rng), rates.membrane_rate(), M, rng);
}

std::int64_t step_walk_torus(std::int64_t site, double t, const BoxGeometry& geom,
                             const MembraneRates& rates, Philox& rng) {
  rates.validate();
  TorusSpace sp{&geom, &rates};
  sp.advance(site, t, rng);
  return site;
}

Estimate one_point_function(const std::vector<std::int64_t>& x, double t,
                            const MembraneRates& rates, const InitialProfile& rho0,
                            std::int64_t replicas, std::uint64_t seed,
                            const BoxGeometry* torus) {
  rates.validate();
  if (replicas < 1) throw std::invalid_argument("replicas must be >= 1");
  if (x.empty()) throw std::invalid_argument("site needs at least one coordinate");
  if (torus) {
    TorusSpace sp{torus, &rates};
    return one_point_impl(sp, torus->index_of(narrow_coords(x)), t, rho0, replicas, seed);
  }
  FreeSpace sp{static_cast<int>(x.size()), &rates};
  return one_point_impl(sp, x, t, rho0, replicas, seed);
}

Estimate two_point_function(const std::vector<std::int64_t>& x,
                            const std::vector<std::int64_t>& y, double t, double s,
                            const MembraneRates& rates, const InitialProfile& rho0,
                            std::int64_t replicas, std::uint64_t seed,
                            const BoxGeometry* torus) {
  rates.validate();
  if (replicas < 1) throw std::invalid_argument("replicas must be >= 1");
  if (x.size() != y.size() || x.empty())
    throw std::invalid_argument("sites must share a dimension");
  if (!(s >= 0.0) || s > t) throw std::invalid_argument("need 0 <= s <= t");
  if (torus) {
    TorusSpace sp{torus, &rates};
    return two_point_impl(sp, torus->index_of(narrow_coords(x)),
                          torus->index_of(narrow_coords(y)), t, s, rates, rho0, replicas,
                          seed);
  }
  FreeSpace sp{static_cast<int>(x.size()), &rates};
  return two_point_impl(sp, x, y, t, s, rates, rho0, replicas, seed);
}

CoalescingPair run_coalescing_pair(const std::vector<std::int64_t>& x,
                                   const std::vector<std::int64_t>& y, double t_total,
                                   double freeze, const MembraneRates& rates,
                                   Philox& rng) {
  rates.validate();
  if (x.size() != y.size() || x.empty())
    throw std::invalid_argument("sites must share a dimension");
  if (!(freeze >= 0.0) || freeze > t_total)
    throw std::invalid_argument("need 0 <= freeze <= total time");
  FreeSpace sp{static_cast<int>(x.size()), &rates};
  FreeSpace::Pos X = x, Xhat = y;
  sp.advance(X, freeze, rng);
  PairOutcome po = run_pair(sp, X, Xhat, t_total - freeze, rates, rng);
  CoalescingPair out;
  out.walker = WalkD{std::move(X)};
  out.frozen_walk = WalkD{std::move(Xhat)};
  out.freeze_until = freeze;
  out.met = po.met;
  out.meet_time =
      po.met ? freeze + po.meet_epoch : std::numeric_limits<double>::infinity();
  return out;
}

double meeting_time_sample(const std::vector<std::int64_t>& x,
                           const std::vector<std::int64_t>& y,
                           const MembraneRates& rates, double s, double horizon,
                           Philox& rng) {
  if (!(horizon > 0.0)) throw std::invalid_argument("horizon must be positive");
  if (!(s >= 0.0)) throw std::invalid_argument("freeze time must be >= 0");
  if (s > horizon) return std::numeric_limits<double>::infinity();
  return run_coalescing_pair(x, y, horizon, s, rates, rng).meet_time;
}

CensoredEstimate gamma_d(int dim, std::uint64_t horizon_steps, std::int64_t replicas,
                         std::uint64_t seed) {
  if (dim < 1) throw std::invalid_argument("dimension must be >= 1");
  if (replicas < 1) throw std::invalid_argument("replicas must be >= 1");
  std::vector<std::int64_t> e0(static_cast<std::size_t>(dim), 0);
  e0[0] = 1;
  MeanVar mv;
  for (std::int64_t r = 0; r < replicas; ++r) {
    Philox rng = make_stream(seed, kPurposeGamma, static_cast<std::uint64_t>(r));
    // first step leaves the origin; by symmetry it may as well go to e0
    std::uint64_t h = horizon_steps == 0 ? kNoHit : first_hit_step(dim, e0, horizon_steps - 1, rng);
    mv.add(h == kNoHit ? 0.0 : 1.0);
  }
  CensoredEstimate out;
  out.value = mv.mean();
  out.std_error = mv.stderr_mean();
  out.residual_bound = residual_bound(dim, horizon_steps);
  out.censored_fraction = 1.0 - mv.mean();
  out.replicas = replicas;
  out.horizon_steps = horizon_steps;
  return out;
}

std::vector<double> gamma_curve(int dim, const std::vector<std::uint64_t>& horizons,
                                std::int64_t replicas, std::uint64_t seed) {
  if (horizons.empty()) return {};
  for (std::size_t i = 1; i < horizons.size(); ++i)
    if (horizons[i] <= horizons[i - 1])
      throw std::invalid_argument("horizons must be strictly increasing");
  std::vector<std::int64_t> e0(static_cast<std::size_t>(dim), 0);
  e0[0] = 1;
  std::uint64_t hmax = horizons.back();
  std::vector<std::int64_t> hits(horizons.size(), 0);
  for (std::int64_t r = 0; r < replicas; ++r) {
    Philox rng = make_stream(seed, kPurposeGamma, static_cast<std::uint64_t>(r));
    std::uint64_t h = hmax == 0 ? kNoHit : first_hit_step(dim, e0, hmax - 1, rng);
    if (h == kNoHit) continue;
    std::uint64_t total = h + 1;
    for (std::size_t i = 0; i < horizons.size(); ++i)
      if (total <= horizons[i]) ++hits[i];
  }
  std::vector<double> est(horizons.size());
  for (std::size_t i = 0; i < horizons.size(); ++i)
    est[i] = static_cast<double>(hits[i]) / static_cast<double>(replicas);
  return est;
}

CensoredEstimate hitting_prob_Gamma(const std::vector<std::int64_t>& z,
                                    std::uint64_t horizon_steps, std::int64_t replicas,
                                    std::uint64_t seed) {
  if (z.empty()) throw std::invalid_argument("point needs at least one coordinate");
  if (replicas < 1) throw std::invalid_argument("replicas must be >= 1");
  int dim = static_cast<int>(z.size());
  bool at_origin = std::all_of(z.begin(), z.end(), [](std::int64_t c) { return c == 0; });
  MeanVar mv;
  for (std::int64_t r = 0; r < replicas; ++r) {
    if (at_origin) {
      mv.add(1.0);
      continue;
    }
    Philox rng = make_stream(seed, kPurposeGammaHit, static_cast<std::uint64_t>(r));
    mv.add(first_hit_step(dim, z, horizon_steps, rng) == kNoHit ? 0.0 : 1.0);
  }
  CensoredEstimate out;
  out.value = mv.mean();
  out.std_error = mv.stderr_mean();
  out.residual_bound = at_origin ? 0.0 : residual_bound(dim, horizon_steps);
  out.censored_fraction = 1.0 - mv.mean();
  out.replicas = replicas;
  out.horizon_steps = horizon_steps;
  return out;
}

std::string estimator_csv_header() {
  return "op,params_hash,estimate,std_error,replicas,horizon,censored_fraction\n";
}

std::string estimator_csv_row(const std::string& op, std::uint64_t params_hash,
                              double estimate, double std_error, std::int64_t replicas,
                              double horizon, double censored_fraction) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s,%016llx,%.10g,%.10g,%lld,%.10g,%.10g\n", op.c_str(),
                static_cast<unsigned long long>(params_hash), estimate, std_error,
                static_cast<long long>(replicas), horizon, censored_fraction);
  return buf;
}

}  // namespace slowvoter
