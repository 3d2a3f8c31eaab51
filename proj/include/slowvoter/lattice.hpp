#pragma once
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "slowvoter/profile.hpp"
#include "slowvoter/rng.hpp"

namespace slowvoter {

// Exchange-rate family: every nearest-neighbour bond carries rate 1 except
// the membrane bonds, the pairs {x, x+e_1} with x_1 = 0, which carry
// alpha * scale^{-beta}.  scale is the lattice parameter N.
struct MembraneRates {
  double alpha = 1.0;
  double beta = 1.0;
  int scale = 1;

  double membrane_rate() const {
    return alpha * std::pow(static_cast<double>(scale), -beta);
  }
  void validate() const {
    if (!(alpha > 0.0)) throw std::invalid_argument("alpha must be positive");
    if (!(beta >= 0.0)) throw std::invalid_argument("beta must be >= 0");
    if (scale < 1) throw std::invalid_argument("scale must be >= 1");
    double a = membrane_rate();
    if (!std::isfinite(a) || a > alpha)
      throw std::invalid_argument("membrane rate out of range");
  }
};

// Periodic box in d dimensions.  Axis i spans lo(i)..hi(i) inclusive; the
// wrap bond hi -> lo is an ordinary rate-1 bond.  Coordinates 0 and 1 along
// the first axis always exist, so the membrane plane sits inside the box.
class BoxGeometry {
 public:
  // Symmetric box: every axis spans -half_width..half_width.
  BoxGeometry(int dim, int half_width) {
    if (dim < 1) throw std::invalid_argument("dim must be >= 1");
    if (half_width < 2) throw std::invalid_argument("half_width must be >= 2");
    lo_.assign(dim, -half_width);
    hi_.assign(dim, half_width);
    init();
  }

  // Explicit per-axis site count (even counts allowed); axis spans
  // -(n/2 - 1) .. n/2 for even n and -(n-1)/2 .. (n-1)/2 for odd n.
  static BoxGeometry with_site_count(int dim, int sites_per_axis) {
    if (dim < 1) throw std::invalid_argument("dim must be >= 1");
    if (sites_per_axis < 4)
      throw std::invalid_argument("need >= 4 sites per axis");
    BoxGeometry g;
    int n = sites_per_axis;
    int lo = n % 2 == 0 ? -(n / 2 - 1) : -(n - 1) / 2;
    g.lo_.assign(dim, lo);
    g.hi_.assign(dim, lo + n - 1);
    g.init();
    return g;
  }

  int dim() const { return static_cast<int>(lo_.size()); }
  int lo(int axis) const { return lo_[axis]; }
  int hi(int axis) const { return hi_[axis]; }
  int extent(int axis) const { return hi_[axis] - lo_[axis] + 1; }
  std::int64_t site_count() const { return count_; }

  std::int64_t index_of(const std::vector<int>& x) const {
    if (static_cast<int>(x.size()) != dim())
      throw std::invalid_argument("coordinate dimension mismatch");
    std::int64_t idx = 0;
    for (int i = 0; i < dim(); ++i) {
      if (x[i] < lo_[i] || x[i] > hi_[i])
        throw std::out_of_range("coordinate outside box");
      idx += static_cast<std::int64_t>(x[i] - lo_[i]) * stride_[i];
    }
    return idx;
  }

  std::vector<int> coords_of(std::int64_t idx) const {
    std::vector<int> x(dim());
    for (int i = 0; i < dim(); ++i)
      x[i] = static_cast<int>((idx / stride_[i]) % extent(i)) + lo_[i];
    return x;
  }

  int coord(std::int64_t idx, int axis) const {
    return static_cast<int>((idx / stride_[axis]) % extent(axis)) + lo_[axis];
  }

  // Neighbour along axis; dir = +1 or -1; wraps around the torus.
  std::int64_t neighbor(std::int64_t idx, int axis, int dir) const {
    int c = coord(idx, axis);
    std::int64_t off = static_cast<std::int64_t>(c - lo_[axis]);
    int e = extent(axis);
    std::int64_t noff = dir > 0 ? (off + 1 == e ? 0 : off + 1)
                                : (off == 0 ? e - 1 : off - 1);
    return idx + (noff - off) * stride_[axis];
  }

  // True when the *directed* move (from, axis, dir) crosses the membrane
  // bond, i.e. runs between coordinate-1 values 0 and 1 without wrapping.
  bool crosses_membrane(std::int64_t from, int axis, int dir) const {
    if (axis != 0) return false;
    int c = coord(from, 0);
    return (dir > 0 && c == 0) || (dir < 0 && c == 1);
  }

  bool operator==(const BoxGeometry& o) const {
    return lo_ == o.lo_ && hi_ == o.hi_;
  }

 private:
  BoxGeometry() = default;
  void init() {
    for (int i = 0; i < dim(); ++i)
      if (lo_[i] > -1 || hi_[i] < 2)
        throw std::invalid_argument("box must contain coordinates -1..2");
    stride_.assign(dim(), 1);
    count_ = 1;
    for (int i = 0; i < dim(); ++i) {
      stride_[i] = count_;
      count_ *= extent(i);
    }
    if (count_ > (std::int64_t(1) << 40))
      throw std::invalid_argument("box too large");
  }

  std::vector<int> lo_, hi_;
  std::vector<std::int64_t> stride_;
  std::int64_t count_ = 0;
};

// Bit-packed occupancy field over a BoxGeometry.
class LatticeConfig {
 public:
  explicit LatticeConfig(BoxGeometry geom)
      : geom_(std::move(geom)),
        words_(static_cast<std::size_t>((geom_.site_count() + 63) / 64), 0) {}

  const BoxGeometry& geometry() const { return geom_; }

  bool get(std::int64_t i) const {
    return (words_[static_cast<std::size_t>(i >> 6)] >> (i & 63)) & 1u;
  }
  void set(std::int64_t i, bool v) {
    std::uint64_t m = std::uint64_t(1) << (i & 63);
    if (v)
      words_[static_cast<std::size_t>(i >> 6)] |= m;
    else
      words_[static_cast<std::size_t>(i >> 6)] &= ~m;
  }

  std::int64_t count_ones() const {
    std::int64_t c = 0;
    for (auto w : words_) c += __builtin_popcountll(w);
    return c;
  }

  bool operator==(const LatticeConfig& o) const {
    return geom_ == o.geom_ && words_ == o.words_;
  }

  // State id for boxes of at most 64 sites (master-equation indexing).
  std::uint64_t as_mask() const {
    if (geom_.site_count() > 64) throw std::logic_error("box exceeds 64 sites");
    return words_[0];
  }

 private:
  BoxGeometry geom_;
  std::vector<std::uint64_t> words_;
};

// Rate of the directed move x -> y (x adopts the value at y).  Throws unless
// x and y are torus neighbours.
double bond_rate(const MembraneRates& rates, const BoxGeometry& geom,
                 const std::vector<int>& x, const std::vector<int>& y);

// In-place voter flip: x adopts y's value.  Throws unless neighbours.
void flip(LatticeConfig& config, const std::vector<int>& x,
          const std::vector<int>& y);

// Product-Bernoulli initial state with marginal rho0(x/N).
LatticeConfig sample_initial(const BoxGeometry& geom,
                             const InitialProfile& rho0, int scale,
                             std::uint64_t seed);

struct FlipEvent {
  double t;
  std::int64_t site;
  std::int64_t source;
  bool new_value;
};

struct SimulateOptions {
  double t_end = 1.0;
  std::uint64_t seed = 0;
  std::uint64_t replica = 0;
  std::vector<double> snapshot_times;  // ascending
  bool record_events = false;
};

struct Trajectory {
  LatticeConfig final_config;
  std::vector<std::pair<double, LatticeConfig>> snapshots;
  std::vector<FlipEvent> events;  // state-changing flips only
  std::uint64_t event_count = 0;  // all clock firings, including no-ops
};

// Two-class composition engine.  The slot layout and the per-event costs are
// configuration independent: the total rate never changes, so event times are
// a Poisson stream at rate scale^2 * (bulk + a * membrane).
class VoterEngine {
 public:
  VoterEngine(BoxGeometry geom, MembraneRates rates);

  double total_rate() const { return total_rate_; }
  std::int64_t bulk_directed_bonds() const { return bulk_count_; }
  std::int64_t membrane_directed_bonds() const { return membrane_count_; }

  // Draw the next event (holding time and directed bond) without touching
  // any configuration.  Exposed for the event-law tests.
  struct Pick {
    double dt;
    std::int64_t site;
    std::int64_t source;
  };
  Pick next_event(Philox& rng) const;

  // Run until t_end; obs(t, site, source, new_value) fires on every
  // state-changing flip.
  template <class Obs>
  void run(LatticeConfig& cfg, double t_end, Philox& rng, Obs&& obs) const {
    double t = 0.0;
    while (true) {
      t += rng.exponential(total_rate_);
      if (t > t_end) break;
      auto [site, source] = pick_bond(rng);
      bool nv = cfg.get(source);
      if (cfg.get(site) != nv) {
        cfg.set(site, nv);
        obs(t, site, source, nv);
      }
    }
  }

  std::pair<std::int64_t, std::int64_t> pick_bond(Philox& rng) const;

 private:
  BoxGeometry geom_;
  MembraneRates rates_;
  std::vector<std::int64_t> plane0_, plane1_;
  std::int64_t bulk_count_ = 0, membrane_count_ = 0;
  double membrane_rate_ = 0.0;
  double bulk_share_ = 1.0;  // bulk class probability
  double total_rate_ = 0.0;
};

Trajectory simulate(const LatticeConfig& initial, const MembraneRates& rates,
                    const SimulateOptions& options);

// N^{-d} sum_x eta(x) H(x / N).
double empirical_pi(const LatticeConfig& config, int scale,
                    const std::function<double(const std::vector<double>&)>& H);

// Mean occupancy over the sup-norm block {y : |y - x|_inf <= k}, divisor
// (2k+1)^d.  Blocks clipped by the box edge are averaged over the
// intersection and reported via *clipped.
double block_average(const LatticeConfig& config, const std::vector<int>& x,
                     int k, bool* clipped = nullptr);

// Half-space variant: y ranges over the block with y_1 >= x_1 (sign > 0) or
// y_1 <= x_1 (sign < 0); divisor (k+1)(2k+1)^{d-1}.
double block_average_halfspace(const LatticeConfig& config,
                               const std::vector<int>& x, int k, int sign,
                               bool* clipped = nullptr);

std::string snapshot_csv(const std::string& run_id, double t,
                         const LatticeConfig& config, int scale);
std::string events_csv(const std::vector<FlipEvent>& events,
                       const BoxGeometry& geom);

}  // namespace slowvoter
