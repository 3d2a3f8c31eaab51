#include "slowvoter/lattice.hpp"

#include <sstream>

namespace slowvoter {

namespace {

constexpr std::uint64_t kPurposeInit = 0x1a771ce0;
constexpr std::uint64_t kPurposeSim = 0x1a771ce1;

// Returns (axis, dir) of the directed torus move x -> y, or throws.
std::pair<int, int> neighbor_move(const BoxGeometry& geom,
                                  const std::vector<int>& x,
                                  const std::vector<int>& y) {
  if (static_cast<int>(x.size()) != geom.dim() || x.size() != y.size())
    throw std::invalid_argument("coordinate dimension mismatch");
  int axis = -1, dir = 0;
  for (int i = 0; i < geom.dim(); ++i) {
    int d = y[i] - x[i];
    if (d == 0) continue;
    int e = geom.extent(i);
    int wrapped_plus = -(e - 1), wrapped_minus = e - 1;
    int step;
    if (d == 1 || d == wrapped_plus)
      step = 1;
    else if (d == -1 || d == wrapped_minus)
      step = -1;
    else
      throw std::invalid_argument("sites are not torus neighbours");
    if (axis != -1) throw std::invalid_argument("sites are not torus neighbours");
    axis = i;
    dir = step;
  }
  if (axis == -1) throw std::invalid_argument("sites coincide");
  return {axis, dir};
}

}  // namespace

double bond_rate(const MembraneRates& rates, const BoxGeometry& geom,
                 const std::vector<int>& x, const std::vector<int>& y) {
  rates.validate();
  auto [axis, dir] = neighbor_move(geom, x, y);
  // The wrap move between hi and lo never joins coordinates 0 and 1, so the
  // membrane test only needs the non-wrapped step.
  bool wraps = (dir > 0 && x[axis] == geom.hi(axis)) ||
               (dir < 0 && x[axis] == geom.lo(axis));
  if (!wraps && axis == 0 && ((dir > 0 && x[0] == 0) || (dir < 0 && x[0] == 1)))
    return rates.membrane_rate();
  return 1.0;
}

void flip(LatticeConfig& config, const std::vector<int>& x,
          const std::vector<int>& y) {
  const auto& geom = config.geometry();
  neighbor_move(geom, x, y);
  config.set(geom.index_of(x), config.get(geom.index_of(y)));
}

LatticeConfig sample_initial(const BoxGeometry& geom,
                             const InitialProfile& rho0, int scale,
                             std::uint64_t seed) {
  if (scale < 1) throw std::invalid_argument("scale must be >= 1");
  LatticeConfig cfg(geom);
  Philox rng = make_stream(seed, kPurposeInit, 0);
  for (std::int64_t i = 0; i < geom.site_count(); ++i) {
    double u1 = static_cast<double>(geom.coord(i, 0)) / scale;
    cfg.set(i, rng.uniform01() < rho0(u1));
  }
  return cfg;
}

VoterEngine::VoterEngine(BoxGeometry geom, MembraneRates rates)
    : geom_(std::move(geom)), rates_(rates) {
  rates_.validate();
  for (std::int64_t i = 0; i < geom_.site_count(); ++i) {
    int c = geom_.coord(i, 0);
    if (c == 0) plane0_.push_back(i);
    if (c == 1) plane1_.push_back(i);
  }
  membrane_count_ = static_cast<std::int64_t>(plane0_.size() + plane1_.size());
  bulk_count_ = 2 * geom_.dim() * geom_.site_count() - membrane_count_;
  membrane_rate_ = rates_.membrane_rate();
  double n2 = static_cast<double>(rates_.scale) * rates_.scale;
  double bulk_rate = static_cast<double>(bulk_count_);
  double mem_rate = membrane_rate_ * static_cast<double>(membrane_count_);
  total_rate_ = n2 * (bulk_rate + mem_rate);
  if (!std::isfinite(total_rate_) || total_rate_ <= 0.0 || total_rate_ > 1e18)
    throw std::invalid_argument("total event rate out of range");
  bulk_share_ = bulk_rate / (bulk_rate + mem_rate);
}

std::pair<std::int64_t, std::int64_t> VoterEngine::pick_bond(Philox& rng) const {
  int d = geom_.dim();
  if (rng.uniform01() < bulk_share_) {
    // Uniform over bulk slots by rejection from all 2d*S directed slots.
    while (true) {
      std::uint64_t s = rng.bounded(
          static_cast<std::uint64_t>(geom_.site_count()) * (2 * d));
      std::int64_t site = static_cast<std::int64_t>(s / (2 * d));
      int k = static_cast<int>(s % (2 * d));
      int axis = k >> 1, dir = (k & 1) ? 1 : -1;
      if (geom_.crosses_membrane(site, axis, dir)) continue;
      return {site, geom_.neighbor(site, axis, dir)};
    }
  }
  std::uint64_t m = rng.bounded(static_cast<std::uint64_t>(membrane_count_));
  if (m < plane0_.size()) {
    std::int64_t site = plane0_[static_cast<std::size_t>(m)];
    return {site, geom_.neighbor(site, 0, 1)};
  }
  std::int64_t site = plane1_[static_cast<std::size_t>(m - plane0_.size())];
  return {site, geom_.neighbor(site, 0, -1)};
}

VoterEngine::Pick VoterEngine::next_event(Philox& rng) const {
  Pick p;
  p.dt = rng.exponential(total_rate_);
  auto [site, source] = pick_bond(rng);
  p.site = site;
  p.source = source;
  return p;
}

Trajectory simulate(const LatticeConfig& initial, const MembraneRates& rates,
                    const SimulateOptions& options) {
  if (!(options.t_end >= 0.0))
    throw std::invalid_argument("t_end must be >= 0");
  for (std::size_t i = 0; i < options.snapshot_times.size(); ++i) {
    double s = options.snapshot_times[i];
    if (s < 0.0 || s > options.t_end ||
        (i > 0 && s < options.snapshot_times[i - 1]))
      throw std::invalid_argument("snapshot times must ascend within [0, t_end]");
  }
  VoterEngine engine(initial.geometry(), rates);
  Trajectory traj{initial, {}, {}, 0};
  LatticeConfig& cfg = traj.final_config;
  Philox rng = make_stream(options.seed, kPurposeSim, options.replica);

  double t = 0.0;
  std::size_t snap = 0;
  auto capture_until = [&](double horizon) {
    while (snap < options.snapshot_times.size() &&
           options.snapshot_times[snap] <= horizon) {
      traj.snapshots.emplace_back(options.snapshot_times[snap], cfg);
      ++snap;
    }
  };
  while (true) {
    double tn = t + rng.exponential(engine.total_rate());
    capture_until(std::min(tn, options.t_end));
    if (tn > options.t_end) break;
    t = tn;
    auto [site, source] = engine.pick_bond(rng);
    ++traj.event_count;
    bool nv = cfg.get(source);
    if (cfg.get(site) != nv) {
      cfg.set(site, nv);
      if (options.record_events)
        traj.events.push_back(FlipEvent{t, site, source, nv});
    }
  }
  return traj;
}

double empirical_pi(const LatticeConfig& config, int scale,
                    const std::function<double(const std::vector<double>&)>& H) {
  const auto& geom = config.geometry();
  double sum = 0.0;
  std::vector<double> u(static_cast<std::size_t>(geom.dim()));
  for (std::int64_t i = 0; i < geom.site_count(); ++i) {
    if (!config.get(i)) continue;
    for (int a = 0; a < geom.dim(); ++a)
      u[static_cast<std::size_t>(a)] =
          static_cast<double>(geom.coord(i, a)) / scale;
    sum += H(u);
  }
  return sum * std::pow(static_cast<double>(scale), -geom.dim());
}

namespace {

double block_sum(const LatticeConfig& config, const std::vector<int>& x, int k,
                 int sign, bool* clipped, std::int64_t* included) {
  const auto& geom = config.geometry();
  if (k < 0) throw std::invalid_argument("block radius must be >= 0");
  if (static_cast<int>(x.size()) != geom.dim())
    throw std::invalid_argument("coordinate dimension mismatch");
  int d = geom.dim();
  std::vector<int> delta(static_cast<std::size_t>(d), -k);
  if (sign > 0) delta[0] = 0;
  double sum = 0.0;
  std::int64_t n = 0;
  bool clip = false;
  std::vector<int> y(static_cast<std::size_t>(d));
  while (true) {
    bool inside = true;
    for (int i = 0; i < d; ++i) {
      y[static_cast<std::size_t>(i)] = x[static_cast<std::size_t>(i)] +
                                       delta[static_cast<std::size_t>(i)];
      if (y[static_cast<std::size_t>(i)] < geom.lo(i) ||
          y[static_cast<std::size_t>(i)] > geom.hi(i))
        inside = false;
    }
    if (inside) {
      sum += config.get(geom.index_of(y)) ? 1.0 : 0.0;
      ++n;
    } else {
      clip = true;
    }
    int axis = 0;
    for (; axis < d; ++axis) {
      int top = (axis == 0 && sign < 0) ? 0 : k;
      if (delta[static_cast<std::size_t>(axis)] < top) {
        ++delta[static_cast<std::size_t>(axis)];
        break;
      }
      delta[static_cast<std::size_t>(axis)] =
          (axis == 0 && sign > 0) ? 0 : -k;
    }
    if (axis == d) break;
  }
  if (clipped) *clipped = clip;
  *included = n;
  return sum;
}

}  // namespace

double block_average(const LatticeConfig& config, const std::vector<int>& x,
                     int k, bool* clipped) {
  std::int64_t n = 0;
  double sum = block_sum(config, x, k, 0, clipped, &n);
  if (n == 0) throw std::invalid_argument("block has no sites inside the box");
  return sum / static_cast<double>(n);
}

double block_average_halfspace(const LatticeConfig& config,
                               const std::vector<int>& x, int k, int sign,
                               bool* clipped) {
  if (sign == 0) throw std::invalid_argument("sign must be +1 or -1");
  std::int64_t n = 0;
  double sum = block_sum(config, x, k, sign > 0 ? 1 : -1, clipped, &n);
  if (n == 0) throw std::invalid_argument("block has no sites inside the box");
  return sum / static_cast<double>(n);
}

std::string snapshot_csv(const std::string& run_id, double t,
                         const LatticeConfig& config, int scale) {
  const auto& geom = config.geometry();
  std::ostringstream os;
  os << "run_id,t";
  for (int i = 0; i < geom.dim(); ++i) os << ",x_" << (i + 1);
  os << ",occ\n";
  (void)scale;
  for (std::int64_t i = 0; i < geom.site_count(); ++i) {
    os << run_id << ',' << t;
    for (int a = 0; a < geom.dim(); ++a) os << ',' << geom.coord(i, a);
    os << ',' << (config.get(i) ? 1 : 0) << '\n';
  }
  return os.str();
}

std::string events_csv(const std::vector<FlipEvent>& events,
                       const BoxGeometry& geom) {
  std::ostringstream os;
  os << "t";
  for (int i = 0; i < geom.dim(); ++i) os << ",x_" << (i + 1);
  for (int i = 0; i < geom.dim(); ++i) os << ",y_" << (i + 1);
  os << '\n';
  for (const auto& e : events) {
    os << e.t;
    for (int a = 0; a < geom.dim(); ++a) os << ',' << geom.coord(e.site, a);
    for (int a = 0; a < geom.dim(); ++a) os << ',' << geom.coord(e.source, a);
    os << '\n';
  }
  return os.str();
}

}  // namespace slowvoter
