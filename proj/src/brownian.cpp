#include "slowvoter/brownian.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "slowvoter/stats.hpp"

namespace slowvoter {

namespace {

constexpr std::uint64_t kPurposeSnapping = 0x5bb00001ull;
constexpr std::uint64_t kPurposeInvarWalk = 0x5bb00002ull;
constexpr std::uint64_t kPurposeInvarCont = 0x5bb00003ull;

// Terminal of Brownian motion from a > 0, conditioned to avoid 0 on [0, t].
// Density on y > 0 proportional to phi_t(y-a) - phi_t(y+a)
//                              = phi_t(y) e^{-a^2/2t} 2 sinh(a y / t).
//
// Far from the origin (a/sqrt(t) >= 1/2): propose N(a, t), accept y > 0 with
// probability 1 - e^{-2 a y / t}; per-proposal acceptance is the no-hit
// probability, >= 0.38 on this branch.
//
// Near the origin the rejection starves, so expand the sinh: the target is a
// mixture over k >= 0 of sqrt(2 t Gamma(k+1)) laws with weights
// lambda^k k! / (2k+1)!, lambda = 2 a^2 / t <= 1/2. The series is exact and
// k = 0 (the Rayleigh component) carries all but O(lambda) of the mass.
double avoid_zero_terminal(double a, double t, Philox& rng) {
  if (a * a >= 0.25 * t) {
    for (;;) {
      double y = a + std::sqrt(t) * rng.normal();
      if (y <= 0.0) continue;
      if (rng.uniform01() < -std::expm1(-2.0 * a * y / t)) return y;
    }
  }
  double lambda = 2.0 * a * a / t;
  double weights[32];
  double total = 0.0;
  int terms = 0;
  double w = 1.0;  // lambda^k k! / (2k+1)! at k = 0
  while (terms < 32) {
    weights[terms] = w;
    total += w;
    ++terms;
    double k = static_cast<double>(terms);
    w *= lambda * k / ((2.0 * k) * (2.0 * k + 1.0));
    if (w < total * 1e-18) break;
  }
  double target = rng.uniform01() * total;
  int pick = 0;
  double acc = 0.0;
  for (int k = 0; k < terms; ++k) {
    acc += weights[k];
    pick = k;
    if (target <= acc) break;
  }
  double g = 0.0;  // Gamma(pick + 1) as a sum of unit exponentials
  for (int i = 0; i <= pick; ++i) g += rng.exponential(1.0);
  return std::sqrt(2.0 * t * g);
}

}  // namespace

void SignedHalfLinePoint::validate() const {
  if (!std::isfinite(value)) throw std::invalid_argument("half-line point must be finite");
  if (value > 0.0 && side != Side::kPlus)
    throw std::invalid_argument("positive value labelled minus");
  if (value < 0.0 && side != Side::kMinus)
    throw std::invalid_argument("negative value labelled plus");
}

SignedHalfLinePoint half_line_point(double value) {
  if (value == 0.0)
    throw std::invalid_argument("value 0 needs an explicit side label");
  return {value, value > 0.0 ? Side::kPlus : Side::kMinus};
}

BetaRegime regime_for_beta(double beta) {
  if (beta < 0.0) throw std::invalid_argument("beta must be >= 0");
  if (beta < 1.0) return BetaRegime::kSub;
  if (beta == 1.0) return BetaRegime::kCritical;
  return BetaRegime::kSuper;
}

const char* regime_name(BetaRegime regime) {
  switch (regime) {
    case BetaRegime::kSub: return "sub";
    case BetaRegime::kCritical: return "critical";
    case BetaRegime::kSuper: return "super";
  }
  return "?";
}

void SnappingParams::validate() const {
  if (regime == BetaRegime::kCritical && !(alpha > 0.0))
    throw std::invalid_argument("critical regime needs alpha > 0");
  if (!(alpha >= 0.0)) throw std::invalid_argument("alpha must be >= 0");
}

BMPathSample sample_bm_with_local_time(double u, double t, Philox& rng) {
  if (!(t > 0.0)) throw std::invalid_argument("time must be positive");
  double a = std::fabs(u);
  double tau = 0.0;
  if (a > 0.0) {
    double z = 0.0;
    while (z == 0.0) z = rng.normal();
    tau = (a / z) * (a / z);
  }
  if (tau >= t) return {avoid_zero_terminal(a, t, rng), 0.0};

  // Hit at tau; on the remainder (|B|, L) has the law of (M - B, M).
  double s = t - tau;
  double b = std::sqrt(s) * rng.normal();
  double u01 = 1.0 - rng.uniform01();  // in (0, 1]
  double m = 0.5 * (b + std::sqrt(b * b - 2.0 * s * std::log(u01)));
  return {m - b, m};
}

double snapping_crossing_weight(double alpha, double local_time) {
  return 0.5 * -std::expm1(-2.0 * alpha * local_time);
}

SnappingSample sample_snapping_out(SignedHalfLinePoint u, double t, double alpha,
                                   Philox& rng) {
  u.validate();
  if (!(alpha >= 0.0)) throw std::invalid_argument("alpha must be >= 0");
  BMPathSample path = sample_bm_with_local_time(u.value, t, rng);
  bool crossed = rng.uniform01() < snapping_crossing_weight(alpha, path.local_time_at_0);
  Side side = crossed ? opposite(u.side) : u.side;
  double sgn = side == Side::kPlus ? 1.0 : -1.0;
  return {{sgn * path.terminal, side}, path.local_time_at_0, crossed};
}

Estimate snapping_out_expectation(const std::function<double(SignedHalfLinePoint)>& f,
                                  SignedHalfLinePoint u, double t, double alpha,
                                  std::int64_t replicas, std::uint64_t seed) {
  u.validate();
  if (!(t > 0.0)) throw std::invalid_argument("time must be positive");
  if (!(alpha >= 0.0)) throw std::invalid_argument("alpha must be >= 0");
  if (replicas < 1) throw std::invalid_argument("replicas must be >= 1");
  MeanVar acc;
  for (std::int64_t r = 0; r < replicas; ++r) {
    Philox rng = make_stream(seed, kPurposeSnapping, static_cast<std::uint64_t>(r));
    BMPathSample path = sample_bm_with_local_time(u.value, t, rng);
    double w = snapping_crossing_weight(alpha, path.local_time_at_0);
    SignedHalfLinePoint same{u.signum() * path.terminal, u.side};
    SignedHalfLinePoint far{-u.signum() * path.terminal, opposite(u.side)};
    double fs = f(same);
    acc.add(fs + w * (f(far) - fs));
  }
  return {acc.mean(), acc.stderr_mean(), replicas};
}

SignedHalfLinePoint sample_B_beta(SignedHalfLinePoint u, double t,
                                  const SnappingParams& params, Philox& rng) {
  u.validate();
  params.validate();
  if (!(t >= 0.0)) throw std::invalid_argument("time must be >= 0");
  if (t == 0.0) return u;
  switch (params.regime) {
    case BetaRegime::kSub: {
      double v = u.value + std::sqrt(t) * rng.normal();
      Side side = v > 0.0 ? Side::kPlus : (v < 0.0 ? Side::kMinus : u.side);
      return {v, side};
    }
    case BetaRegime::kSuper: {
      double mag = std::fabs(u.value + std::sqrt(t) * rng.normal());
      return {u.signum() * mag, u.side};
    }
    case BetaRegime::kCritical:
      return sample_snapping_out(u, t, params.alpha, rng).point;
  }
  throw std::logic_error("unreachable");
}

std::vector<double> sample_W(const std::vector<double>& u, Side membrane_side,
                             double t, const SnappingParams& params, Philox& rng) {
  if (u.empty()) throw std::invalid_argument("point must have >= 1 coordinate");
  if (!(t >= 0.0)) throw std::invalid_argument("time must be >= 0");
  SignedHalfLinePoint u1 = u[0] == 0.0 ? SignedHalfLinePoint{0.0, membrane_side}
                                       : half_line_point(u[0]);
  std::vector<double> out(u.size());
  out[0] = sample_B_beta(u1, 2.0 * t, params, rng).value;
  double sd = std::sqrt(2.0 * t);
  for (std::size_t j = 1; j < u.size(); ++j) out[j] = u[j] + sd * rng.normal();
  return out;
}

std::vector<double> sample_W(const std::vector<double>& u, double t,
                             const SnappingParams& params, Philox& rng) {
  if (!u.empty() && u[0] == 0.0)
    throw std::invalid_argument("coordinate 1 at the membrane needs a side label");
  return sample_W(u, Side::kPlus, t, params, rng);
}

double invariance_distance(SignedHalfLinePoint u, double t, const MembraneRates& rates,
                           const SnappingParams& params, std::int64_t replicas,
                           std::uint64_t seed) {
  u.validate();
  params.validate();
  rates.validate();
  if (!(t > 0.0)) throw std::invalid_argument("time must be positive");
  if (replicas < 1000) throw std::invalid_argument("need >= 1000 replicas");
  if (regime_for_beta(rates.beta) != params.regime)
    throw std::invalid_argument("regime does not match rates.beta");

  double n = static_cast<double>(rates.scale);
  std::int64_t x0;
  if (u.value > 0.0)
    x0 = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::floor(u.value * n)));
  else if (u.value < 0.0)
    x0 = static_cast<std::int64_t>(std::floor(u.value * n));
  else
    x0 = u.side == Side::kPlus ? 1 : -1;

  std::vector<double> walk(static_cast<std::size_t>(replicas));
  std::vector<double> cont(static_cast<std::size_t>(replicas));
  for (std::int64_t r = 0; r < replicas; ++r) {
    Philox wr = make_stream(seed, kPurposeInvarWalk, static_cast<std::uint64_t>(r));
    walk[static_cast<std::size_t>(r)] =
        static_cast<double>(sample_walk_1d(x0, t, rates, wr)) / n;
    Philox cr = make_stream(seed, kPurposeInvarCont, static_cast<std::uint64_t>(r));
    cont[static_cast<std::size_t>(r)] = sample_B_beta(u, 2.0 * t, params, cr).value;
  }
  return ks_two_sample(walk, cont);
}

std::string sample_csv_header() { return "op,u,t,regime,value,local_time\n"; }

std::string sample_csv_row(const std::string& op, double u, double t,
                           BetaRegime regime, double value, double local_time) {
  char buf[192];
  std::snprintf(buf, sizeof(buf), "%s,%.10g,%.10g,%s,%.10g,%.10g\n", op.c_str(), u, t,
                regime_name(regime), value, local_time);
  return buf;
}

}  // namespace slowvoter
