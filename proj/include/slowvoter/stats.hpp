#pragma once
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <vector>

namespace slowvoter {

// Streaming mean/variance (Welford).  merge() is exact for disjoint batches,
// so replica loops can aggregate chunk accumulators in a fixed order.
class MeanVar {
 public:
  void add(double x) {
    ++n_;
    double d = x - mean_;
    mean_ += d / static_cast<double>(n_);
    m2_ += d * (x - mean_);
  }
  void merge(const MeanVar& o) {
    if (o.n_ == 0) return;
    if (n_ == 0) { *this = o; return; }
    double nd = static_cast<double>(n_), od = static_cast<double>(o.n_);
    double d = o.mean_ - mean_;
    double tot = nd + od;
    mean_ += d * od / tot;
    m2_ += o.m2_ + d * d * nd * od / tot;
    n_ += o.n_;
  }
  std::size_t count() const { return n_; }
  double mean() const { return mean_; }
  double variance() const { return n_ > 1 ? m2_ / static_cast<double>(n_ - 1) : 0.0; }
  double stderr_mean() const {
    return n_ > 1 ? std::sqrt(variance() / static_cast<double>(n_)) : 0.0;
  }

 private:
  std::size_t n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

inline double phi_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Regularized incomplete gamma P(a,x) (series / continued fraction split).
inline double gamma_p(double a, double x) {
  if (x < 0.0 || a <= 0.0) throw std::invalid_argument("gamma_p domain");
  if (x == 0.0) return 0.0;
  double gln = std::lgamma(a);
  if (x < a + 1.0) {
    double ap = a, sum = 1.0 / a, del = sum;
    for (int i = 0; i < 500; ++i) {
      ap += 1.0;
      del *= x / ap;
      sum += del;
      if (std::fabs(del) < std::fabs(sum) * 1e-15) break;
    }
    return sum * std::exp(-x + a * std::log(x) - gln);
  }
  // Lentz continued fraction for Q(a,x).
  const double tiny = 1e-300;
  double b = x + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
  for (int i = 1; i < 500; ++i) {
    double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < 1e-15) break;
  }
  double q = std::exp(-x + a * std::log(x) - gln) * h;
  return 1.0 - q;
}

// P(chi^2_k > x)
inline double chi_square_tail(double x, int dof) {
  return 1.0 - gamma_p(0.5 * dof, 0.5 * x);
}

// Pearson statistic against expected counts; bins with tiny expectation are
// pooled into their neighbor to keep the approximation honest.
inline double chi_square_p(const std::vector<double>& observed,
                           const std::vector<double>& expected,
                           int extra_constraints = 0) {
  if (observed.size() != expected.size() || observed.empty())
    throw std::invalid_argument("chi_square_p sizes");
  double stat = 0.0;
  int used = 0;
  double pool_o = 0.0, pool_e = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    pool_o += observed[i];
    pool_e += expected[i];
    if (pool_e >= 5.0) {
      stat += (pool_o - pool_e) * (pool_o - pool_e) / pool_e;
      ++used;
      pool_o = pool_e = 0.0;
    }
  }
  if (pool_e > 0.0 && used > 0) {
    stat += (pool_o - pool_e) * (pool_o - pool_e) / pool_e;
  }
  int dof = used - 1 - extra_constraints;
  if (dof < 1) dof = 1;
  return chi_square_tail(stat, dof);
}

// Kolmogorov asymptotic tail Q(lambda) = 2 sum (-1)^{k-1} exp(-2 k^2 lambda^2).
inline double ks_tail(double lambda) {
  if (lambda < 1e-8) return 1.0;
  double sum = 0.0;
  for (int k = 1; k <= 100; ++k) {
    double term = 2.0 * std::exp(-2.0 * k * k * lambda * lambda);
    sum += (k % 2 == 1) ? term : -term;
    if (term < 1e-12) break;
  }
  return std::min(1.0, std::max(0.0, sum));
}

// Two-sample KS distance; both vectors are sorted in place.
inline double ks_two_sample(std::vector<double>& a, std::vector<double>& b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("ks_two_sample empty");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  while (i < a.size() && j < b.size()) {
    double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::fabs(static_cast<double>(i) / na -
                              static_cast<double>(j) / nb));
  }
  return d;
}

inline double ks_two_sample_p(double d, std::size_t na, std::size_t nb) {
  double ne = static_cast<double>(na) * static_cast<double>(nb) /
              static_cast<double>(na + nb);
  double s = std::sqrt(ne);
  return ks_tail((s + 0.12 + 0.11 / s) * d);
}

// One-sample KS against a continuous cdf.
inline double ks_one_sample(std::vector<double>& a,
                            const std::function<double(double)>& cdf) {
  std::sort(a.begin(), a.end());
  double n = static_cast<double>(a.size());
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double f = cdf(a[i]);
    d = std::max(d, std::fabs(f - static_cast<double>(i) / n));
    d = std::max(d, std::fabs(f - static_cast<double>(i + 1) / n));
  }
  return d;
}

inline double ks_one_sample_p(double d, std::size_t n) {
  double s = std::sqrt(static_cast<double>(n));
  return ks_tail((s + 0.12 + 0.11 / s) * d);
}

// Least-squares slope/intercept for y ~ a + b x.
struct LinearFit {
  double intercept = 0.0;
  double slope = 0.0;
};
inline LinearFit fit_line(const std::vector<double>& x,
                          const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw std::invalid_argument("fit_line sizes");
  double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i]; sy += y[i]; sxx += x[i] * x[i]; sxy += x[i] * y[i];
  }
  LinearFit f;
  f.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  f.intercept = (sy - f.slope * sx) / n;
  return f;
}

}  // namespace slowvoter
