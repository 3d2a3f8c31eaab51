#pragma once
#include <algorithm>
#include <stdexcept>
#include <vector>

namespace slowvoter {

// Macroscopic initial density.  All variants depend on the first coordinate
// only; evaluation clamps to [0,1] by construction.
class InitialProfile {
 public:
  static InitialProfile constant(double c) {
    check01(c);
    InitialProfile p;
    p.kind_ = Kind::kConstant;
    p.a_ = c;
    return p;
  }

  // plus on u1 > 0, minus on u1 <= 0.  Discontinuous: excluded from the
  // Lipschitz class the hydrodynamic statements assume, hence the flag.
  static InitialProfile step(double plus, double minus) {
    check01(plus);
    check01(minus);
    InitialProfile p;
    p.kind_ = Kind::kStep;
    p.a_ = plus;
    p.b_ = minus;
    return p;
  }

  // intercept + slope * u1, clipped to [0,1].
  static InitialProfile ramp(double intercept, double slope) {
    InitialProfile p;
    p.kind_ = Kind::kRamp;
    p.a_ = intercept;
    p.b_ = slope;
    return p;
  }

  // Piecewise-linear interpolation of (u, rho) pairs; clamped outside the
  // table.  u must be strictly increasing, rho within [0,1].
  static InitialProfile tabulated(std::vector<double> u, std::vector<double> rho) {
    if (u.size() != rho.size() || u.size() < 2)
      throw std::invalid_argument("tabulated profile needs >= 2 knots");
    for (std::size_t i = 1; i < u.size(); ++i)
      if (!(u[i] > u[i - 1]))
        throw std::invalid_argument("tabulated knots must increase");
    for (double r : rho) check01(r);
    InitialProfile p;
    p.kind_ = Kind::kTable;
    p.u_ = std::move(u);
    p.rho_ = std::move(rho);
    return p;
  }

  double operator()(double u1) const {
    switch (kind_) {
      case Kind::kConstant: return a_;
      case Kind::kStep: return u1 > 0.0 ? a_ : b_;
      case Kind::kRamp: return std::clamp(a_ + b_ * u1, 0.0, 1.0);
      case Kind::kTable: {
        if (u1 <= u_.front()) return rho_.front();
        if (u1 >= u_.back()) return rho_.back();
        auto it = std::upper_bound(u_.begin(), u_.end(), u1);
        std::size_t i = static_cast<std::size_t>(it - u_.begin());
        double w = (u1 - u_[i - 1]) / (u_[i] - u_[i - 1]);
        return rho_[i - 1] + w * (rho_[i] - rho_[i - 1]);
      }
    }
    return 0.0;
  }

  // Continuous with bounded slope?  False for the step variant.
  bool lipschitz() const { return kind_ != Kind::kStep; }

  bool is_constant() const { return kind_ == Kind::kConstant; }

 private:
  enum class Kind { kConstant, kStep, kRamp, kTable };
  static void check01(double v) {
    if (!(v >= 0.0 && v <= 1.0))
      throw std::invalid_argument("density value outside [0,1]");
  }
  Kind kind_ = Kind::kConstant;
  double a_ = 0.0, b_ = 0.0;
  std::vector<double> u_, rho_;
};

}  // namespace slowvoter
