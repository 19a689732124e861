#pragma once

#include "masv/types.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

namespace masv {

enum class CurveKind { kSine, kSpiral };

inline std::string to_string(CurveKind k) { return k == CurveKind::kSine ? "sine" : "spiral"; }

inline CurveKind curve_kind_from_string(const std::string& s) {
  if (s == "sine") return CurveKind::kSine;
  if (s == "spiral") return CurveKind::kSpiral;
  throw InvalidParameter("unknown curve kind '" + s + "'");
}

/// Parametric reference curve.
///   sine:   X = v0 t,               Y = Y0 sin(omega v0 t)     (omega in rad/m)
///   spiral: X = v0 t - 1 + cos(wt), Y = v0 t + sin(wt)         (omega in rad/s)
struct CurveSpec {
  CurveKind kind = CurveKind::kSine;
  double v0 = 0.05;
  double amplitude = 0.3;
  double omega = 2.0 * std::numbers::pi / 1.5;

  static CurveSpec default_sine() { return {}; }
  static CurveSpec default_spiral() { return {CurveKind::kSpiral, 0.03, 0.0, 0.5}; }
};

inline void validate(const CurveSpec& c) {
  if (!(c.v0 > 0.0) || !(c.amplitude >= 0.0) || !(c.omega > 0.0)) {
    throw InvalidParameter("curve requires v0 > 0, amplitude >= 0, omega > 0");
  }
}

/// Position, velocity and acceleration of the curve at t (no heading).
struct CurveKinematics {
  Eigen::Vector2d pos;
  Eigen::Vector2d vel;
  Eigen::Vector2d acc;
};

inline CurveKinematics curve_kinematics(const CurveSpec& c, double t) {
  CurveKinematics k;
  if (c.kind == CurveKind::kSine) {
    const double rate = c.omega * c.v0;
    const double s = std::sin(rate * t);
    const double co = std::cos(rate * t);
    k.pos = {c.v0 * t, c.amplitude * s};
    k.vel = {c.v0, c.amplitude * rate * co};
    k.acc = {0.0, -c.amplitude * rate * rate * s};
  } else {
    const double w = c.omega;
    const double s = std::sin(w * t);
    const double co = std::cos(w * t);
    k.pos = {c.v0 * t - 1.0 + co, c.v0 * t + s};
    k.vel = {c.v0 - w * s, c.v0 + w * co};
    k.acc = {-w * w * co, -w * w * s};
  }
  return k;
}

/// Reference states with a continuous (unwrapped) heading.
///
/// The unwrap branch is tracked on a fixed grid from t = 0, so queries may come
/// in any order and still agree. The grid cache makes instances unsafe to share
/// across threads.
class ReferenceTrajectory {
 public:
  static constexpr double kGridStep = 0.005;
  static constexpr double kStallSpeed = 1e-12;

  explicit ReferenceTrajectory(CurveSpec curve) : curve_(curve) { validate(curve_); }

  const CurveSpec& curve() const { return curve_; }

  ReferenceState state(double t) const {
    if (t < 0.0) throw InvalidParameter("reference time must be non-negative");
    const auto k = curve_kinematics(curve_, t);
    ReferenceState r;
    r(idx::kX) = k.pos.x();
    r(idx::kY) = k.pos.y();
    r(idx::kXdot) = k.vel.x();
    r(idx::kYdot) = k.vel.y();
    const double speed2 = k.vel.squaredNorm();
    const double branch = branch_heading(t);
    if (speed2 <= kStallSpeed * kStallSpeed) {
      r(idx::kTheta) = branch;
      r(idx::kThetaDot) = 0.0;
    } else {
      r(idx::kTheta) = nearest_branch(std::atan2(k.vel.y(), k.vel.x()), branch);
      r(idx::kThetaDot) = (k.vel.x() * k.acc.y() - k.vel.y() * k.acc.x()) / speed2;
    }
    return r;
  }

  ReferenceState operator()(double t) const { return state(t); }

 private:
  static double nearest_branch(double angle, double near) {
    const double two_pi = 2.0 * std::numbers::pi;
    return angle + two_pi * std::round((near - angle) / two_pi);
  }

  double branch_heading(double t) const {
    const auto index = static_cast<std::size_t>(std::floor(t / kGridStep));
    if (headings_.empty()) {
      const auto k0 = curve_kinematics(curve_, 0.0);
      headings_.push_back(k0.vel.squaredNorm() > kStallSpeed * kStallSpeed
                              ? std::atan2(k0.vel.y(), k0.vel.x())
                              : 0.0);
    }
    while (headings_.size() <= index) {
      const double tk = static_cast<double>(headings_.size()) * kGridStep;
      const auto k = curve_kinematics(curve_, tk);
      const double prev = headings_.back();
      headings_.push_back(k.vel.squaredNorm() > kStallSpeed * kStallSpeed
                              ? nearest_branch(std::atan2(k.vel.y(), k.vel.x()), prev)
                              : prev);
    }
    return headings_[index];
  }

  CurveSpec curve_;
  mutable std::vector<double> headings_;
};

inline ReferenceState reference_state(const CurveSpec& c, double t) {
  return ReferenceTrajectory(c).state(t);
}

/// Largest relative mismatch between the closed-form rates (Xdot, Ydot,
/// thetadot) and central differences of (X, Y, theta) over a 10 s grid.
/// Each channel is normalised by its peak magnitude; an identically-zero
/// channel contributes its absolute error.
inline double reference_derivative_check(const CurveSpec& c, double fd_step = 1e-4,
                                         double span = 10.0, double sample = 0.01) {
  const ReferenceTrajectory ref(c);
  const int n = static_cast<int>(std::round(span / sample));
  std::array<double, 3> worst{0.0, 0.0, 0.0};
  std::array<double, 3> peak{0.0, 0.0, 0.0};
  constexpr std::array<int, 3> pos_ch{idx::kX, idx::kY, idx::kTheta};
  constexpr std::array<int, 3> rate_ch{idx::kXdot, idx::kYdot, idx::kThetaDot};
  for (int i = 0; i <= n; ++i) {
    const double t = fd_step + i * sample;
    const auto plus = ref.state(t + fd_step);
    const auto minus = ref.state(t - fd_step);
    const auto mid = ref.state(t);
    for (int ch = 0; ch < 3; ++ch) {
      const double fd = (plus(pos_ch[ch]) - minus(pos_ch[ch])) / (2.0 * fd_step);
      worst[ch] = std::max(worst[ch], std::abs(fd - mid(rate_ch[ch])));
      peak[ch] = std::max(peak[ch], std::abs(mid(rate_ch[ch])));
    }
  }
  double result = 0.0;
  for (int ch = 0; ch < 3; ++ch) {
    result = std::max(result, peak[ch] > 0.0 ? worst[ch] / peak[ch] : worst[ch]);
  }
  return result;
}

}  // namespace masv
