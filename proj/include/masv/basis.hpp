#pragma once

// Fixed basis library for the planar equations of motion.
//
// Equations 1 and 2 (Xddot, Yddot) use nine columns:
//   [damping velocity, F1 sin, F1 cos, F2 sin, F2 cos, F3 sin, F3 cos, F4 sin, F4 cos]
// where the damping velocity is Xdot_G for equation 1 and Ydot_G for equation 2.
// Equation 3 (thetaddot) uses five columns: [thetadot, F1, F2, F3, F4].

#include "masv/types.hpp"

#include <array>
#include <string>

namespace masv {

inline constexpr int kTranslationalColumns = 9;
inline constexpr int kRotationalColumns = 5;

using Vector9 = Eigen::Matrix<double, 9, 1>;
using Vector5 = Eigen::Matrix<double, 5, 1>;

inline int basis_columns(int equation) {
  return equation == 3 ? kRotationalColumns : kTranslationalColumns;
}

inline std::string basis_column_name(int equation, int column) {
  if (equation == 3) {
    return column == 0 ? std::string("thetadot") : "F" + std::to_string(column);
  }
  if (column == 0) return equation == 1 ? "Xdot" : "Ydot";
  const int thruster = (column - 1) / 2 + 1;
  return "F" + std::to_string(thruster) + ((column - 1) % 2 == 0 ? "*sin(theta)" : "*cos(theta)");
}

/// Evaluates one library row for the given equation (1, 2 or 3).
inline Eigen::VectorXd basis_row(int equation, const State& x, const ControlInput& u) {
  Eigen::VectorXd row(basis_columns(equation));
  if (equation == 3) {
    row(0) = x(idx::kThetaDot);
    row.tail<4>() = u;
    return row;
  }
  const double s = std::sin(x(idx::kTheta));
  const double c = std::cos(x(idx::kTheta));
  row(0) = equation == 1 ? x(idx::kXdot) : x(idx::kYdot);
  for (int i = 0; i < 4; ++i) {
    row(1 + 2 * i) = u(i) * s;
    row(2 + 2 * i) = u(i) * c;
  }
  return row;
}

/// Coefficient vectors of the three equations in basis ordering.
struct BasisCoefficients {
  Vector9 w1 = Vector9::Zero();
  Vector9 w2 = Vector9::Zero();
  Vector5 w3 = Vector5::Zero();

  Eigen::VectorXd equation(int eq) const {
    if (eq == 1) return w1;
    if (eq == 2) return w2;
    return w3;
  }
  void set_equation(int eq, const Eigen::VectorXd& w) {
    if (eq == 1) w1 = w;
    else if (eq == 2) w2 = w;
    else w3 = w;
  }
  bool all_finite() const { return w1.allFinite() && w2.allFinite() && w3.allFinite(); }
};

/// Per-thruster sin/cos coefficients of one translational equation, split out of w.
struct TrigCoefficients {
  Vector4 sin_part;
  Vector4 cos_part;
};

inline TrigCoefficients trig_coefficients(const Vector9& w) {
  TrigCoefficients t;
  for (int i = 0; i < 4; ++i) {
    t.sin_part(i) = w(1 + 2 * i);
    t.cos_part(i) = w(2 + 2 * i);
  }
  return t;
}

/// Rows of d(qddot)/du for the basis model at heading theta (3x4).
inline Matrix34 basis_control_map(const BasisCoefficients& w, double theta) {
  const double s = std::sin(theta);
  const double c = std::cos(theta);
  const auto t1 = trig_coefficients(w.w1);
  const auto t2 = trig_coefficients(w.w2);
  Matrix34 b;
  b.row(0) = (t1.sin_part * s + t1.cos_part * c).transpose();
  b.row(1) = (t2.sin_part * s + t2.cos_part * c).transpose();
  b.row(2) = w.w3.tail<4>().transpose();
  return b;
}

/// d/dtheta of basis_control_map.
inline Matrix34 basis_control_map_dtheta(const BasisCoefficients& w, double theta) {
  const double s = std::sin(theta);
  const double c = std::cos(theta);
  const auto t1 = trig_coefficients(w.w1);
  const auto t2 = trig_coefficients(w.w2);
  Matrix34 b;
  b.row(0) = (t1.sin_part * c - t1.cos_part * s).transpose();
  b.row(1) = (t2.sin_part * c - t2.cos_part * s).transpose();
  b.row(2).setZero();
  return b;
}

/// qddot = g(x, u) for the basis expansion.
inline Vector3 basis_accel(const BasisCoefficients& w, const State& x, const ControlInput& u) {
  Vector3 damping{w.w1(0) * x(idx::kXdot), w.w2(0) * x(idx::kYdot), w.w3(0) * x(idx::kThetaDot)};
  return damping + basis_control_map(w, x(idx::kTheta)) * u;
}

}  // namespace masv
