#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace masv {

using Vector3 = Eigen::Vector3d;
using Vector4 = Eigen::Vector4d;
using Vector6 = Eigen::Matrix<double, 6, 1>;
using Matrix2 = Eigen::Matrix2d;
using Matrix3 = Eigen::Matrix3d;
using Matrix4 = Eigen::Matrix4d;
using Matrix6 = Eigen::Matrix<double, 6, 6>;
using Matrix34 = Eigen::Matrix<double, 3, 4>;
using Matrix64 = Eigen::Matrix<double, 6, 4>;

/// Generalized state x = [X_G, Y_G, theta, Xdot_G, Ydot_G, thetadot].
using State = Vector6;

/// Thrust magnitudes F1..F4 [N].
using ControlInput = Vector4;

/// Desired state with the same ordering as State.
using ReferenceState = Vector6;

namespace idx {
inline constexpr int kX = 0;
inline constexpr int kY = 1;
inline constexpr int kTheta = 2;
inline constexpr int kXdot = 3;
inline constexpr int kYdot = 4;
inline constexpr int kThetaDot = 5;
}  // namespace idx

/// Physical constants of the plant. SI units throughout.
struct VehicleParams {
  double mass = 0.25;               // m [kg]
  double inertia_zz = 0.0045;       // I_zz about the COM [kg m^2]
  double thruster_offset = 0.025;   // L [m]
  double beta = std::numbers::pi / 4.0;  // thrust angle from body x [rad]
  double effective_radius = 0.08;   // R_eff [m]
  double rho_water = 1000.0;        // [kg/m^3]
  double mu_water = 2.0;            // lumped viscous coefficient [Pa s]
  double payload = 0.0;             // point mass at the COM [kg]

  double total_mass() const { return mass + payload; }
};

/// Forces conjugate to (X_G, Y_G, theta).
struct GeneralizedForce {
  double qx = 0.0;
  double qy = 0.0;
  double qtheta = 0.0;

  Vector3 vec() const { return {qx, qy, qtheta}; }
  static GeneralizedForce from(const Vector3& v) { return {v(0), v(1), v(2)}; }
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidParameter : public Error {
 public:
  using Error::Error;
};

class IntegrationBlowup : public Error {
 public:
  IntegrationBlowup(const std::string& what, State last_valid, double time)
      : Error(what), last_valid_(last_valid), time_(time) {}
  const State& last_valid() const { return last_valid_; }
  double time() const { return time_; }

 private:
  State last_valid_;
  double time_;
};

inline void validate(const VehicleParams& p) {
  auto positive = [](double v) { return std::isfinite(v) && v > 0.0; };
  if (!positive(p.mass) || !positive(p.inertia_zz) || !positive(p.thruster_offset) ||
      !positive(p.effective_radius) || !positive(p.rho_water) || !positive(p.mu_water)) {
    throw InvalidParameter("vehicle parameters must be finite and positive");
  }
  if (!std::isfinite(p.payload) || p.payload < 0.0) {
    throw InvalidParameter("payload must be non-negative");
  }
  if (!(p.beta > 0.0 && p.beta < std::numbers::pi / 2.0)) {
    throw InvalidParameter("beta must lie in (0, pi/2)");
  }
}

}  // namespace masv
