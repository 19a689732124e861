#pragma once

// Planar rigid-body equations of motion for the four-thruster vehicle:
//   M_eff qddot = Q_thr + Q_drag - C qdot,  M_eff = M + M_A.

#include "masv/basis.hpp"
#include "masv/types.hpp"

#include <array>
#include <numbers>

namespace masv {

/// Rotation from the body-fixed frame components to inertial components.
inline Matrix2 rotation_matrix(double theta) {
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  Matrix2 r;
  r << c, -s, s, c;
  return r;
}

inline Matrix2 rotation_matrix_dtheta(double theta) {
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  Matrix2 r;
  r << -s, -c, c, -s;
  return r;
}

/// Translational velocity Jacobian of the COM.
inline Eigen::Matrix<double, 2, 3> com_velocity_jacobian() {
  Eigen::Matrix<double, 2, 3> j;
  j << 1, 0, 0, 0, 1, 0;
  return j;
}

inline Eigen::Matrix<double, 1, 3> angular_velocity_jacobian() {
  return Eigen::Matrix<double, 1, 3>{0.0, 0.0, 1.0};
}

/// Rigid-body mass matrix. The payload is a point mass at the COM, so only the
/// translational entries change.
inline Matrix3 mass_matrix(const VehicleParams& p) {
  const auto jv = com_velocity_jacobian();
  const auto jw = angular_velocity_jacobian();
  return jv.transpose() * p.total_mass() * jv + jw.transpose() * p.inertia_zz * jw;
}

/// Mass matrix as a function of the generalized coordinates. The entries carry
/// no q dependence; this overload exists so the Coriolis formula differentiates
/// a genuine function of q.
inline Matrix3 mass_matrix(const VehicleParams& p, const Vector3& /*q*/) { return mass_matrix(p); }

/// C_ij = sum_k (dM_ij/dq_k - 1/2 dM_jk/dq_i) qdot_k, with dM/dq by central differences.
inline Matrix3 coriolis_matrix(const VehicleParams& p, const Vector3& qdot,
                               const Vector3& q = Vector3::Zero()) {
  constexpr double h = 1e-6;
  std::array<Matrix3, 3> dm;
  for (int k = 0; k < 3; ++k) {
    Vector3 dq = Vector3::Zero();
    dq(k) = h;
    dm[k] = (mass_matrix(p, q + dq) - mass_matrix(p, q - dq)) / (2.0 * h);
  }
  Matrix3 c = Matrix3::Zero();
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      for (int k = 0; k < 3; ++k) {
        c(i, j) += (dm[k](i, j) - 0.5 * dm[i](j, k)) * qdot(k);
      }
    }
  }
  return c;
}

/// Thruster outlet location and unit thrust direction, both in the body frame.
struct Thruster {
  Eigen::Vector2d position;
  Eigen::Vector2d direction;
};

/// Diamond layout. Outlets sit at the corners A, B, C, D of a square of side L.
/// Thrust directions follow the sign pattern of the identified coefficients:
/// opposite corners push along the same diagonal, so equal thrusts cancel.
inline std::array<Thruster, 4> thruster_layout(const VehicleParams& p) {
  const double h = p.thruster_offset / 2.0;
  const double c = std::cos(p.beta);
  const double s = std::sin(p.beta);
  return {{
      {{-h, h}, {-c, -s}},   // A, F1
      {{h, h}, {c, -s}},     // B, F2
      {{h, -h}, {c, s}},     // C, F3
      {{-h, -h}, {-c, s}},   // D, F4
  }};
}

/// Jacobian of a body-fixed point w.r.t. (X_G, Y_G, theta).
inline Eigen::Matrix<double, 2, 3> point_jacobian(const Eigen::Vector2d& body_point, double theta) {
  Eigen::Matrix<double, 2, 3> j;
  j.leftCols<2>().setIdentity();
  j.col(2) = rotation_matrix_dtheta(theta) * body_point;
  return j;
}

/// Generalized force produced by a unit thrust on each thruster (columns), 3x4.
inline Matrix34 control_map(const VehicleParams& p, double theta) {
  const Matrix2 r = rotation_matrix(theta);
  Matrix34 b;
  const auto layout = thruster_layout(p);
  for (int i = 0; i < 4; ++i) {
    b.col(i) = point_jacobian(layout[i].position, theta).transpose() * (r * layout[i].direction);
  }
  return b;
}

inline Matrix34 control_map_dtheta(const VehicleParams& p, double theta) {
  const Matrix2 dr = rotation_matrix_dtheta(theta);
  Matrix34 b = Matrix34::Zero();
  const auto layout = thruster_layout(p);
  // The moment row is r x f in the body frame and does not depend on theta.
  for (int i = 0; i < 4; ++i) b.col(i).head<2>() = dr * layout[i].direction;
  return b;
}

inline GeneralizedForce thruster_generalized_forces(const VehicleParams& p, double theta,
                                                    const ControlInput& u) {
  return GeneralizedForce::from(control_map(p, theta) * u);
}

/// Hemisphere added-mass approximation.
inline Matrix3 added_mass_matrix(const VehicleParams& p) {
  const double r = p.effective_radius;
  const double pi = std::numbers::pi;
  const double translational = 4.0 / 3.0 * pi * r * r * r;
  const double rotational = 0.1 * pi * std::pow(r, 5);
  return p.rho_water * Vector3{translational, translational, rotational}.asDiagonal();
}

/// Linear damping matrix, body frame.
inline Matrix3 drag_matrix(const VehicleParams& p) {
  const double r = p.effective_radius;
  const double pi = std::numbers::pi;
  return p.mu_water * Vector3{4.0 * pi * r, 4.0 * pi * r, 0.04 * pi * r * r}.asDiagonal();
}

inline GeneralizedForce drag_generalized_forces(const VehicleParams& p, const State& x) {
  const Matrix3 d = drag_matrix(p);
  const Matrix2 r = rotation_matrix(x(idx::kTheta));
  Vector3 body_velocity;
  body_velocity.head<2>() = r.transpose() * x.segment<2>(idx::kXdot);
  body_velocity(2) = x(idx::kThetaDot);
  const Vector3 body_drag = -d * body_velocity;
  const Vector3 q = com_velocity_jacobian().transpose() * (r * body_drag.head<2>()) +
                    angular_velocity_jacobian().transpose() * body_drag(2);
  return GeneralizedForce::from(q);
}

inline Matrix3 effective_mass_matrix(const VehicleParams& p) {
  return mass_matrix(p) + added_mass_matrix(p);
}

/// qddot = M_eff^-1 (Q_thr + Q_drag + extra - C qdot).
inline Vector3 eom_accel(const VehicleParams& p, const State& x, const ControlInput& u,
                         const GeneralizedForce& extra = {}) {
  const Matrix3 m_eff = effective_mass_matrix(p);
  const Eigen::LDLT<Matrix3> ldlt(m_eff);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
      m_eff.diagonal().minCoeff() <= 0.0) {
    throw InvalidParameter("effective mass matrix is singular");
  }
  const Vector3 qdot = x.segment<3>(idx::kXdot);
  const Vector3 rhs = control_map(p, x(idx::kTheta)) * u + drag_generalized_forces(p, x).vec() +
                      extra.vec() - coriolis_matrix(p, qdot, x.head<3>()) * qdot;
  return ldlt.solve(rhs);
}

/// xdot = f(x, u).
inline State state_derivative(const VehicleParams& p, const State& x, const ControlInput& u,
                              const GeneralizedForce& extra = {}) {
  State dx;
  dx.head<3>() = x.segment<3>(idx::kXdot);
  dx.tail<3>() = eom_accel(p, x, u, extra);
  return dx;
}

struct StateJacobians {
  Matrix6 dfdx;
  Matrix64 dfdu;
};

/// Closed-form df/dx and df/du of the physics model.
inline StateJacobians state_jacobians(const VehicleParams& p, const State& x,
                                      const ControlInput& u) {
  const double theta = x(idx::kTheta);
  const Matrix3 m_inv = effective_mass_matrix(p).inverse();
  const Matrix3 d = drag_matrix(p);
  const Matrix2 r = rotation_matrix(theta);
  const Matrix2 dr = rotation_matrix_dtheta(theta);
  const Matrix2 d_t = d.topLeftCorner<2, 2>();
  const Eigen::Vector2d v = x.segment<2>(idx::kXdot);

  // Q_drag translational part is -R D Rt v.
  Vector3 dq_dtheta = control_map_dtheta(p, theta) * u;
  dq_dtheta.head<2>() += -(dr * d_t * r.transpose() + r * d_t * dr.transpose()) * v;
  Matrix3 dq_dqdot = Matrix3::Zero();
  dq_dqdot.topLeftCorner<2, 2>() = -r * d_t * r.transpose();
  dq_dqdot(2, 2) = -d(2, 2);

  StateJacobians j;
  j.dfdx.setZero();
  j.dfdx.block<3, 3>(0, 3).setIdentity();
  j.dfdx.block<3, 1>(3, idx::kTheta) = m_inv * dq_dtheta;
  j.dfdx.block<3, 3>(3, 3) = m_inv * dq_dqdot;
  j.dfdu.setZero();
  j.dfdu.bottomRows<3>() = m_inv * control_map(p, theta);
  return j;
}

/// Exact basis-library coefficients of the physics model, in basis ordering.
inline BasisCoefficients true_basis_coefficients(const VehicleParams& p) {
  const Matrix3 m_eff = effective_mass_matrix(p);
  const Matrix3 d = drag_matrix(p);
  const double m_x = m_eff(0, 0);
  const double m_y = m_eff(1, 1);
  const double i_z = m_eff(2, 2);
  const auto layout = thruster_layout(p);

  BasisCoefficients w;
  w.w1(0) = -d(0, 0) / m_x;
  w.w2(0) = -d(1, 1) / m_y;
  w.w3(0) = -d(2, 2) / i_z;
  for (int i = 0; i < 4; ++i) {
    const double fx = layout[i].direction.x();
    const double fy = layout[i].direction.y();
    // X = cos(theta) fx - sin(theta) fy; Y = sin(theta) fx + cos(theta) fy.
    w.w1(1 + 2 * i) = -fy / m_x;
    w.w1(2 + 2 * i) = fx / m_x;
    w.w2(1 + 2 * i) = fx / m_y;
    w.w2(2 + 2 * i) = fy / m_y;
    const Eigen::Vector2d& rb = layout[i].position;
    w.w3(1 + i) = (rb.x() * fy - rb.y() * fx) / i_z;
  }
  return w;
}

inline double kinetic_energy(const VehicleParams& p, const State& x) {
  const Vector3 qdot = x.segment<3>(idx::kXdot);
  return 0.5 * qdot.dot(effective_mass_matrix(p) * qdot);
}

}  // namespace masv
