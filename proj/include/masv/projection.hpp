#pragma once

// Maps an unconstrained thrust vector to non-negative thrusts producing the same
// generalized force, staying as close as possible to a nominal thrust level:
//
//   min ||F - guess*1||^2   s.t.  B F = B raw,  F >= 0.
//
// The equality is parametrised as F = raw + N z with N an orthonormal basis of
// null(B); the bounds are handled by a primal active-set method in z.

#include "masv/basis.hpp"
#include "masv/dynamics.hpp"

#include <algorithm>
#include <limits>
#include <vector>

namespace masv {

/// Lawson-Hanson non-negative least squares: min ||A x - b|| s.t. x >= 0.
inline Eigen::VectorXd nnls(const Eigen::MatrixXd& a, const Eigen::VectorXd& b,
                            int max_iter = 200, double tol = 1e-14) {
  const Eigen::Index n = a.cols();
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  std::vector<bool> passive(n, false);
  const double scale = std::max(1.0, a.norm() * std::max(1.0, b.norm()));

  auto solve_passive = [&]() {
    std::vector<Eigen::Index> ids;
    for (Eigen::Index j = 0; j < n; ++j) if (passive[j]) ids.push_back(j);
    Eigen::MatrixXd ap(a.rows(), static_cast<Eigen::Index>(ids.size()));
    for (std::size_t k = 0; k < ids.size(); ++k) ap.col(static_cast<Eigen::Index>(k)) = a.col(ids[k]);
    const Eigen::VectorXd zp = ap.completeOrthogonalDecomposition().solve(b);
    Eigen::VectorXd z = Eigen::VectorXd::Zero(n);
    for (std::size_t k = 0; k < ids.size(); ++k) z(ids[k]) = zp(static_cast<Eigen::Index>(k));
    return z;
  };

  for (int it = 0; it < max_iter; ++it) {
    const Eigen::VectorXd grad = a.transpose() * (b - a * x);
    Eigen::Index best = -1;
    double best_val = tol * scale;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (!passive[j] && grad(j) > best_val) {
        best_val = grad(j);
        best = j;
      }
    }
    if (best < 0) break;
    passive[best] = true;
    for (int inner = 0; inner < max_iter; ++inner) {
      Eigen::VectorXd z = solve_passive();
      bool all_positive = true;
      for (Eigen::Index j = 0; j < n; ++j) if (passive[j] && z(j) <= 0.0) all_positive = false;
      if (all_positive) {
        x = z;
        break;
      }
      double alpha = 1.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (passive[j] && z(j) <= 0.0) alpha = std::min(alpha, x(j) / (x(j) - z(j)));
      }
      x += alpha * (z - x);
      for (Eigen::Index j = 0; j < n; ++j) {
        if (passive[j] && std::abs(x(j)) <= 1e-15) {
          passive[j] = false;
          x(j) = 0.0;
        }
      }
    }
  }
  return x;
}

struct ProjectionResult {
  ControlInput thrust = ControlInput::Zero();
  bool saturated = false;
};

/// Primal active-set solve of min 1/2 ||z - c||^2 s.t. A z >= lo, from a feasible z.
inline Eigen::VectorXd nearest_point_active_set(const Eigen::MatrixXd& a, const Eigen::VectorXd& lo,
                                                const Eigen::VectorXd& c, Eigen::VectorXd z,
                                                double tol = 1e-13) {
  const Eigen::Index m = a.rows();
  const Eigen::Index k = a.cols();
  std::vector<bool> working(m, false);
  for (Eigen::Index i = 0; i < m; ++i) working[i] = (a.row(i).dot(z) - lo(i)) <= tol;

  for (int it = 0; it < 50; ++it) {
    std::vector<Eigen::Index> ids;
    for (Eigen::Index i = 0; i < m; ++i) if (working[i]) ids.push_back(i);
    Eigen::MatrixXd aw(static_cast<Eigen::Index>(ids.size()), k);
    for (std::size_t r = 0; r < ids.size(); ++r) aw.row(static_cast<Eigen::Index>(r)) = a.row(ids[r]);

    // Step to the minimiser on the working face: p = P_null(aw) (c - z).
    Eigen::VectorXd p = c - z;
    if (aw.rows() > 0) {
      const Eigen::VectorXd coef = aw.transpose().completeOrthogonalDecomposition().solve(p);
      p -= aw.transpose() * coef;
    }
    if (p.norm() <= tol * (1.0 + c.norm())) {
      if (aw.rows() == 0) return z;
      // z - c = aw^T mu with mu >= 0 at a KKT point.
      const Eigen::VectorXd mu = aw.transpose().completeOrthogonalDecomposition().solve(z - c);
      Eigen::Index drop = -1;
      double most_negative = -tol;
      for (Eigen::Index r = 0; r < mu.size(); ++r) {
        if (mu(r) < most_negative) {
          most_negative = mu(r);
          drop = r;
        }
      }
      if (drop < 0) return z;
      working[ids[static_cast<std::size_t>(drop)]] = false;
      continue;
    }
    double alpha = 1.0;
    Eigen::Index blocking = -1;
    for (Eigen::Index i = 0; i < m; ++i) {
      if (working[i]) continue;
      const double ap = a.row(i).dot(p);
      if (ap < 0.0) {
        const double step = (lo(i) - a.row(i).dot(z)) / ap;
        if (step < alpha) {
          alpha = std::max(step, 0.0);
          blocking = i;
        }
      }
    }
    z += alpha * p;
    if (blocking >= 0) working[blocking] = true;
  }
  return z;
}

/// Projection against an arbitrary 3x4 thrust-to-force (or -acceleration) map.
inline ProjectionResult project_thrusts(const Matrix34& b, const ControlInput& raw_u, double guess) {
  ProjectionResult out;
  const Eigen::Vector3d target = b * raw_u;
  const double scale = 1.0 + target.norm() + raw_u.norm();

  // Feasibility of {F >= 0, B F = B raw} via NNLS on the force residual.
  const Eigen::VectorXd f0 = nnls(b, target);
  if ((b * f0 - target).norm() > 1e-10 * scale) {
    out.thrust = f0;
    out.saturated = true;
    return out;
  }

  Eigen::FullPivLU<Matrix34> lu(b);
  const Eigen::MatrixXd kernel = lu.kernel();
  if (lu.rank() == 4 || kernel.cols() == 0) {
    out.thrust = f0;
    return out;
  }
  const Eigen::MatrixXd n = kernel.householderQr().householderQ() *
                            Eigen::MatrixXd::Identity(4, kernel.cols());
  const Eigen::VectorXd d = Vector4::Constant(guess) - raw_u;
  const Eigen::VectorXd c = n.transpose() * d;
  const Eigen::VectorXd z0 = n.transpose() * (f0 - raw_u);
  const Eigen::VectorXd z = nearest_point_active_set(n, -raw_u, c, z0);
  out.thrust = raw_u + n * z;
  for (int i = 0; i < 4; ++i) {
    if (out.thrust(i) < 0.0 && out.thrust(i) > -1e-12 * scale) out.thrust(i) = 0.0;
  }
  return out;
}

inline ProjectionResult project_thrusts(const VehicleParams& p, double theta,
                                        const ControlInput& raw_u, double guess) {
  return project_thrusts(control_map(p, theta), raw_u, guess);
}

inline ProjectionResult project_thrusts(const BasisCoefficients& w, double theta,
                                        const ControlInput& raw_u, double guess) {
  return project_thrusts(basis_control_map(w, theta), raw_u, guess);
}

}  // namespace masv
