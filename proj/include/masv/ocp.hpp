#pragma once

// Indirect tracking optimal control over a short horizon.
//
// First-order conditions of
//   J = int 1/2 (x - x_d)' Q (x - x_d) + 1/2 u' R u dt + 1/2 e(t_f)' Q_f e(t_f)
// subject to xdot = f(x, u):
//   u       = -R^-1 f_u' lambda
//   lamdot  = -f_x' lambda - Q (x - x_d)
//   x(t_0)  = x_0,   lambda(t_f) = Q_f (x(t_f) - x_d(t_f))
// The coupled state/costate system is collocated with the implicit trapezoid
// rule on a fixed mesh and solved by damped Newton with analytic Jacobians.

#include "masv/basis.hpp"
#include "masv/reference.hpp"
#include "masv/sysid.hpp"

#include <algorithm>
#include <optional>
#include <cstdio>
#include <vector>

namespace masv {

struct CostWeights {
  Matrix6 q;
  Matrix4 r;
  Matrix6 q_f;

  static CostWeights defaults() {
    CostWeights w;
    Vector6 qd;
    qd << 100.0, 100.0, 10.0, 1.0, 1.0, 0.1;
    w.q = qd.asDiagonal();
    w.r = 0.1 * Matrix4::Identity();
    w.q_f = w.q;
    return w;
  }
};

template <typename M>
bool is_spd(const M& m) {
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12) return false;
  Eigen::SelfAdjointEigenSolver<M> es(m);
  return es.info() == Eigen::Success && es.eigenvalues().minCoeff() > 0.0;
}

inline void validate(const CostWeights& w) {
  if (!is_spd(w.q) || !is_spd(w.r) || !is_spd(w.q_f)) {
    throw InvalidParameter("cost weights must be symmetric positive definite");
  }
}

struct OCProblem {
  BasisCoefficients model;
  CostWeights weights = CostWeights::defaults();
  State x0 = State::Zero();
  double t0 = 0.0;
  double horizon = 1.0;
  int grid = 20;
  /// Reference state at each of the grid + 1 mesh nodes.
  std::vector<ReferenceState> reference;

  double step() const { return horizon / grid; }
  double node_time(int k) const { return t0 + horizon * k / grid; }
};

/// Samples the reference on the mesh. Headings are shifted by a whole number of
/// turns so the initial heading error lies in (-pi, pi].
inline std::vector<ReferenceState> sample_reference(const ReferenceTrajectory& ref, double t0,
                                                    double horizon, int grid,
                                                    std::optional<double> near_heading = {}) {
  std::vector<ReferenceState> nodes;
  nodes.reserve(grid + 1);
  for (int k = 0; k <= grid; ++k) nodes.push_back(ref.state(t0 + horizon * k / grid));
  if (near_heading) {
    const double two_pi = 2.0 * std::numbers::pi;
    const double turns = std::round((*near_heading - nodes.front()(idx::kTheta)) / two_pi);
    for (auto& n : nodes) n(idx::kTheta) += turns * two_pi;
  }
  return nodes;
}

inline void validate(const OCProblem& p) {
  if (!(p.horizon > 0.0)) throw InvalidParameter("horizon must be positive");
  if (p.grid < 2) throw InvalidParameter("grid must have at least 2 intervals");
  if (static_cast<int>(p.reference.size()) != p.grid + 1) {
    throw InvalidParameter("reference must be sampled at grid + 1 nodes");
  }
  validate(p.weights);
}

struct OCSolution {
  std::vector<double> t;
  std::vector<State> x;
  std::vector<Vector6> lambda;
  std::vector<ControlInput> u;
  int iterations = 0;
  double residual_norm = 0.0;  // max-norm of the stacked collocation residual
  std::vector<double> merit_history;  // 2-norm after each accepted step, starting with the guess
  bool converged = false;
};

class SolverNonConvergence : public Error {
 public:
  SolverNonConvergence(const std::string& what, OCSolution best)
      : Error(what), best_(std::move(best)) {}
  const OCSolution& best_iterate() const { return best_; }

 private:
  OCSolution best_;
};

/// Stationarity: u R + lambda' f_u = 0  =>  u = -R^-1 f_u' lambda.
inline ControlInput stationarity_control(const BasisCoefficients& model, const CostWeights& w,
                                         const State& x, const Vector6& lambda) {
  const Matrix34 a = basis_control_map(model, x(idx::kTheta));
  return -w.r.llt().solve(a.transpose() * lambda.tail<3>());
}

/// lamdot = -f_x' lambda - Q (x - x_d), with f_x evaluated at the stationary control.
inline Vector6 costate_rhs(const BasisCoefficients& model, const CostWeights& w, const State& x,
                           const Vector6& lambda, const ReferenceState& x_d) {
  const ControlInput u = stationarity_control(model, w, x, lambda);
  const auto j = basis_jacobians(model, x, u);
  return -j.dfdx.transpose() * lambda - w.q * (x - x_d);
}

/// [x(t_0) - x_0; lambda(t_f) - Q_f' (x(t_f) - x_d(t_f))].
inline Eigen::Matrix<double, 12, 1> boundary_residual(const OCSolution& sol, const State& x0,
                                                      const CostWeights& w,
                                                      const ReferenceState& x_d_final) {
  Eigen::Matrix<double, 12, 1> r;
  r.head<6>() = sol.x.front() - x0;
  r.tail<6>() = sol.lambda.back() - w.q_f.transpose() * (sol.x.back() - x_d_final);
  return r;
}

namespace detail {

/// Right-hand sides of the coupled system at one node and their Jacobians
/// w.r.t. (x, lambda).
struct NodeSystem {
  Vector6 f;
  Vector6 g;
  Eigen::Matrix<double, 6, 12> df;
  Eigen::Matrix<double, 6, 12> dg;
};

inline NodeSystem node_system(const BasisCoefficients& model, const CostWeights& w, const State& x,
                              const Vector6& lambda, const ReferenceState& x_d,
                              const Matrix4& r_inv) {
  const double theta = x(idx::kTheta);
  const Matrix34 a = basis_control_map(model, theta);
  const Matrix34 da = basis_control_map_dtheta(model, theta);
  Matrix34 dda = -a;
  dda.row(2).setZero();
  const Vector3 damping{model.w1(0), model.w2(0), model.w3(0)};
  const Vector3 lv = lambda.tail<3>();

  const ControlInput u = -r_inv * a.transpose() * lv;
  const ControlInput u_theta = -r_inv * da.transpose() * lv;
  const Eigen::Matrix<double, 4, 3> u_lv = -r_inv * a.transpose();

  NodeSystem s;
  s.f.head<3>() = x.tail<3>();
  s.f.tail<3>() = damping.cwiseProduct(x.tail<3>()) + a * u;

  s.df.setZero();
  s.df.block<3, 3>(0, 3).setIdentity();
  s.df.block<3, 1>(3, idx::kTheta) = da * u + a * u_theta;
  s.df.block<3, 3>(3, 3) = damping.asDiagonal();
  s.df.block<3, 3>(3, 6 + 3) = a * u_lv;

  const Vector3 da_u = da * u;
  Vector6 fx_t_lambda = Vector6::Zero();
  fx_t_lambda(idx::kTheta) = da_u.dot(lv);
  fx_t_lambda.tail<3>() = lambda.head<3>() + damping.cwiseProduct(lv);
  s.g = -fx_t_lambda - w.q * (x - x_d);

  s.dg.setZero();
  s.dg.leftCols<6>() = -w.q;
  s.dg(idx::kTheta, idx::kTheta) += -(dda * u + da * u_theta).dot(lv);
  const Eigen::RowVector3d d_theta_row = -(da_u.transpose() + lv.transpose() * da * u_lv);
  s.dg.block<1, 3>(idx::kTheta, 6 + 3) = d_theta_row;
  for (int j = 0; j < 3; ++j) {
    s.dg(3 + j, 6 + j) = -1.0;
    s.dg(3 + j, 6 + 3 + j) = -damping(j);
  }
  return s;
}

inline Eigen::VectorXd pack(const std::vector<State>& x, const std::vector<Vector6>& lambda) {
  const auto nodes = static_cast<Eigen::Index>(x.size());
  Eigen::VectorXd z(12 * nodes);
  for (Eigen::Index k = 0; k < nodes; ++k) {
    z.segment<6>(12 * k) = x[k];
    z.segment<6>(12 * k + 6) = lambda[k];
  }
  return z;
}

inline void unpack(const Eigen::VectorXd& z, std::vector<State>& x, std::vector<Vector6>& lambda) {
  const auto nodes = z.size() / 12;
  x.resize(nodes);
  lambda.resize(nodes);
  for (Eigen::Index k = 0; k < nodes; ++k) {
    x[k] = z.segment<6>(12 * k);
    lambda[k] = z.segment<6>(12 * k + 6);
  }
}

/// Stacked collocation residual, optionally with its Jacobian.
inline Eigen::VectorXd collocation_residual(const OCProblem& prob, const Eigen::VectorXd& z,
                                            Eigen::MatrixXd* jac) {
  const int n = prob.grid;
  const double h = prob.step();
  const Matrix4 r_inv = prob.weights.r.inverse();
  std::vector<NodeSystem> sys;
  sys.reserve(n + 1);
  for (int k = 0; k <= n; ++k) {
    sys.push_back(node_system(prob.model, prob.weights, z.segment<6>(12 * k),
                              z.segment<6>(12 * k + 6), prob.reference[k], r_inv));
  }
  const Eigen::Index size = 12 * (n + 1);
  Eigen::VectorXd r(size);
  if (jac) jac->setZero(size, size);

  r.head<6>() = z.head<6>() - prob.x0;
  if (jac) jac->block<6, 6>(0, 0).setIdentity();

  for (int k = 0; k < n; ++k) {
    const Eigen::Index row = 6 + 12 * k;
    const Eigen::Index ck = 12 * k;
    const Eigen::Index cn = 12 * (k + 1);
    r.segment<6>(row) = z.segment<6>(cn) - z.segment<6>(ck) - 0.5 * h * (sys[k].f + sys[k + 1].f);
    r.segment<6>(row + 6) =
        z.segment<6>(cn + 6) - z.segment<6>(ck + 6) - 0.5 * h * (sys[k].g + sys[k + 1].g);
    if (jac) {
      jac->block<6, 12>(row, ck) = -0.5 * h * sys[k].df;
      jac->block<6, 12>(row, cn) = -0.5 * h * sys[k + 1].df;
      jac->block<6, 6>(row, ck) -= Matrix6::Identity();
      jac->block<6, 6>(row, cn) += Matrix6::Identity();
      jac->block<6, 12>(row + 6, ck) = -0.5 * h * sys[k].dg;
      jac->block<6, 12>(row + 6, cn) = -0.5 * h * sys[k + 1].dg;
      jac->block<6, 6>(row + 6, ck + 6) -= Matrix6::Identity();
      jac->block<6, 6>(row + 6, cn + 6) += Matrix6::Identity();
    }
  }
  const Eigen::Index last = 12 * n;
  const Eigen::Index row = 6 + 12 * n;
  r.segment<6>(row) =
      z.segment<6>(last + 6) - prob.weights.q_f.transpose() * (z.segment<6>(last) - prob.reference[n]);
  if (jac) {
    jac->block<6, 6>(row, last + 6).setIdentity();
    jac->block<6, 6>(row, last) = -prob.weights.q_f.transpose();
  }
  return r;
}

inline OCSolution make_solution(const OCProblem& prob, const Eigen::VectorXd& z) {
  OCSolution sol;
  unpack(z, sol.x, sol.lambda);
  for (int k = 0; k <= prob.grid; ++k) {
    sol.t.push_back(prob.node_time(k));
    sol.u.push_back(stationarity_control(prob.model, prob.weights, sol.x[k], sol.lambda[k]));
  }
  return sol;
}

inline double interp(double t, double t0, double t1, double a, double b) {
  const double s = (t1 > t0) ? (t - t0) / (t1 - t0) : 0.0;
  return a + s * (b - a);
}

}  // namespace detail

struct NewtonSettings {
  int max_iterations = 40;
  double tolerance = 1e-10;  // max-norm of the stacked residual
  double min_step = 1e-8;
};

/// Cold start: lambda = 0, x linear from x0 to the terminal reference.
inline Eigen::VectorXd cold_start_guess(const OCProblem& prob) {
  std::vector<State> x(prob.grid + 1);
  std::vector<Vector6> lambda(prob.grid + 1, Vector6::Zero());
  for (int k = 0; k <= prob.grid; ++k) {
    const double s = static_cast<double>(k) / prob.grid;
    x[k] = (1.0 - s) * prob.x0 + s * prob.reference.back();
  }
  return detail::pack(x, lambda);
}

/// Warm start: the previous solution re-read at the new node times. Nodes past
/// its end extrapolate the tail by following the reference; the state profile is
/// then re-anchored at x0.
inline Eigen::VectorXd warm_start_guess(const OCProblem& prob, const OCSolution& prev,
                                        const ReferenceTrajectory* ref = nullptr) {
  std::vector<State> x(prob.grid + 1);
  std::vector<Vector6> lambda(prob.grid + 1);
  const double t_end = prev.t.back();
  const ReferenceState tail_ref = ref ? ref->state(t_end) : prob.reference.back();
  for (int k = 0; k <= prob.grid; ++k) {
    const double tk = prob.node_time(k);
    if (tk >= t_end) {
      const ReferenceState shift = ref ? ReferenceState(ref->state(tk) - tail_ref)
                                       : ReferenceState(prob.reference[k] - prob.reference.front());
      x[k] = prev.x.back() + shift;
      lambda[k] = prev.lambda.back();
      continue;
    }
    auto it = std::upper_bound(prev.t.begin(), prev.t.end(), tk);
    const auto i1 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(1, it - prev.t.begin()));
    const auto i0 = i1 - 1;
    const double s = (tk - prev.t[i0]) / (prev.t[i1] - prev.t[i0]);
    x[k] = (1.0 - s) * prev.x[i0] + s * prev.x[i1];
    lambda[k] = (1.0 - s) * prev.lambda[i0] + s * prev.lambda[i1];
  }
  const State offset = prob.x0 - x.front();
  for (int k = 0; k <= prob.grid; ++k) {
    x[k] += offset * (1.0 - static_cast<double>(k) / prob.grid);
  }
  return detail::pack(x, lambda);
}

/// Damped Newton on the collocation residual from a given initial iterate.
inline OCSolution solve_tpbvp_from(const OCProblem& prob, Eigen::VectorXd z,
                                   const NewtonSettings& settings = {}) {
  validate(prob);
  Eigen::MatrixXd jac;
  Eigen::VectorXd r = detail::collocation_residual(prob, z, &jac);
  double merit = r.norm();
  std::vector<double> history{merit};
  int it = 0;
  for (; it < settings.max_iterations && r.lpNorm<Eigen::Infinity>() > settings.tolerance; ++it) {
    const Eigen::VectorXd dz = jac.partialPivLu().solve(-r);
    double alpha = 1.0;
    bool accepted = false;
    while (alpha >= settings.min_step) {
      const Eigen::VectorXd trial = z + alpha * dz;
      const Eigen::VectorXd rt = detail::collocation_residual(prob, trial, nullptr);
      const double mt = rt.norm();
      if (std::isfinite(mt) && mt <= (1.0 - 1e-4 * alpha) * merit) {
        z = trial;
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) break;
    r = detail::collocation_residual(prob, z, &jac);
    merit = r.norm();
    history.push_back(merit);
  }
  OCSolution sol = detail::make_solution(prob, z);
  sol.iterations = it;
  sol.residual_norm = r.lpNorm<Eigen::Infinity>();
  sol.merit_history = std::move(history);
  sol.converged = sol.residual_norm <= settings.tolerance;
  if (!sol.converged) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "TPBVP Newton iteration did not converge (residual %.3e after %d iterations)",
                  sol.residual_norm, it);
    throw SolverNonConvergence(buf, sol);
  }
  return sol;
}

inline OCSolution solve_tpbvp(const OCProblem& prob, const std::optional<OCSolution>& warm_start = {},
                              const NewtonSettings& settings = {},
                              const ReferenceTrajectory* ref = nullptr) {
  validate(prob);
  const Eigen::VectorXd guess =
      warm_start ? warm_start_guess(prob, *warm_start, ref) : cold_start_guess(prob);
  return solve_tpbvp_from(prob, guess, settings);
}

/// Linear interpolation of u*(t) at `rate` Hz over the horizon (first sample at t_0).
inline std::vector<ControlInput> extract_control_sequence(const OCSolution& sol, double rate) {
  const double t0 = sol.t.front();
  const double horizon = sol.t.back() - t0;
  const auto count = static_cast<int>(std::llround(horizon * rate));
  std::vector<ControlInput> seq;
  seq.reserve(count);
  for (int j = 0; j < count; ++j) {
    const double t = t0 + j / rate;
    auto it = std::upper_bound(sol.t.begin(), sol.t.end(), t);
    const auto i1 = static_cast<std::size_t>(
        std::clamp<std::ptrdiff_t>(it - sol.t.begin(), 1, static_cast<std::ptrdiff_t>(sol.t.size()) - 1));
    const auto i0 = i1 - 1;
    ControlInput u;
    for (int i = 0; i < 4; ++i) u(i) = detail::interp(t, sol.t[i0], sol.t[i1], sol.u[i0](i), sol.u[i1](i));
    seq.push_back(u);
  }
  return seq;
}

/// Max-norm residuals of the optimality system at the mesh nodes.
struct PontryaginResiduals {
  double dynamics = 0.0;      // trapezoid defect of xdot = f(x, u)
  double costate = 0.0;       // trapezoid defect of the costate equation
  double stationarity = 0.0;  // ||u' R + lambda' f_u||
  double boundary = 0.0;      // initial state and terminal transversality

  double max() const { return std::max({dynamics, costate, stationarity, boundary}); }
};

inline PontryaginResiduals pontryagin_residuals(const OCProblem& prob, const OCSolution& sol) {
  PontryaginResiduals res;
  const double h = prob.step();
  std::vector<Vector6> f(sol.x.size());
  std::vector<Vector6> g(sol.x.size());
  for (std::size_t k = 0; k < sol.x.size(); ++k) {
    const auto j = basis_jacobians(prob.model, sol.x[k], sol.u[k]);
    f[k].head<3>() = sol.x[k].tail<3>();
    f[k].tail<3>() = basis_accel(prob.model, sol.x[k], sol.u[k]);
    g[k] = -j.dfdx.transpose() * sol.lambda[k] - prob.weights.q * (sol.x[k] - prob.reference[k]);
    const Eigen::Matrix<double, 1, 4> stat =
        sol.u[k].transpose() * prob.weights.r + sol.lambda[k].transpose() * j.dfdu;
    res.stationarity = std::max(res.stationarity, stat.cwiseAbs().maxCoeff());
  }
  for (std::size_t k = 0; k + 1 < sol.x.size(); ++k) {
    res.dynamics = std::max(
        res.dynamics, (sol.x[k + 1] - sol.x[k] - 0.5 * h * (f[k] + f[k + 1])).cwiseAbs().maxCoeff());
    res.costate = std::max(res.costate, (sol.lambda[k + 1] - sol.lambda[k] - 0.5 * h * (g[k] + g[k + 1]))
                                            .cwiseAbs()
                                            .maxCoeff());
  }
  res.boundary =
      boundary_residual(sol, prob.x0, prob.weights, prob.reference.back()).cwiseAbs().maxCoeff();
  return res;
}

/// Trapezoid-discretised cost of node states and controls.
inline double trajectory_cost(const OCProblem& prob, const std::vector<State>& x,
                              const std::vector<ControlInput>& u) {
  const double h = prob.step();
  double j = 0.0;
  for (int k = 0; k <= prob.grid; ++k) {
    const Vector6 e = x[k] - prob.reference[k];
    const double l = 0.5 * e.dot(prob.weights.q * e) + 0.5 * u[k].dot(prob.weights.r * u[k]);
    j += (k == 0 || k == prob.grid ? 0.5 : 1.0) * h * l;
  }
  const Vector6 ef = x.back() - prob.reference.back();
  return j + 0.5 * ef.dot(prob.weights.q_f * ef);
}

}  // namespace masv
