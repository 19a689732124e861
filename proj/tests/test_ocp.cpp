#include "masv/dynamics.hpp"
#include "masv/ocp.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace masv;

namespace {

BasisCoefficients plant_model() { return true_basis_coefficients(VehicleParams{}); }

OCProblem sine_problem(double t0, int grid = 20) {
  const ReferenceTrajectory ref(CurveSpec::default_sine());
  OCProblem prob;
  prob.model = plant_model();
  prob.x0 = ref.state(t0);
  prob.x0(idx::kX) += 0.02;
  prob.x0(idx::kY) -= 0.01;
  prob.x0(idx::kTheta) += 0.1;
  prob.t0 = t0;
  prob.grid = grid;
  prob.reference = sample_reference(ref, t0, prob.horizon, grid);
  return prob;
}

/// The basis model with every coefficient perturbed by up to 5%, as a fit would leave it.
BasisCoefficients perturbed_model(std::uint64_t seed) {
  BasisCoefficients w = plant_model();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-0.05, 0.05);
  for (int i = 0; i < 9; ++i) {
    w.w1(i) *= 1.0 + d(rng);
    w.w2(i) *= 1.0 + d(rng);
  }
  for (int i = 0; i < 5; ++i) w.w3(i) *= 1.0 + d(rng);
  return w;
}

State model_rhs(const BasisCoefficients& w, const State& x, const ControlInput& u) {
  State dx;
  dx.head<3>() = x.tail<3>();
  dx.tail<3>() = basis_accel(w, x, u);
  return dx;
}

/// Forward RK4 rollout under piecewise-linear node controls; returns states at the nodes.
std::vector<State> rollout(const OCProblem& prob, const std::vector<ControlInput>& u, int substeps = 50) {
  const double h = prob.step() / substeps;
  std::vector<State> nodes{prob.x0};
  State x = prob.x0;
  for (int k = 0; k < prob.grid; ++k) {
    for (int s = 0; s < substeps; ++s) {
      auto uc = [&](double frac) { return ControlInput((1.0 - frac) * u[k] + frac * u[k + 1]); };
      const double a = static_cast<double>(s) / substeps;
      const double m = (s + 0.5) / substeps;
      const double b = (s + 1.0) / substeps;
      const State k1 = model_rhs(prob.model, x, uc(a));
      const State k2 = model_rhs(prob.model, x + 0.5 * h * k1, uc(m));
      const State k3 = model_rhs(prob.model, x + 0.5 * h * k2, uc(m));
      const State k4 = model_rhs(prob.model, x + h * k3, uc(b));
      x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    nodes.push_back(x);
  }
  return nodes;
}

}  // namespace

TEST(Weights, DefaultsAreSpd) {
  const auto w = CostWeights::defaults();
  EXPECT_NO_THROW(validate(w));
  EXPECT_DOUBLE_EQ(w.q(0, 0), 100.0);
  EXPECT_DOUBLE_EQ(w.q(5, 5), 0.1);
  EXPECT_DOUBLE_EQ(w.r(2, 2), 0.1);
  auto bad = w;
  bad.r(0, 1) = 0.5;
  EXPECT_THROW(validate(bad), InvalidParameter);
  bad = w;
  bad.q(3, 3) = -1.0;
  EXPECT_THROW(validate(bad), InvalidParameter);
}

TEST(Stationarity, ZeroCostateGivesZeroControl) {
  const auto w = CostWeights::defaults();
  State x = State::Zero();
  x(idx::kTheta) = 0.4;
  EXPECT_EQ(stationarity_control(plant_model(), w, x, Vector6::Zero()).norm(), 0.0);
}

TEST(Stationarity, ScalesInverselyWithR) {
  auto w = CostWeights::defaults();
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 1.0);
  Vector6 lambda;
  for (int i = 0; i < 6; ++i) lambda(i) = n(rng);
  State x = State::Zero();
  x(idx::kTheta) = 1.1;
  const ControlInput u1 = stationarity_control(plant_model(), w, x, lambda);
  w.r *= 4.0;
  const ControlInput u4 = stationarity_control(plant_model(), w, x, lambda);
  EXPECT_LT((u4 - 0.25 * u1).norm(), 1e-14);
}

TEST(Stationarity, ResidualVanishes) {
  const auto w = CostWeights::defaults();
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    Vector6 lambda;
    State x;
    for (int i = 0; i < 6; ++i) {
      lambda(i) = n(rng);
      x(i) = n(rng);
    }
    const ControlInput u = stationarity_control(plant_model(), w, x, lambda);
    const auto j = basis_jacobians(plant_model(), x, u);
    const Eigen::RowVector4d r = u.transpose() * w.r + lambda.transpose() * j.dfdu;
    EXPECT_LT(r.cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Costate, OnReferenceWithZeroCostate) {
  const auto w = CostWeights::defaults();
  const ReferenceState xd = reference_state(CurveSpec::default_sine(), 3.0);
  EXPECT_EQ(costate_rhs(plant_model(), w, xd, Vector6::Zero(), xd).norm(), 0.0);
}

TEST(Costate, WithoutStateCostIsAdjointAlone) {
  auto w = CostWeights::defaults();
  w.q.setZero();
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  State x;
  Vector6 lambda;
  for (int i = 0; i < 6; ++i) {
    x(i) = n(rng);
    lambda(i) = n(rng);
  }
  const ControlInput u = stationarity_control(plant_model(), w, x, lambda);
  const auto j = basis_jacobians(plant_model(), x, u);
  EXPECT_LT((costate_rhs(plant_model(), w, x, lambda, State::Zero()) + j.dfdx.transpose() * lambda).norm(), 1e-14);
}

TEST(Costate, MatchesHamiltonianGradient) {
  const auto w = CostWeights::defaults();
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    State x;
    Vector6 lambda;
    ReferenceState xd;
    for (int i = 0; i < 6; ++i) {
      x(i) = n(rng);
      lambda(i) = n(rng);
      xd(i) = n(rng);
    }
    const ControlInput u = stationarity_control(plant_model(), w, x, lambda);
    // H(x) = 1/2 e'Qe + 1/2 u'Ru + lambda' f(x, u) at fixed u and lambda.
    auto hamiltonian = [&](const State& y) {
      const Vector6 e = y - xd;
      return 0.5 * e.dot(w.q * e) + 0.5 * u.dot(w.r * u) + lambda.dot(model_rhs(plant_model(), y, u));
    };
    Vector6 grad;
    for (int i = 0; i < 6; ++i) {
      State p = x, m = x;
      p(i) += 1e-6;
      m(i) -= 1e-6;
      grad(i) = (hamiltonian(p) - hamiltonian(m)) / 2e-6;
    }
    const Vector6 rhs = costate_rhs(plant_model(), w, x, lambda, xd);
    EXPECT_LT((rhs + grad).norm(), 1e-6 * std::max(1.0, grad.norm()));
  }
}

TEST(Boundary, ConvergedSolutionSatisfiesBoundary) {
  const auto prob = sine_problem(2.0);
  const auto sol = solve_tpbvp(prob);
  EXPECT_LT(boundary_residual(sol, prob.x0, prob.weights, prob.reference.back()).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Boundary, FreeTerminalCostateAndPerfectTracking) {
  OCSolution sol;
  sol.x = {State::Zero(), State::Constant(0.3)};
  sol.lambda = {Vector6::Zero(), Vector6::Constant(0.7)};
  auto w = CostWeights::defaults();
  w.q_f.setZero();
  const auto r = boundary_residual(sol, State::Zero(), w, ReferenceState::Zero());
  EXPECT_EQ(r.tail<6>(), Vector6::Constant(0.7));
  const auto r2 = boundary_residual(sol, State::Zero(), CostWeights::defaults(), State::Constant(0.3));
  EXPECT_EQ(r2.tail<6>(), Vector6::Constant(0.7));
  EXPECT_EQ(r2.head<6>().norm(), 0.0);
}

TEST(Tpbvp, NegligibleCostGivesFreeDrift) {
  OCProblem prob;
  prob.model = plant_model();
  prob.weights.q = 1e-14 * Matrix6::Identity();
  prob.weights.q_f = prob.weights.q;
  prob.x0 << 0.1, -0.2, 0.3, 0.05, -0.02, 0.4;
  prob.reference.assign(prob.grid + 1, ReferenceState::Zero());
  const auto sol = solve_tpbvp(prob);
  for (int k = 0; k <= prob.grid; ++k) {
    EXPECT_LT(sol.u[k].norm(), 1e-9);
    EXPECT_LT(sol.lambda[k].norm(), 1e-9);
    // Linear damping: v(t) = v0 exp(c t); trapezoid error is O(h^2).
    const double t = prob.node_time(k);
    EXPECT_NEAR(sol.x[k](idx::kXdot), 0.05 * std::exp(prob.model.w1(0) * t), 1e-4);
    EXPECT_NEAR(sol.x[k](idx::kThetaDot), 0.4 * std::exp(prob.model.w3(0) * t), 1e-3);
  }
}

TEST(Tpbvp, EquilibriumTracking) {
  OCProblem prob;
  prob.model = plant_model();
  prob.x0 << 0.5, 0.5, 0.3, 0.0, 0.0, 0.0;
  prob.reference.assign(prob.grid + 1, prob.x0);
  const auto sol = solve_tpbvp(prob);
  EXPECT_TRUE(sol.converged);
  for (const auto& u : sol.u) EXPECT_LT(u.norm(), 1e-10);
  EXPECT_LT(pontryagin_residuals(prob, sol).max(), 1e-10);
}

TEST(Tpbvp, PontryaginResidualsOnConvergedSolutions) {
  for (double t0 : {0.0, 4.2, 11.0}) {
    for (const auto& model : {plant_model(), perturbed_model(7)}) {
      auto prob = sine_problem(t0);
      prob.model = model;
      const auto sol = solve_tpbvp(prob);
      const auto r = pontryagin_residuals(prob, sol);
      EXPECT_LT(r.dynamics, 1e-6);
      EXPECT_LT(r.costate, 1e-6);
      EXPECT_LT(r.stationarity, 1e-6);
      EXPECT_LT(r.boundary, 1e-6);
    }
  }
}

TEST(Tpbvp, AnalyticJacobianMatchesFiniteDifferences) {
  auto prob = sine_problem(1.0, 6);
  prob.model = perturbed_model(8);
  const auto sol = solve_tpbvp(prob);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0.0, 0.05);
  Eigen::VectorXd z = detail::pack(sol.x, sol.lambda);
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) += n(rng);
  Eigen::MatrixXd jac;
  detail::collocation_residual(prob, z, &jac);
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    Eigen::VectorXd zp = z, zm = z;
    zp(i) += 1e-6;
    zm(i) -= 1e-6;
    const Eigen::VectorXd col =
        (detail::collocation_residual(prob, zp, nullptr) - detail::collocation_residual(prob, zm, nullptr)) / 2e-6;
    EXPECT_LT((col - jac.col(i)).cwiseAbs().maxCoeff(), 1e-6 * std::max(1.0, col.cwiseAbs().maxCoeff()));
  }
}

TEST(Tpbvp, MeritNonIncreasing) {
  auto prob = sine_problem(5.0);
  prob.model = perturbed_model(10);
  prob.x0(idx::kTheta) += 1.0;
  const auto sol = solve_tpbvp(prob);
  ASSERT_GE(sol.merit_history.size(), 2u);
  for (std::size_t i = 1; i < sol.merit_history.size(); ++i) {
    EXPECT_LE(sol.merit_history[i], sol.merit_history[i - 1]);
  }
}

TEST(Tpbvp, NonConvergenceCarriesBestIterate) {
  auto prob = sine_problem(0.0);
  prob.model = perturbed_model(11);
  NewtonSettings s;
  s.max_iterations = 0;
  try {
    solve_tpbvp(prob, {}, s);
    FAIL() << "expected SolverNonConvergence";
  } catch (const SolverNonConvergence& e) {
    EXPECT_FALSE(e.best_iterate().converged);
    EXPECT_GT(e.best_iterate().residual_norm, s.tolerance);
    EXPECT_EQ(e.best_iterate().x.size(), 21u);
  }
}

TEST(Tpbvp, InvalidProblems) {
  auto prob = sine_problem(0.0);
  prob.grid = 1;
  EXPECT_THROW(solve_tpbvp(prob), InvalidParameter);
  prob = sine_problem(0.0);
  prob.reference.pop_back();
  EXPECT_THROW(solve_tpbvp(prob), InvalidParameter);
  prob = sine_problem(0.0);
  prob.horizon = 0.0;
  EXPECT_THROW(solve_tpbvp(prob), InvalidParameter);
}

TEST(Tpbvp, SolutionBeatsRandomPerturbations) {
  auto prob = sine_problem(3.0);
  const auto sol = solve_tpbvp(prob);
  const double j_star = trajectory_cost(prob, rollout(prob, sol.u), sol.u);
  double u_range = 0.0;
  for (const auto& u : sol.u) u_range = std::max(u_range, u.cwiseAbs().maxCoeff());
  std::mt19937_64 rng(12);
  std::normal_distribution<double> n(0.0, 0.1 * u_range);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<ControlInput> u = sol.u;
    for (auto& uk : u) for (int i = 0; i < 4; ++i) uk(i) += n(rng);
    EXPECT_GE(trajectory_cost(prob, rollout(prob, u), u), j_star) << "trial " << trial;
  }
}

TEST(Tpbvp, AdjointGradientMatchesFiniteDifferences) {
  // Continuous cost J(u) with u piecewise linear on the mesh, evaluated on a fine
  // RK4 grid. The adjoint gradient is dJ = int (R u + f_u' lambda) . du dt.
  auto prob = sine_problem(2.0);
  prob.model = perturbed_model(13);
  const ReferenceTrajectory ref(CurveSpec::default_sine());
  const auto& w = prob.weights;
  const int fine = 2000;
  const double h = prob.horizon / fine;
  std::mt19937_64 rng(14);
  std::normal_distribution<double> n(0.0, 0.3);
  std::vector<ControlInput> nodes(prob.grid + 1), dir(prob.grid + 1);
  for (int k = 0; k <= prob.grid; ++k) {
    for (int i = 0; i < 4; ++i) {
      nodes[k](i) = n(rng);
      dir[k](i) = n(rng);
    }
  }
  auto control_at = [&](const std::vector<ControlInput>& u, double s) {
    const double pos = std::clamp(s / prob.step(), 0.0, static_cast<double>(prob.grid));
    const int k = std::min(static_cast<int>(pos), prob.grid - 1);
    const double frac = pos - k;
    return ControlInput((1.0 - frac) * u[k] + frac * u[k + 1]);
  };
  auto forward = [&](const std::vector<ControlInput>& u, std::vector<State>* traj) {
    State x = prob.x0;
    double j = 0.0;
    auto running = [&](const State& y, double s) {
      const Vector6 e = y - ref.state(prob.t0 + s);
      const ControlInput c = control_at(u, s);
      return 0.5 * e.dot(w.q * e) + 0.5 * c.dot(w.r * c);
    };
    if (traj) traj->assign(1, x);
    for (int i = 0; i < fine; ++i) {
      const double s = i * h;
      const State k1 = model_rhs(prob.model, x, control_at(u, s));
      const State k2 = model_rhs(prob.model, x + 0.5 * h * k1, control_at(u, s + 0.5 * h));
      const State k3 = model_rhs(prob.model, x + 0.5 * h * k2, control_at(u, s + 0.5 * h));
      const State k4 = model_rhs(prob.model, x + h * k3, control_at(u, s + h));
      const State next = x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      j += 0.5 * h * (running(x, s) + running(next, s + h));
      x = next;
      if (traj) traj->push_back(x);
    }
    const Vector6 ef = x - ref.state(prob.t0 + prob.horizon);
    return j + 0.5 * ef.dot(w.q_f * ef);
  };
  std::vector<State> traj;
  forward(nodes, &traj);
  // Backward costate sweep (RK4 with linearly interpolated states at midpoints).
  std::vector<Vector6> lambda(fine + 1);
  lambda[fine] = w.q_f * (traj[fine] - ref.state(prob.t0 + prob.horizon));
  auto adj = [&](const State& x, const Vector6& l, double s) {
    const auto jac = basis_jacobians(prob.model, x, control_at(nodes, s));
    return Vector6(-jac.dfdx.transpose() * l - w.q * (x - ref.state(prob.t0 + s)));
  };
  for (int i = fine; i > 0; --i) {
    const double s = i * h;
    const State xm = 0.5 * (traj[i] + traj[i - 1]);
    const Vector6 k1 = adj(traj[i], lambda[i], s);
    const Vector6 k2 = adj(xm, lambda[i] - 0.5 * h * k1, s - 0.5 * h);
    const Vector6 k3 = adj(xm, lambda[i] - 0.5 * h * k2, s - 0.5 * h);
    const Vector6 k4 = adj(traj[i - 1], lambda[i] - h * k3, s - h);
    lambda[i - 1] = lambda[i] - h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  double adjoint = 0.0;
  for (int i = 0; i <= fine; ++i) {
    const double s = i * h;
    const ControlInput u = control_at(nodes, s);
    const auto jac = basis_jacobians(prob.model, traj[i], u);
    const double g = (w.r * u + jac.dfdu.transpose() * lambda[i]).dot(control_at(dir, s));
    adjoint += (i == 0 || i == fine ? 0.5 : 1.0) * h * g;
  }
  const double eps = 1e-5;
  std::vector<ControlInput> up = nodes, um = nodes;
  for (int k = 0; k <= prob.grid; ++k) {
    up[k] += eps * dir[k];
    um[k] -= eps * dir[k];
  }
  const double fd = (forward(up, nullptr) - forward(um, nullptr)) / (2.0 * eps);
  EXPECT_LT(std::abs(adjoint - fd), 1e-4 * std::abs(fd));
}

TEST(ControlSequence, NodeValuesAndLength) {
  const auto prob = sine_problem(1.0);
  const auto sol = solve_tpbvp(prob);
  const auto seq = extract_control_sequence(sol, 100.0);
  ASSERT_EQ(seq.size(), 100u);
  for (int k = 0; k < prob.grid; ++k) EXPECT_LT((seq[5 * k] - sol.u[k]).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ControlSequence, ConstantControlStaysConstant) {
  OCSolution sol;
  for (int k = 0; k <= 20; ++k) {
    sol.t.push_back(k * 0.05);
    sol.u.push_back(ControlInput{0.1, 0.2, 0.3, 0.4});
  }
  for (const auto& u : extract_control_sequence(sol, 100.0)) EXPECT_EQ(u, (ControlInput{0.1, 0.2, 0.3, 0.4}));
}

TEST(ControlSequence, CloseToDenseResolve) {
  for (double t0 : {0.0, 3.3, 17.0}) {
    const auto coarse = extract_control_sequence(solve_tpbvp(sine_problem(t0, 20)), 100.0);
    const auto dense = extract_control_sequence(solve_tpbvp(sine_problem(t0, 200)), 100.0);
    double lo = std::numeric_limits<double>::infinity(), hi = -lo, worst = 0.0;
    for (std::size_t j = 0; j < dense.size(); ++j) {
      lo = std::min(lo, dense[j].minCoeff());
      hi = std::max(hi, dense[j].maxCoeff());
      worst = std::max(worst, (coarse[j] - dense[j]).cwiseAbs().maxCoeff());
    }
    EXPECT_LT(worst, 0.05 * (hi - lo));
  }
}

TEST(ControlSequence, GridRefinementWithinTwoPercentRms) {
  for (double t0 : {0.0, 3.3, 17.0}) {
    const auto a = extract_control_sequence(solve_tpbvp(sine_problem(t0, 20)), 100.0);
    const auto b = extract_control_sequence(solve_tpbvp(sine_problem(t0, 40)), 100.0);
    double num = 0.0, den = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
      num += (b[j] - a[j]).squaredNorm();
      den += a[j].squaredNorm();
    }
    EXPECT_LT(std::sqrt(num / den), 0.02);
  }
}

TEST(WarmStart, StartsCloserThanColdStart) {
  auto first = sine_problem(4.0);
  first.model = perturbed_model(15);
  const auto prev = solve_tpbvp(first);
  // Next tick, half a horizon later, from the planned state.
  const ReferenceTrajectory ref(CurveSpec::default_sine());
  OCProblem next = first;
  next.t0 = 4.5;
  next.x0 = prev.x[10];
  next.reference = sample_reference(ref, next.t0, next.horizon, next.grid);
  const auto warm = solve_tpbvp(next, prev, {}, &ref);
  const auto cold = solve_tpbvp(next);
  EXPECT_LT(warm.merit_history.front(), cold.merit_history.front());
  EXPECT_LE(warm.iterations, cold.iterations);
  EXPECT_LT((warm.u.front() - cold.u.front()).norm(), 1e-8);
}
