#include "masv/controller.hpp"
#include "masv/sysid.hpp"

#include <gtest/gtest.h>

#include <chrono>
#include <random>

using namespace masv;

namespace {

ControlInput excitation(double t) {
  return {0.2 + 0.15 * std::sin(1.1 * t), 0.2 + 0.15 * std::sin(0.7 * t + 1.0),
          0.2 + 0.15 * std::sin(1.7 * t + 2.0), 0.2 + 0.15 * std::sin(0.45 * t + 0.5)};
}

RunLog open_loop_log(const VehicleParams& p, double duration, double rate = 100.0) {
  SimOptions o;
  o.initial_state = State::Zero();
  o.control_rate = rate;
  o.dt_sim = 0.1 / rate;
  const auto h = [](double t, const State&, const RunLog&) { return excitation(t); };
  return run_scenario(p, CurveSpec{}, {}, h, duration, o);
}

VehicleParams light_payload() {
  VehicleParams p;
  p.payload = 0.2;
  return p;
}

/// Root-mean-square relative coefficient error over all 23 coefficients.
double rms_relative_error(const std::array<Eigen::VectorXd, 3>& est, const BasisCoefficients& truth) {
  double sum = 0.0;
  int n = 0;
  for (int eq = 1; eq <= 3; ++eq) {
    const Eigen::VectorXd t = truth.equation(eq);
    sum += ((est[eq - 1] - t).array() / t.array()).square().sum();
    n += static_cast<int>(t.size());
  }
  return std::sqrt(sum / n);
}

/// Strong-form baseline: central-difference accelerations regressed on the library rows.
Eigen::VectorXd strong_form(const RunLog& log, int eq) {
  const auto n = static_cast<Eigen::Index>(log.size());
  const int vel = velocity_channel(eq);
  Eigen::MatrixXd a(n - 2, basis_columns(eq));
  Eigen::VectorXd b(n - 2);
  for (Eigen::Index k = 1; k + 1 < n; ++k) {
    a.row(k - 1) = basis_row(eq, log.states[k], log.controls[k]).transpose();
    b(k - 1) = (log.states[k + 1](vel) - log.states[k - 1](vel)) / (log.t[k + 1] - log.t[k - 1]);
  }
  return a.colPivHouseholderQr().solve(b);
}

}  // namespace

TEST(TestFunctions, VanishAtSupportEnds) {
  for (const auto& f : build_test_functions(0.0, 30.0, 60)) {
    EXPECT_EQ(f.value(f.t_a), 0.0);
    EXPECT_EQ(f.value(f.t_b), 0.0);
    EXPECT_EQ(f.derivative(f.t_a), 0.0);
    EXPECT_EQ(f.derivative(f.t_b), 0.0);
    // Just inside the ends both are already tiny.
    const double eps = 1e-6 * (f.t_b - f.t_a);
    EXPECT_LT(std::abs(f.value(f.t_a + eps)), 1e-30);
    EXPECT_LT(std::abs(f.derivative(f.t_b - eps)), 1e-25);
  }
}

TEST(TestFunctions, PeakNormalised) {
  const auto f = make_test_function(0.0, 1.0, 7, 7);
  EXPECT_DOUBLE_EQ(f.peak_time(), 0.5);
  EXPECT_NEAR(f.value(0.5), 1.0, 1e-14);
  EXPECT_NEAR(f.derivative(0.5), 0.0, 1e-12);
  EXPECT_LT(f.value(0.49), 1.0);
  EXPECT_LT(f.value(0.51), 1.0);
  // Closed form C = 1 / (0.5^7 * 0.5^7).
  EXPECT_NEAR(f.scale, std::pow(2.0, 14), 1e-9);
}

TEST(TestFunctions, SupportsTileWindow) {
  const auto tests = build_test_functions(10.0, 40.0, 60);
  ASSERT_EQ(tests.size(), 60u);
  const double width = 2.0 * 30.0 / 61.0;
  EXPECT_EQ(tests.front().t_a, 10.0);
  EXPECT_EQ(tests.back().t_b, 40.0);
  for (std::size_t m = 0; m < tests.size(); ++m) {
    EXPECT_NEAR(tests[m].t_b - tests[m].t_a, width, 1e-9);
    if (m > 0) {
      EXPECT_LE(tests[m].t_a, tests[m - 1].t_b);
      EXPECT_NEAR(tests[m].t_a - tests[m - 1].t_a, width / 2.0, 1e-9);
    }
  }
}

TEST(TestFunctions, RejectsBadInputs) {
  EXPECT_THROW(build_test_functions(0.0, 1.5, 60), InvalidParameter);
  EXPECT_THROW(build_test_functions(0.0, 30.0, 5), InvalidParameter);
  EXPECT_THROW(make_test_function(1.0, 1.0, 7, 7), InvalidParameter);
  EXPECT_THROW(make_test_function(0.0, 1.0, 1, 7), InvalidParameter);
}

TEST(WeakForm, IntegrationByPartsIdentity) {
  // Smooth synthetic signal: thetadot = v(t), and the F1 column carries vdot(t),
  // so column 1 of G is int(phi vdot) and b is -int(phidot v).
  RunLog log;
  for (int k = 0; k <= 3000; ++k) {
    const double t = k * 0.01;
    State x = State::Zero();
    x(idx::kThetaDot) = std::sin(1.3 * t) + 0.5 * std::cos(0.7 * t);
    const double vdot = 1.3 * std::cos(1.3 * t) - 0.35 * std::sin(0.7 * t);
    log.append(t, x, ControlInput{vdot, 0.0, 0.0, 0.0}, ReferenceState::Zero());
  }
  const auto tests = build_test_functions(0.0, 30.0, 60);
  const auto sys = assemble_weak_system(log, 3, tests, false);
  for (Eigen::Index m = 0; m < sys.b.size(); ++m) {
    EXPECT_LT(std::abs(sys.g(m, 1) - sys.b(m)), 1e-8) << "test function " << m;
  }
}

TEST(WeakForm, EstimatorUsesOnlyVelocitiesOnRightHandSide) {
  // Positions and accelerations never enter b: scrambling positions leaves it unchanged.
  const auto log = open_loop_log(light_payload(), 10.0);
  RunLog scrambled = log;
  for (auto& x : scrambled.states) {
    x(idx::kX) += 5.0;
    x(idx::kY) -= 3.0;
  }
  const auto tests = build_test_functions(0.0, 10.0, 20);
  for (int eq = 1; eq <= 3; ++eq) {
    EXPECT_EQ(assemble_weak_system(log, eq, tests).b, assemble_weak_system(scrambled, eq, tests).b);
  }
}

TEST(WeakForm, RecoversGeneratingCoefficientsDenseSampling) {
  const auto p = light_payload();
  const auto log = open_loop_log(p, 30.0, 1000.0);
  const auto r = fit_model(log, 30.0);
  ASSERT_TRUE(r.complete());
  EXPECT_LT(max_relative_error(r.model.w, true_basis_coefficients(p)), 1e-6);
}

TEST(WeakForm, RecoveryAtThreeThousandSamples) {
  const auto p = light_payload();
  const auto log = open_loop_log(p, 30.0);
  ASSERT_EQ(log.size(), 3001u);
  const auto r = fit_model(log, 30.0);
  ASSERT_TRUE(r.complete());
  EXPECT_LT(max_relative_error(r.model.w, true_basis_coefficients(p)), 1e-4);
}

TEST(WeakForm, DampingFromCoastingSegment) {
  VehicleParams p;
  SimOptions o;
  State x0 = State::Zero();
  x0(idx::kXdot) = 0.2;
  o.initial_state = x0;
  const auto log = run_scenario(p, CurveSpec{}, {}, [](double, const State&, const RunLog&) { return ControlInput::Zero(); },
                                5.0, o);
  const auto sys = assemble_weak_system(log, 1, build_test_functions(0.0, 5.0, 20));
  const double w0 = sys.g.col(0).dot(sys.b) / sys.g.col(0).squaredNorm();
  const double expected = -drag_matrix(p)(0, 0) / effective_mass_matrix(p)(0, 0);
  EXPECT_NEAR(w0, expected, 1e-4 * std::abs(expected));
}

TEST(WeakForm, ZeroThrustIsRankDeficient) {
  VehicleParams p;
  SimOptions o;
  State x0 = State::Zero();
  x0(idx::kXdot) = 0.2;
  x0(idx::kThetaDot) = 0.3;
  o.initial_state = x0;
  const auto log = run_scenario(p, CurveSpec{}, {}, [](double, const State&, const RunLog&) { return ControlInput::Zero(); },
                                30.0, o);
  const auto tests = build_test_functions(0.0, 30.0, 60);
  try {
    weak_regression(log, 1, tests);
    FAIL() << "expected RankDeficient";
  } catch (const RankDeficient& e) {
    EXPECT_EQ(e.equation(), 1);
    EXPECT_EQ(e.columns(), (std::vector<int>{1, 2, 3, 4, 5, 6, 7, 8}));
    EXPECT_NE(std::string(e.what()).find("F1*sin(theta)"), std::string::npos);
  }
  LearnedModel previous{true_basis_coefficients(p)};
  previous.w.w1(0) = 123.0;
  const auto r = fit_model(log, 30.0, previous);
  EXPECT_FALSE(r.complete());
  EXPECT_EQ(r.failures.size(), 3u);
  EXPECT_EQ(r.model.w.w1(0), 123.0);
}

TEST(WeakForm, TooFewSamplesRejected) {
  const auto log = open_loop_log(VehicleParams{}, 0.5);
  EXPECT_THROW(weak_regression(log, 1, build_test_functions(0.0, 2.0, 9)), InvalidParameter);
  EXPECT_THROW(weak_regression(log, 4, build_test_functions(0.0, 2.0, 9)), InvalidParameter);
  EXPECT_THROW(fit_model(log, 30.0), InvalidParameter);
}

TEST(FitModel, DisjointWindowsAgree) {
  const auto log = open_loop_log(light_payload(), 60.0);
  const auto a = fit_model(log.window(0.0, 30.0), 30.0);
  const auto b = fit_model(log.window(30.0, 60.0), 30.0);
  ASSERT_TRUE(a.complete());
  ASSERT_TRUE(b.complete());
  EXPECT_LT(max_relative_error(a.model.w, b.model.w), 0.01);
  EXPECT_DOUBLE_EQ(b.model.window_start, 30.0);
  EXPECT_DOUBLE_EQ(b.model.window_end, 60.0);
}

TEST(FitModel, UsesTrailingWindow) {
  VehicleParams p;
  const auto h = [](double t, const State&, const RunLog&) { return excitation(t); };
  SimOptions o;
  o.initial_state = State::Zero();
  const auto log = run_scenario(p, CurveSpec{}, {ScenarioEvent::payload_set(20.0, 1.0)}, h, 60.0, o);
  VehicleParams heavy = p;
  heavy.payload = 1.0;
  const auto r = fit_model(log, 30.0);
  ASSERT_TRUE(r.complete());
  EXPECT_LT(max_relative_error(r.model.w, true_basis_coefficients(heavy)), 1e-3);
}

TEST(FitModel, RejectsWindowWithUnmodelledChange) {
  VehicleParams p;
  const auto h = [](double t, const State&, const RunLog&) { return excitation(t); };
  SimOptions o;
  o.initial_state = State::Zero();
  const auto log = run_scenario(p, CurveSpec{}, {ScenarioEvent::payload_set(15.0, 2.0)}, h, 30.0, o);
  LearnedModel previous{true_basis_coefficients(p)};
  const auto r = fit_model(log, 30.0, previous);
  EXPECT_FALSE(r.updated[0]);
  EXPECT_FALSE(r.updated[1]);
  EXPECT_FALSE(r.failures.empty());
  EXPECT_EQ(r.model.w.w1, previous.w.w1);
}

TEST(FitModel, ClosedLoopSineWindowWithinTwoPercent) {
  const auto p = light_payload();
  const CurveSpec curve = CurveSpec::default_sine();
  auto stack = control_tick_loop(nominal_model(p), curve, ControllerSettings{});
  const auto log = run_scenario(p, curve, {}, stack.handle(), 30.0);
  ASSERT_FALSE(log.failure);
  const auto start = std::chrono::steady_clock::now();
  const auto r = fit_model(log, 30.0);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  ASSERT_TRUE(r.complete()) << (r.failures.empty() ? "" : r.failures.front());
  EXPECT_LT(max_relative_error(r.model.w, true_basis_coefficients(p)), 0.02);
  EXPECT_LT(wall, 2.0);
}

TEST(FitModel, WeakFormBeatsStrongFormUnderVelocityNoise) {
  const auto p = light_payload();
  const auto truth = true_basis_coefficients(p);
  const auto clean = open_loop_log(p, 30.0);
  const auto tests = build_test_functions(0.0, 30.0, 60);
  int wins = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    RunLog noisy = clean;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 1e-3);
    for (auto& x : noisy.states) {
      for (int j = idx::kXdot; j <= idx::kThetaDot; ++j) x(j) += noise(rng);
    }
    std::array<Eigen::VectorXd, 3> weak, strong;
    for (int eq = 1; eq <= 3; ++eq) {
      weak[eq - 1] = weak_regression(noisy, eq, tests);
      strong[eq - 1] = strong_form(noisy, eq);
    }
    const double we = rms_relative_error(weak, truth);
    const double se = rms_relative_error(strong, truth);
    if (we < se) ++wins;
  }
  EXPECT_GE(wins, 9);
}

TEST(ModelEval, ZeroAtRestWithoutThrust) {
  const LearnedModel m{true_basis_coefficients(VehicleParams{})};
  State x = State::Zero();
  x(idx::kTheta) = 0.8;
  x(idx::kX) = 3.0;
  EXPECT_EQ(model_eval(m, x, ControlInput::Zero()).norm(), 0.0);
}

TEST(ModelEval, LinearInEachThrust) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  LearnedModel m;
  for (int i = 0; i < 9; ++i) {
    m.w.w1(i) = u(rng);
    m.w.w2(i) = u(rng);
  }
  for (int i = 0; i < 5; ++i) m.w.w3(i) = u(rng);
  State x;
  for (int i = 0; i < 6; ++i) x(i) = u(rng);
  for (int i = 0; i < 4; ++i) {
    ControlInput a = ControlInput::Zero(), b = ControlInput::Zero();
    a(i) = 0.3;
    b(i) = 0.9;
    const Vector3 base = model_eval(m, x, ControlInput::Zero());
    EXPECT_LT(((model_eval(m, x, b) - base) - 3.0 * (model_eval(m, x, a) - base)).norm(), 1e-14);
  }
}

TEST(ModelJacobians, MatchFiniteDifferences) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const LearnedModel m{true_basis_coefficients(VehicleParams{})};
  auto f = [&](const State& x, const ControlInput& c) {
    State dx;
    dx.head<3>() = x.tail<3>();
    dx.tail<3>() = model_eval(m, x, c);
    return dx;
  };
  for (int trial = 0; trial < 50; ++trial) {
    State x;
    for (int i = 0; i < 6; ++i) x(i) = 3.0 * u(rng);
    ControlInput c{u(rng), u(rng), u(rng), u(rng)};
    const auto j = model_jacobians(m, x, c);
    const double h = 1e-6;
    for (int i = 0; i < 6; ++i) {
      State xp = x, xm = x;
      xp(i) += h;
      xm(i) -= h;
      const State col = (f(xp, c) - f(xm, c)) / (2.0 * h);
      EXPECT_LT((col - j.dfdx.col(i)).norm(), 1e-6 * std::max(1.0, col.norm()));
    }
    for (int i = 0; i < 4; ++i) {
      ControlInput cp = c, cm = c;
      cp(i) += h;
      cm(i) -= h;
      const State col = (f(x, cp) - f(x, cm)) / (2.0 * h);
      EXPECT_LT((col - j.dfdu.col(i)).norm(), 1e-6 * std::max(1.0, col.norm()));
    }
    EXPECT_EQ(j.dfdu.topRows<3>().norm(), 0.0);
  }
}

TEST(ModelJacobians, ControlColumnsAtZeroHeading) {
  const LearnedModel m{true_basis_coefficients(VehicleParams{})};
  const auto j = model_jacobians(m, State::Zero(), ControlInput::Zero());
  for (int i = 0; i < 4; ++i) {
    EXPECT_DOUBLE_EQ(j.dfdu(3, i), m.w.w1(2 + 2 * i));
    EXPECT_DOUBLE_EQ(j.dfdu(4, i), m.w.w2(2 + 2 * i));
    EXPECT_DOUBLE_EQ(j.dfdu(5, i), m.w.w3(1 + i));
  }
}

TEST(Basis, ColumnLayout) {
  EXPECT_EQ(basis_columns(1), 9);
  EXPECT_EQ(basis_columns(2), 9);
  EXPECT_EQ(basis_columns(3), 5);
  State x = State::Zero();
  x(idx::kTheta) = 0.3;
  x(idx::kXdot) = 0.7;
  x(idx::kYdot) = -0.2;
  x(idx::kThetaDot) = 0.4;
  const ControlInput u{1.0, 2.0, 3.0, 4.0};
  const Eigen::VectorXd r1 = basis_row(1, x, u);
  EXPECT_EQ(r1(0), 0.7);
  EXPECT_EQ(r1(3), 2.0 * std::sin(0.3));
  EXPECT_EQ(r1(4), 2.0 * std::cos(0.3));
  EXPECT_EQ(basis_row(2, x, u)(0), -0.2);
  const Eigen::VectorXd r3 = basis_row(3, x, u);
  EXPECT_EQ(r3(0), 0.4);
  EXPECT_EQ(r3(4), 4.0);
  EXPECT_EQ(basis_column_name(1, 5), "F3*sin(theta)");
  EXPECT_EQ(basis_column_name(3, 0), "thetadot");
}
