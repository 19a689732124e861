#pragma once

// Weak-form identification of the basis coefficients.
//
// For each compactly supported test function phi_m the equation
// qddot_i = Theta_i w_i is integrated against phi_m and the derivative moved
// onto the test function:
//     integral(phi_m Theta_i) w_i = -integral(phidot_m qdot_i).
// Only logged velocities and the analytic phidot enter the right-hand side.

#include "masv/basis.hpp"
#include "masv/simulator.hpp"

#include <algorithm>
#include <array>
#include <optional>
#include <string>
#include <vector>

namespace masv {

/// phi(t) = C (t - t_a)^p (t_b - t)^q on [t_a, t_b], zero elsewhere.
struct TestFunction {
  double t_a = 0.0;
  double t_b = 1.0;
  int p = 7;
  int q = 7;
  double scale = 1.0;  // C

  double value(double t) const {
    if (t <= t_a || t >= t_b) return 0.0;
    return scale * std::pow(t - t_a, p) * std::pow(t_b - t, q);
  }

  double derivative(double t) const {
    if (t <= t_a || t >= t_b) return 0.0;
    const double a = t - t_a;
    const double b = t_b - t;
    return scale * (p * std::pow(a, p - 1) * std::pow(b, q) - q * std::pow(a, p) * std::pow(b, q - 1));
  }

  double peak_time() const { return (q * t_a + p * t_b) / static_cast<double>(p + q); }
};

inline TestFunction make_test_function(double t_a, double t_b, int p, int q) {
  if (!(t_b > t_a)) throw InvalidParameter("test function support must have t_b > t_a");
  if (p < 2 || q < 2) throw InvalidParameter("test function powers must be >= 2");
  TestFunction f{t_a, t_b, p, q, 1.0};
  const double tp = f.peak_time();
  f.scale = 1.0 / (std::pow(tp - t_a, p) * std::pow(t_b - tp, q));
  return f;
}

/// M peak-normalised test functions with uniform 50%-overlapping supports tiling [t_a, t_b].
inline std::vector<TestFunction> build_test_functions(double t_a, double t_b, int count, int p = 7,
                                                      int q = 7, int min_count = 9) {
  if (!(t_b - t_a >= 2.0)) throw InvalidParameter("identification window must be at least 2 s");
  if (count < min_count) {
    throw InvalidParameter("need at least " + std::to_string(min_count) + " test functions");
  }
  const double width = 2.0 * (t_b - t_a) / (count + 1);
  std::vector<TestFunction> tests;
  tests.reserve(count);
  for (int m = 0; m < count; ++m) {
    const double start = t_a + 0.5 * width * m;
    const double end = (m == count - 1) ? t_b : start + width;
    tests.push_back(make_test_function(start, end, p, q));
  }
  return tests;
}

class RankDeficient : public Error {
 public:
  RankDeficient(int equation, std::vector<int> columns)
      : Error(describe(equation, columns)), equation_(equation), columns_(std::move(columns)) {}
  int equation() const { return equation_; }
  const std::vector<int>& columns() const { return columns_; }

 private:
  static std::string describe(int equation, const std::vector<int>& columns) {
    std::string s = "equation " + std::to_string(equation) + " is rank deficient in columns:";
    for (int c : columns) s += " " + basis_column_name(equation, c);
    return s;
  }
  int equation_;
  std::vector<int> columns_;
};

struct WeakFormSettings {
  int test_functions = 60;
  int p = 7;
  int q = 7;
  /// Columns whose scaled R diagonal falls below this fraction of the largest are deficient.
  double rank_tolerance = 1e-9;
  /// Treat logged controls as held over each sample interval (the plant's
  /// actual input) instead of interpolating them linearly.
  bool zero_order_hold = true;
  /// fit_model rejects an equation whose weak residual |G w - b| / |b| exceeds
  /// this (unmodelled forces in the window, e.g. a disturbance or a payload change).
  double max_relative_residual = 0.02;
};

/// Trapezoid weights for possibly non-uniform sample times.
inline Eigen::VectorXd trapezoid_weights(const std::vector<double>& t) {
  const auto n = static_cast<Eigen::Index>(t.size());
  Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
  for (Eigen::Index k = 0; k + 1 < n; ++k) {
    const double h = t[k + 1] - t[k];
    w(k) += 0.5 * h;
    w(k + 1) += 0.5 * h;
  }
  return w;
}

inline int velocity_channel(int equation) {
  return equation == 1 ? idx::kXdot : equation == 2 ? idx::kYdot : idx::kThetaDot;
}

/// Weak-form linear system (G, b) with G w = b for one equation.
struct WeakSystem {
  Eigen::MatrixXd g;
  Eigen::VectorXd b;
};

inline WeakSystem assemble_weak_system(const RunLog& log, int equation,
                                       const std::vector<TestFunction>& tests,
                                       bool zero_order_hold = true) {
  const auto n = static_cast<Eigen::Index>(log.size());
  const int cols = basis_columns(equation);
  const auto m_count = static_cast<Eigen::Index>(tests.size());
  WeakSystem sys{Eigen::MatrixXd::Zero(m_count, cols), Eigen::VectorXd::Zero(m_count)};
  if (n < 2) return sys;
  const int vel = velocity_channel(equation);
  // Trapezoid rule per interval [t_k, t_k+1]. Under zero-order hold the control
  // over the interval is u_k at both ends.
  Eigen::MatrixXd left(n - 1, cols);
  Eigen::MatrixXd right(n - 1, cols);
  for (Eigen::Index k = 0; k + 1 < n; ++k) {
    const ControlInput& u_right = zero_order_hold ? log.controls[k] : log.controls[k + 1];
    left.row(k) = basis_row(equation, log.states[k], log.controls[k]).transpose();
    right.row(k) = basis_row(equation, log.states[k + 1], u_right).transpose();
  }
  for (Eigen::Index m = 0; m < m_count; ++m) {
    const auto& f = tests[m];
    auto first = std::upper_bound(log.t.begin(), log.t.end(), f.t_a);
    auto k = std::max<Eigen::Index>(0, static_cast<Eigen::Index>(first - log.t.begin()) - 1);
    for (; k + 1 < n && log.t[k] < f.t_b; ++k) {
      const double h = log.t[k + 1] - log.t[k];
      const double p0 = f.value(log.t[k]);
      const double p1 = f.value(log.t[k + 1]);
      sys.g.row(m) += 0.5 * h * (p0 * left.row(k) + p1 * right.row(k));
      sys.b(m) -= 0.5 * h * (f.derivative(log.t[k]) * log.states[k](vel) +
                             f.derivative(log.t[k + 1]) * log.states[k + 1](vel));
    }
  }
  return sys;
}

/// Least-squares coefficients for one equation over the samples in `log`.
inline Eigen::VectorXd weak_regression(const RunLog& log, int equation,
                                       const std::vector<TestFunction>& tests,
                                       const WeakFormSettings& settings = {}) {
  if (equation < 1 || equation > 3) throw InvalidParameter("equation index must be 1, 2 or 3");
  if (log.size() < 100) throw InvalidParameter("weak regression needs at least 100 samples");
  const auto sys = assemble_weak_system(log, equation, tests, settings.zero_order_hold);
  const int cols = basis_columns(equation);

  // Equilibrate columns so the rank test compares like with like.
  Eigen::VectorXd norms = sys.g.colwise().norm().transpose();
  const double largest = norms.maxCoeff();
  std::vector<int> deficient;
  Eigen::VectorXd scale(cols);
  for (int j = 0; j < cols; ++j) {
    if (!(norms(j) > settings.rank_tolerance * largest)) deficient.push_back(j);
    scale(j) = norms(j) > 0.0 ? 1.0 / norms(j) : 1.0;
  }
  if (!deficient.empty()) throw RankDeficient(equation, deficient);

  const Eigen::MatrixXd scaled = sys.g * scale.asDiagonal();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(scaled);
  qr.setThreshold(settings.rank_tolerance);
  if (qr.rank() < cols) {
    const auto& perm = qr.colsPermutation().indices();
    for (Eigen::Index j = qr.rank(); j < cols; ++j) deficient.push_back(perm(j));
    std::sort(deficient.begin(), deficient.end());
    throw RankDeficient(equation, deficient);
  }
  return scale.asDiagonal() * qr.solve(sys.b);
}

/// |G w - b| / |b| of the weak system for coefficients w.
inline double weak_relative_residual(const RunLog& log, int equation,
                                     const std::vector<TestFunction>& tests, const Eigen::VectorXd& w,
                                     const WeakFormSettings& settings = {}) {
  const auto sys = assemble_weak_system(log, equation, tests, settings.zero_order_hold);
  const double bn = sys.b.norm();
  const double rn = (sys.g * w - sys.b).norm();
  return bn > 0.0 ? rn / bn : rn;
}

/// Identified coefficient set plus the window it was fit on.
struct LearnedModel {
  BasisCoefficients w;
  double fit_time = 0.0;
  double window_start = 0.0;
  double window_end = 0.0;
};

inline Vector3 model_eval(const LearnedModel& mdl, const State& x, const ControlInput& u) {
  return basis_accel(mdl.w, x, u);
}

struct ModelJacobians {
  Matrix6 dfdx;
  Matrix64 dfdu;
};

/// df/dx and df/du of the state-space form xdot = [qdot; g(x, u)].
inline ModelJacobians basis_jacobians(const BasisCoefficients& w, const State& x,
                                      const ControlInput& u) {
  const double theta = x(idx::kTheta);
  ModelJacobians j;
  j.dfdx.setZero();
  j.dfdx.block<3, 3>(0, 3).setIdentity();
  j.dfdx.block<3, 1>(3, idx::kTheta) = basis_control_map_dtheta(w, theta) * u;
  j.dfdx(3, idx::kXdot) = w.w1(0);
  j.dfdx(4, idx::kYdot) = w.w2(0);
  j.dfdx(5, idx::kThetaDot) = w.w3(0);
  j.dfdu.setZero();
  j.dfdu.bottomRows<3>() = basis_control_map(w, theta);
  return j;
}

inline ModelJacobians model_jacobians(const LearnedModel& mdl, const State& x,
                                      const ControlInput& u) {
  return basis_jacobians(mdl.w, x, u);
}

struct FitReport {
  LearnedModel model;
  std::array<bool, 3> updated{false, false, false};
  std::vector<std::string> failures;

  bool complete() const { return updated[0] && updated[1] && updated[2]; }
};

/// Fits all three equations on the trailing `window` seconds of the log.
/// Equations that fail keep the coefficients of `previous`.
inline FitReport fit_model(const RunLog& log, double window, const LearnedModel& previous,
                           const WeakFormSettings& settings = {}) {
  if (log.empty() || log.t.back() - log.t.front() < window - 1e-9) {
    throw InvalidParameter("log is shorter than the identification window");
  }
  const double t_end = log.t.back();
  const double t_start = t_end - window;
  const RunLog slice = log.window(t_start - 1e-9, t_end);
  const auto tests =
      build_test_functions(t_start, t_end, settings.test_functions, settings.p, settings.q);

  FitReport report;
  report.model = previous;
  report.model.fit_time = t_end;
  report.model.window_start = t_start;
  report.model.window_end = t_end;
  for (int eq = 1; eq <= 3; ++eq) {
    try {
      const Eigen::VectorXd w = weak_regression(slice, eq, tests, settings);
      if (!w.allFinite()) throw Error("non-finite coefficients");
      const double res = weak_relative_residual(slice, eq, tests, w, settings);
      if (!(res <= settings.max_relative_residual)) {
        throw Error("equation " + std::to_string(eq) + " weak residual " + std::to_string(res) +
                    " exceeds " + std::to_string(settings.max_relative_residual));
      }
      report.model.w.set_equation(eq, w);
      report.updated[eq - 1] = true;
    } catch (const Error& ex) {
      report.failures.push_back(ex.what());
    }
  }
  return report;
}

inline FitReport fit_model(const RunLog& log, double window, const WeakFormSettings& settings = {}) {
  return fit_model(log, window, LearnedModel{}, settings);
}

/// Largest |w_hat - w| / |w| over all coefficients.
inline double max_relative_error(const BasisCoefficients& estimate, const BasisCoefficients& truth) {
  double worst = 0.0;
  for (int eq = 1; eq <= 3; ++eq) {
    const Eigen::VectorXd e = estimate.equation(eq);
    const Eigen::VectorXd t = truth.equation(eq);
    for (Eigen::Index j = 0; j < t.size(); ++j) {
      const double denom = std::max(std::abs(t(j)), 1e-300);
      worst = std::max(worst, std::abs(e(j) - t(j)) / denom);
    }
  }
  return worst;
}

}  // namespace masv
