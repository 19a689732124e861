#pragma once

// Receding-horizon TPBVP controller and the online weak-form identifier that
// feeds it.

#include "masv/ocp.hpp"
#include "masv/projection.hpp"
#include "masv/simulator.hpp"
#include "masv/sysid.hpp"

#include <chrono>
#include <future>
#include <memory>
#include <mutex>
#include <optional>
#include <vector>

namespace masv {

/// Single-writer / single-reader slot holding the current model. Readers get a
/// whole model or the previous one, never a mix.
class ModelSlot {
 public:
  explicit ModelSlot(LearnedModel initial)
      : model_(std::make_shared<const LearnedModel>(std::move(initial))) {}

  void publish(LearnedModel m) {
    auto next = std::make_shared<const LearnedModel>(std::move(m));
    std::lock_guard lock(mutex_);
    model_ = std::move(next);
    ++version_;
  }

  std::shared_ptr<const LearnedModel> load() const {
    std::lock_guard lock(mutex_);
    return model_;
  }

  std::uint64_t version() const {
    std::lock_guard lock(mutex_);
    return version_;
  }

 private:
  mutable std::mutex mutex_;
  std::shared_ptr<const LearnedModel> model_;
  std::uint64_t version_ = 0;
};

/// Nominal physics model expressed in the identification basis.
inline LearnedModel nominal_model(const VehicleParams& p) {
  LearnedModel m;
  m.w = true_basis_coefficients(p);
  return m;
}

struct ControllerSettings {
  CostWeights weights = CostWeights::defaults();
  double horizon = 1.0;
  int grid = 20;
  double rate = 100.0;
  double solve_period = 1.0;
  double thrust_guess = 0.2;
  int max_consecutive_failures = 3;
  bool warm_start = true;
  NewtonSettings newton;
};

inline void validate(const ControllerSettings& s) {
  validate(s.weights);
  if (!(s.horizon > 0.0) || s.grid < 2 || !(s.rate > 0.0) || !(s.solve_period > 0.0)) {
    throw InvalidParameter("controller requires horizon > 0, grid >= 2, rate > 0, solve_period > 0");
  }
  if (s.solve_period > s.horizon + 1e-12) {
    throw InvalidParameter("solve period must not exceed the horizon");
  }
}

struct SolveRecord {
  double t = 0.0;
  bool converged = false;
  bool warm = false;
  int iterations = 0;
  double residual = 0.0;
  PontryaginResiduals pontryagin;
  double wall_s = 0.0;
  double model_fit_time = 0.0;
  std::string error;
};

class TpbvpController {
 public:
  TpbvpController(std::shared_ptr<ModelSlot> slot, CurveSpec curve, ControllerSettings settings)
      : slot_(std::move(slot)), ref_(curve), settings_(std::move(settings)) {
    validate(settings_);
  }

  ControlInput operator()(double t, const State& measured) {
    if (fault_) return ControlInput::Zero();
    if (!sequence_ || t >= next_solve_ - 0.5 / settings_.rate) {
      solve(t, measured);
      next_solve_ = (next_solve_ > 0.0 ? next_solve_ : t) + settings_.solve_period;
      while (next_solve_ <= t + 0.5 / settings_.rate) next_solve_ += settings_.solve_period;
      if (fault_) return ControlInput::Zero();
    }
    if (!sequence_) return ControlInput::Zero();
    const auto j = static_cast<long long>(std::llround((t - sequence_->t0) * settings_.rate));
    const auto& raw = sequence_->raw;
    const ControlInput u = raw[static_cast<std::size_t>(std::clamp<long long>(j, 0, static_cast<long long>(raw.size()) - 1))];
    const auto proj = project_thrusts(sequence_->model->w, measured(idx::kTheta), u, settings_.thrust_guess);
    if (proj.saturated) ++saturated_ticks_;
    return proj.thrust;
  }

  bool fault() const { return fault_; }
  const std::vector<SolveRecord>& records() const { return records_; }
  long long saturated_ticks() const { return saturated_ticks_; }
  const ControllerSettings& settings() const { return settings_; }

  /// Model behind the sequence currently being emitted.
  std::shared_ptr<const LearnedModel> active_model() const {
    return sequence_ ? sequence_->model : nullptr;
  }

 private:
  struct Sequence {
    double t0 = 0.0;
    std::vector<ControlInput> raw;
    std::shared_ptr<const LearnedModel> model;
  };

  void solve(double t, const State& measured) {
    SolveRecord rec;
    rec.t = t;
    auto model = slot_->load();
    rec.model_fit_time = model->fit_time;
    OCProblem prob;
    prob.model = model->w;
    prob.weights = settings_.weights;
    prob.x0 = measured;
    prob.t0 = t;
    prob.horizon = settings_.horizon;
    prob.grid = settings_.grid;
    prob.reference = sample_reference(ref_, t, settings_.horizon, settings_.grid, measured(idx::kTheta));

    std::optional<OCSolution> warm;
    if (settings_.warm_start && last_) {
      warm = *last_;
      // Keep the warm start on the same heading branch as the new reference.
      const double two_pi = 2.0 * std::numbers::pi;
      const double turns = std::round((prob.reference.front()(idx::kTheta) -
                                       last_reference_theta_) / two_pi);
      if (turns != 0.0) {
        for (auto& x : warm->x) x(idx::kTheta) += turns * two_pi;
      }
    }
    rec.warm = warm.has_value();
    const auto start = std::chrono::steady_clock::now();
    try {
      OCSolution sol = solve_tpbvp(prob, warm, settings_.newton);
      rec.wall_s = seconds_since(start);
      rec.converged = true;
      rec.iterations = sol.iterations;
      rec.residual = sol.residual_norm;
      rec.pontryagin = pontryagin_residuals(prob, sol);
      sequence_ = Sequence{t, extract_control_sequence(sol, settings_.rate), model};
      last_reference_theta_ = prob.reference.front()(idx::kTheta);
      last_ = std::move(sol);
      consecutive_failures_ = 0;
    } catch (const SolverNonConvergence& ex) {
      rec.wall_s = seconds_since(start);
      rec.iterations = ex.best_iterate().iterations;
      rec.residual = ex.best_iterate().residual_norm;
      rec.error = ex.what();
      on_failure();
    } catch (const Error& ex) {
      rec.wall_s = seconds_since(start);
      rec.error = ex.what();
      on_failure();
    }
    records_.push_back(std::move(rec));
  }

  void on_failure() {
    ++consecutive_failures_;
    last_.reset();
    if (consecutive_failures_ > settings_.max_consecutive_failures) fault_ = true;
  }

  static double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }

  std::shared_ptr<ModelSlot> slot_;
  ReferenceTrajectory ref_;
  ControllerSettings settings_;
  std::optional<Sequence> sequence_;
  std::optional<OCSolution> last_;
  double last_reference_theta_ = 0.0;
  double next_solve_ = 0.0;
  int consecutive_failures_ = 0;
  bool fault_ = false;
  long long saturated_ticks_ = 0;
  std::vector<SolveRecord> records_;
};

struct IdentifierSettings {
  double window = 30.0;
  double refresh = 30.0;
  WeakFormSettings weak;
};

inline void validate(const IdentifierSettings& s) {
  if (!(s.window >= 2.0)) throw InvalidParameter("identification window must be at least 2 s");
  if (!(s.refresh > 0.0)) throw InvalidParameter("refresh period must be positive");
  if (s.weak.test_functions < 9) throw InvalidParameter("need at least 9 test functions");
}

struct FitRecord {
  double launched = 0.0;
  double published = 0.0;
  double wall_s = 0.0;
  FitReport report;
};

/// Refits the model every `refresh` seconds on the trailing `window` of the log.
/// Fits run on a worker thread; a result is published at the first sample at or
/// after `launch + publish_delay`, which keeps runs reproducible.
class OnlineIdentifier {
 public:
  OnlineIdentifier(std::shared_ptr<ModelSlot> slot, IdentifierSettings settings, double publish_delay)
      : slot_(std::move(slot)), settings_(settings), publish_delay_(publish_delay) {
    validate(settings_);
    next_fit_ = settings_.refresh;
  }

  ~OnlineIdentifier() {
    if (pending_.valid()) pending_.wait();
  }

  void on_sample(double t, const RunLog& history) {
    constexpr double eps = 1e-9;
    if (pending_.valid() && t >= publish_at_ - eps) {
      auto [report, wall] = pending_.get();
      FitRecord rec{launched_, t, wall, std::move(report)};
      if (std::any_of(rec.report.updated.begin(), rec.report.updated.end(), [](bool b) { return b; })) {
        slot_->publish(rec.report.model);
      }
      records_.push_back(std::move(rec));
    }
    if (!pending_.valid() && t >= next_fit_ - eps && !history.empty() &&
        t - history.t.front() >= settings_.window - eps) {
      // The window ends at the current tick; its sample is not in the history yet.
      RunLog slice = history.window(t - settings_.window - eps, t);
      LearnedModel previous = *slot_->load();
      const auto weak = settings_.weak;
      const double window = settings_.window;
      launched_ = t;
      publish_at_ = t + publish_delay_;
      pending_ = std::async(std::launch::async, [slice = std::move(slice), previous, weak, window]() {
        const auto start = std::chrono::steady_clock::now();
        FitReport r = fit_model(slice, std::min(window, slice.t.back() - slice.t.front()), previous, weak);
        const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        return std::pair{std::move(r), wall};
      });
      while (next_fit_ <= t + eps) next_fit_ += settings_.refresh;
    }
  }

  const std::vector<FitRecord>& records() const { return records_; }

 private:
  std::shared_ptr<ModelSlot> slot_;
  IdentifierSettings settings_;
  double publish_delay_;
  double next_fit_;
  double launched_ = 0.0;
  double publish_at_ = 0.0;
  std::future<std::pair<FitReport, double>> pending_;
  std::vector<FitRecord> records_;
};

/// Controller plus optional identifier sharing one model slot.
struct ControlStack {
  std::shared_ptr<ModelSlot> slot;
  std::shared_ptr<TpbvpController> controller;
  std::shared_ptr<OnlineIdentifier> identifier;

  ControllerHandle handle() const {
    auto c = controller;
    auto id = identifier;
    return [c, id](double t, const State& measured, const RunLog& history) {
      if (id) id->on_sample(t, history);
      return (*c)(t, measured);
    };
  }
};

/// Builds the 100 Hz control loop. With identification settings the model is
/// refit online starting from `initial`; otherwise `initial` is used throughout.
inline ControlStack control_tick_loop(LearnedModel initial, const CurveSpec& curve,
                                      const ControllerSettings& settings,
                                      const std::optional<IdentifierSettings>& ident = {}) {
  ControlStack s;
  s.slot = std::make_shared<ModelSlot>(std::move(initial));
  s.controller = std::make_shared<TpbvpController>(s.slot, curve, settings);
  if (ident) s.identifier = std::make_shared<OnlineIdentifier>(s.slot, *ident, settings.solve_period);
  return s;
}

}  // namespace masv
