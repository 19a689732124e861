#pragma once

// Fixed-step plant simulation with zero-order-hold controls, scenario events
// and a 100 Hz run log.

#include "masv/dynamics.hpp"
#include "masv/reference.hpp"

#include <array>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace masv {

enum class EventKind { kPayloadSet, kDisturbance };

struct ScenarioEvent {
  EventKind kind = EventKind::kPayloadSet;
  double time = 0.0;
  double payload_kg = 0.0;                          // payload_set
  Eigen::Vector2d force_xy = Eigen::Vector2d::Zero();  // disturbance [N]
  double couple_z = 0.0;                            // disturbance [N m]
  double duration = 0.0;                            // disturbance [s]

  static ScenarioEvent payload_set(double time, double kg) {
    ScenarioEvent e;
    e.kind = EventKind::kPayloadSet;
    e.time = time;
    e.payload_kg = kg;
    return e;
  }
  static ScenarioEvent disturbance(double time, Eigen::Vector2d force, double couple,
                                   double duration) {
    ScenarioEvent e;
    e.kind = EventKind::kDisturbance;
    e.time = time;
    e.force_xy = force;
    e.couple_z = couple;
    e.duration = duration;
    return e;
  }
};

inline void validate(const ScenarioEvent& e) {
  if (!(e.time >= 0.0)) throw InvalidParameter("event time must be non-negative");
  if (e.kind == EventKind::kDisturbance && !(e.duration > 0.0)) {
    throw InvalidParameter("disturbance duration must be positive");
  }
  if (e.kind == EventKind::kPayloadSet && !(e.payload_kg >= 0.0)) {
    throw InvalidParameter("payload must be non-negative");
  }
}

/// Time-stamped record of a run, one entry per control sample.
struct RunLog {
  std::vector<double> t;
  std::vector<State> states;
  std::vector<ControlInput> controls;
  std::vector<ReferenceState> references;
  std::vector<double> errors;
  std::optional<std::string> failure;

  std::size_t size() const { return t.size(); }
  bool empty() const { return t.empty(); }

  void append(double time, const State& x, const ControlInput& u, const ReferenceState& ref) {
    t.push_back(time);
    states.push_back(x);
    controls.push_back(u);
    references.push_back(ref);
    errors.push_back((x.head<2>() - ref.head<2>()).norm());
  }

  /// Samples with t0 <= t <= t1.
  RunLog window(double t0, double t1) const {
    RunLog out;
    for (std::size_t k = 0; k < size(); ++k) {
      if (t[k] >= t0 && t[k] <= t1) out.append(t[k], states[k], controls[k], references[k]);
    }
    return out;
  }
};

/// Classical RK4 step of xdot = f(x, u) + M_eff^-1 extra, u and extra held.
inline State rk4_step(const VehicleParams& p, const State& x, const ControlInput& u, double dt,
                      const GeneralizedForce& extra = {}) {
  if (!(dt > 0.0)) throw InvalidParameter("time step must be positive");
  const State k1 = state_derivative(p, x, u, extra);
  const State k2 = state_derivative(p, x + 0.5 * dt * k1, u, extra);
  const State k3 = state_derivative(p, x + 0.5 * dt * k2, u, extra);
  const State k4 = state_derivative(p, x + dt * k3, u, extra);
  const State next = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  if (!next.allFinite()) throw IntegrationBlowup("non-finite state after RK4 step", x, 0.0);
  return next;
}

struct SimOptions {
  double dt_sim = 1e-3;
  double control_rate = 100.0;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  std::optional<State> initial_state;  // defaults to the reference at t = 0
};

/// Called once per control sample with the measured state and the log so far
/// (which does not yet include the current sample).
using ControllerHandle =
    std::function<ControlInput(double t, const State& measured, const RunLog& history)>;

/// Integrates the plant over [0, t_end] under the given controller.
inline RunLog run_scenario(VehicleParams params, const CurveSpec& curve,
                           std::vector<ScenarioEvent> events, const ControllerHandle& controller,
                           double t_end, const SimOptions& opt = {}) {
  validate(params);
  if (!(t_end > 0.0)) throw InvalidParameter("t_end must be positive");
  for (const auto& e : events) validate(e);
  const auto substeps = static_cast<long long>(std::llround(1.0 / (opt.control_rate * opt.dt_sim)));
  if (substeps < 1 || std::abs(substeps * opt.dt_sim * opt.control_rate - 1.0) > 1e-9) {
    throw InvalidParameter("dt_sim must divide the control period");
  }
  const auto samples = static_cast<long long>(std::llround(t_end * opt.control_rate));

  const ReferenceTrajectory ref(curve);
  State x = opt.initial_state.value_or(ref.state(0.0));
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> noise(0.0, opt.noise_sigma > 0.0 ? opt.noise_sigma : 1.0);
  std::vector<bool> applied(events.size(), false);

  auto step_index = [&](double time) { return std::llround(time / opt.dt_sim); };

  RunLog log;
  for (long long k = 0; k <= samples; ++k) {
    const double t = static_cast<double>(k) / opt.control_rate;
    for (std::size_t i = 0; i < events.size(); ++i) {
      if (!applied[i] && events[i].kind == EventKind::kPayloadSet &&
          step_index(events[i].time) <= k * substeps) {
        params.payload = events[i].payload_kg;
        applied[i] = true;
      }
    }
    State measured = x;
    if (opt.noise_sigma > 0.0) {
      for (int j = 0; j < 6; ++j) measured(j) += noise(rng);
    }
    ControlInput u;
    try {
      u = controller(t, measured, log);
    } catch (const std::exception& ex) {
      log.failure = std::string("controller: ") + ex.what();
      return log;
    }
    log.append(t, measured, u, ref.state(t));
    if (k == samples) break;

    for (long long s = 0; s < substeps; ++s) {
      const long long i = k * substeps + s;
      GeneralizedForce extra;
      for (const auto& e : events) {
        if (e.kind == EventKind::kDisturbance && i >= step_index(e.time) &&
            i < step_index(e.time + e.duration)) {
          extra.qx += e.force_xy.x();
          extra.qy += e.force_xy.y();
          extra.qtheta += e.couple_z;
        }
      }
      try {
        x = rk4_step(params, x, u, opt.dt_sim, extra);
      } catch (const IntegrationBlowup&) {
        log.failure = "integration blowup at t=" + std::to_string(i * opt.dt_sim);
        return log;
      }
    }
  }
  return log;
}

inline const char* kRunLogHeader =
    "t,X_G,Y_G,theta,Xdot,Ydot,thetadot,F1,F2,F3,F4,X_d,Y_d,theta_d,e";

inline void write_csv(const RunLog& log, std::ostream& os) {
  os << kRunLogHeader << '\n';
  char buf[64];
  auto put = [&](double v, bool last = false) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    os << buf << (last ? '\n' : ',');
  };
  for (std::size_t k = 0; k < log.size(); ++k) {
    put(log.t[k]);
    for (int j = 0; j < 6; ++j) put(log.states[k](j));
    for (int j = 0; j < 4; ++j) put(log.controls[k](j));
    put(log.references[k](idx::kX));
    put(log.references[k](idx::kY));
    put(log.references[k](idx::kTheta));
    put(log.errors[k], true);
  }
  if (log.failure) os << "# failure: " << *log.failure << '\n';
}

inline void write_csv(const RunLog& log, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open " + path + " for writing");
  write_csv(log, os);
}

/// Reads a RunLog CSV. Reference velocities are not stored and come back as NaN.
inline RunLog read_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kRunLogHeader) throw Error("unexpected RunLog header");
  RunLog log;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line.rfind("# failure: ", 0) == 0) {
      log.failure = line.substr(11);
      continue;
    }
    std::array<double, 15> v{};
    std::istringstream ls(line);
    std::string cell;
    for (int j = 0; j < 15; ++j) {
      if (!std::getline(ls, cell, ',')) throw Error("short RunLog row: " + line);
      v[j] = std::stod(cell);
    }
    State x;
    for (int j = 0; j < 6; ++j) x(j) = v[1 + j];
    ControlInput u{v[7], v[8], v[9], v[10]};
    ReferenceState r;
    r << v[11], v[12], v[13], nan, nan, nan;
    log.t.push_back(v[0]);
    log.states.push_back(x);
    log.controls.push_back(u);
    log.references.push_back(r);
    log.errors.push_back(v[14]);
  }
  return log;
}

inline RunLog read_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open " + path);
  return read_csv(is);
}

}  // namespace masv
