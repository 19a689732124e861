#pragma once

// Scenario configuration and its JSON form.

#include "masv/controller.hpp"

#include "json.hpp"

#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace masv {

using json = nlohmann::json;

enum class ControllerMode { kNominal, kDataDriven };

inline std::string to_string(ControllerMode m) {
  return m == ControllerMode::kNominal ? "nominal" : "data_driven";
}

inline ControllerMode controller_mode_from_string(const std::string& s) {
  if (s == "nominal") return ControllerMode::kNominal;
  if (s == "data_driven") return ControllerMode::kDataDriven;
  throw InvalidParameter("unknown controller mode '" + s + "'");
}

/// What the nominal controller believes about the vehicle, relative to the plant.
struct NominalModelSpec {
  double payload = 0.0;
  double effective_radius_bias = 0.0;  // added to the plant's R_eff
};

struct MetricsSettings {
  double window_start = 35.0;
  double window_end = 120.0;  // clamped to the run duration
};

struct ScenarioConfig {
  std::string name = "scenario";
  VehicleParams vehicle;
  NominalModelSpec nominal;
  CurveSpec curve;
  ControllerMode mode = ControllerMode::kDataDriven;
  ControllerSettings controller;
  IdentifierSettings identification;
  std::vector<ScenarioEvent> events;
  double duration = 120.0;
  double dt_sim = 1e-3;
  double noise_sigma = 0.0;
  std::uint64_t seed = 1;
  MetricsSettings metrics;
  std::vector<double> sweep_payloads;  // payload sweep only
  std::string output_dir = "runs";

  VehicleParams nominal_params() const {
    VehicleParams p = vehicle;
    p.payload = nominal.payload;
    p.effective_radius += nominal.effective_radius_bias;
    return p;
  }
};

inline void validate(const ScenarioConfig& c) {
  validate(c.vehicle);
  validate(c.nominal_params());
  validate(c.curve);
  validate(c.controller);
  validate(c.identification);
  for (const auto& e : c.events) validate(e);
  if (!(c.duration > 0.0)) throw InvalidParameter("duration must be positive");
  if (c.mode == ControllerMode::kDataDriven && c.identification.refresh > c.duration) {
    throw InvalidParameter("data_driven mode requires refresh <= duration");
  }
  if (!(c.noise_sigma >= 0.0)) throw InvalidParameter("noise_sigma must be non-negative");
  if (!(c.metrics.window_end > c.metrics.window_start)) {
    throw InvalidParameter("metrics window must have end > start");
  }
  for (double p : c.sweep_payloads) {
    if (!(p >= 0.0)) throw InvalidParameter("sweep payloads must be non-negative");
  }
}

namespace detail {

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

template <int N>
Eigen::Matrix<double, N, N> read_weight(const json& j, const std::string& key,
                                        const Eigen::Matrix<double, N, N>& fallback) {
  if (j.contains(key)) {
    const auto rows = j.at(key).get<std::vector<std::vector<double>>>();
    if (rows.size() != N) throw InvalidParameter(key + " must be " + std::to_string(N) + "x" + std::to_string(N));
    Eigen::Matrix<double, N, N> m;
    for (int r = 0; r < N; ++r) {
      if (rows[r].size() != N) throw InvalidParameter(key + " has a ragged row");
      for (int c = 0; c < N; ++c) m(r, c) = rows[r][c];
    }
    return m;
  }
  if (j.contains(key + "_diag")) {
    const auto d = j.at(key + "_diag").get<std::vector<double>>();
    if (d.size() != N) throw InvalidParameter(key + "_diag must have " + std::to_string(N) + " entries");
    Eigen::Matrix<double, N, 1> v;
    for (int i = 0; i < N; ++i) v(i) = d[i];
    return v.asDiagonal();
  }
  return fallback;
}

template <int N>
json write_matrix(const Eigen::Matrix<double, N, N>& m) {
  json rows = json::array();
  for (int r = 0; r < N; ++r) {
    json row = json::array();
    for (int c = 0; c < N; ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

}  // namespace detail

inline void to_json(json& j, const VehicleParams& p) {
  j = json{{"mass", p.mass},
           {"inertia_zz", p.inertia_zz},
           {"thruster_offset", p.thruster_offset},
           {"beta", p.beta},
           {"effective_radius", p.effective_radius},
           {"rho_water", p.rho_water},
           {"mu_water", p.mu_water},
           {"payload", p.payload}};
}

inline void from_json(const json& j, VehicleParams& p) {
  detail::read_opt(j, "mass", p.mass);
  detail::read_opt(j, "inertia_zz", p.inertia_zz);
  detail::read_opt(j, "thruster_offset", p.thruster_offset);
  detail::read_opt(j, "beta", p.beta);
  detail::read_opt(j, "effective_radius", p.effective_radius);
  detail::read_opt(j, "rho_water", p.rho_water);
  detail::read_opt(j, "mu_water", p.mu_water);
  detail::read_opt(j, "payload", p.payload);
}

inline void to_json(json& j, const CurveSpec& c) {
  j = json{{"kind", to_string(c.kind)}, {"v0", c.v0}, {"amplitude", c.amplitude}, {"omega", c.omega}};
}

inline void from_json(const json& j, CurveSpec& c) {
  if (j.contains("kind")) {
    c.kind = curve_kind_from_string(j.at("kind").get<std::string>());
    if (c.kind == CurveKind::kSpiral) c = CurveSpec::default_spiral();
  }
  detail::read_opt(j, "v0", c.v0);
  detail::read_opt(j, "amplitude", c.amplitude);
  detail::read_opt(j, "omega", c.omega);
}

inline void to_json(json& j, const ScenarioEvent& e) {
  if (e.kind == EventKind::kPayloadSet) {
    j = json{{"type", "payload_set"}, {"time", e.time}, {"payload_kg", e.payload_kg}};
  } else {
    j = json{{"type", "disturbance"},
             {"time", e.time},
             {"force_xy", {e.force_xy.x(), e.force_xy.y()}},
             {"couple_z", e.couple_z},
             {"duration", e.duration}};
  }
}

inline void from_json(const json& j, ScenarioEvent& e) {
  const auto type = j.at("type").get<std::string>();
  const double time = j.at("time").get<double>();
  if (type == "payload_set") {
    e = ScenarioEvent::payload_set(time, j.at("payload_kg").get<double>());
  } else if (type == "disturbance") {
    const auto f = j.at("force_xy").get<std::vector<double>>();
    if (f.size() != 2) throw InvalidParameter("force_xy must have 2 entries");
    e = ScenarioEvent::disturbance(time, {f[0], f[1]}, j.value("couple_z", 0.0),
                                   j.at("duration").get<double>());
  } else {
    throw InvalidParameter("unknown event type '" + type + "'");
  }
}

inline void to_json(json& j, const BasisCoefficients& w) {
  auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  j = json{{"w1", vec(w.w1)}, {"w2", vec(w.w2)}, {"w3", vec(w.w3)}};
}

inline void from_json(const json& j, BasisCoefficients& w) {
  for (int eq = 1; eq <= 3; ++eq) {
    const auto v = j.at("w" + std::to_string(eq)).get<std::vector<double>>();
    if (static_cast<int>(v.size()) != basis_columns(eq)) {
      throw InvalidParameter("w" + std::to_string(eq) + " has the wrong length");
    }
    w.set_equation(eq, Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
  }
}

inline void to_json(json& j, const LearnedModel& m) {
  j = m.w;
  j["fit_time"] = m.fit_time;
  j["window"] = {m.window_start, m.window_end};
}

inline void from_json(const json& j, LearnedModel& m) {
  m.w = j.get<BasisCoefficients>();
  detail::read_opt(j, "fit_time", m.fit_time);
  if (j.contains("window")) {
    const auto w = j.at("window").get<std::vector<double>>();
    if (w.size() == 2) {
      m.window_start = w[0];
      m.window_end = w[1];
    }
  }
}

inline json config_to_json(const ScenarioConfig& c) {
  const auto& cs = c.controller;
  json j;
  j["name"] = c.name;
  j["vehicle"] = c.vehicle;
  j["nominal"] = {{"payload", c.nominal.payload},
                  {"effective_radius_bias", c.nominal.effective_radius_bias}};
  j["curve"] = c.curve;
  j["mode"] = to_string(c.mode);
  j["controller"] = {{"Q", detail::write_matrix<6>(cs.weights.q)},
                     {"R", detail::write_matrix<4>(cs.weights.r)},
                     {"Qf", detail::write_matrix<6>(cs.weights.q_f)},
                     {"horizon", cs.horizon},
                     {"grid", cs.grid},
                     {"rate", cs.rate},
                     {"solve_period", cs.solve_period},
                     {"thrust_guess", cs.thrust_guess},
                     {"max_consecutive_failures", cs.max_consecutive_failures},
                     {"warm_start", cs.warm_start},
                     {"newton_max_iterations", cs.newton.max_iterations},
                     {"newton_tolerance", cs.newton.tolerance}};
  const auto& id = c.identification;
  j["identification"] = {{"window", id.window},
                         {"refresh", id.refresh},
                         {"test_functions", id.weak.test_functions},
                         {"p", id.weak.p},
                         {"q", id.weak.q},
                         {"rank_tolerance", id.weak.rank_tolerance},
                         {"zero_order_hold", id.weak.zero_order_hold},
                         {"max_relative_residual", id.weak.max_relative_residual}};
  j["events"] = c.events;
  j["duration"] = c.duration;
  j["dt_sim"] = c.dt_sim;
  j["noise_sigma"] = c.noise_sigma;
  j["seed"] = c.seed;
  j["metrics"] = {{"window", {c.metrics.window_start, c.metrics.window_end}}};
  if (!c.sweep_payloads.empty()) j["sweep"] = {{"payloads", c.sweep_payloads}};
  j["output_dir"] = c.output_dir;
  return j;
}

/// Missing keys keep their defaults.
inline ScenarioConfig config_from_json(const json& j) {
  ScenarioConfig c;
  detail::read_opt(j, "name", c.name);
  if (j.contains("vehicle")) c.vehicle = j.at("vehicle").get<VehicleParams>();
  if (j.contains("nominal")) {
    detail::read_opt(j.at("nominal"), "payload", c.nominal.payload);
    detail::read_opt(j.at("nominal"), "effective_radius_bias", c.nominal.effective_radius_bias);
  }
  if (j.contains("curve")) c.curve = j.at("curve").get<CurveSpec>();
  if (j.contains("mode")) c.mode = controller_mode_from_string(j.at("mode").get<std::string>());
  if (j.contains("controller")) {
    const auto& cj = j.at("controller");
    auto& cs = c.controller;
    cs.weights.q = detail::read_weight<6>(cj, "Q", cs.weights.q);
    cs.weights.r = detail::read_weight<4>(cj, "R", cs.weights.r);
    cs.weights.q_f = detail::read_weight<6>(cj, "Qf", cs.weights.q_f);
    detail::read_opt(cj, "horizon", cs.horizon);
    detail::read_opt(cj, "grid", cs.grid);
    detail::read_opt(cj, "rate", cs.rate);
    detail::read_opt(cj, "solve_period", cs.solve_period);
    detail::read_opt(cj, "thrust_guess", cs.thrust_guess);
    detail::read_opt(cj, "max_consecutive_failures", cs.max_consecutive_failures);
    detail::read_opt(cj, "warm_start", cs.warm_start);
    detail::read_opt(cj, "newton_max_iterations", cs.newton.max_iterations);
    detail::read_opt(cj, "newton_tolerance", cs.newton.tolerance);
  }
  if (j.contains("identification")) {
    const auto& ij = j.at("identification");
    auto& id = c.identification;
    detail::read_opt(ij, "window", id.window);
    detail::read_opt(ij, "refresh", id.refresh);
    detail::read_opt(ij, "test_functions", id.weak.test_functions);
    detail::read_opt(ij, "p", id.weak.p);
    detail::read_opt(ij, "q", id.weak.q);
    detail::read_opt(ij, "rank_tolerance", id.weak.rank_tolerance);
    detail::read_opt(ij, "zero_order_hold", id.weak.zero_order_hold);
    detail::read_opt(ij, "max_relative_residual", id.weak.max_relative_residual);
  }
  if (j.contains("events")) c.events = j.at("events").get<std::vector<ScenarioEvent>>();
  detail::read_opt(j, "duration", c.duration);
  detail::read_opt(j, "dt_sim", c.dt_sim);
  detail::read_opt(j, "noise_sigma", c.noise_sigma);
  detail::read_opt(j, "seed", c.seed);
  if (j.contains("metrics") && j.at("metrics").contains("window")) {
    const auto w = j.at("metrics").at("window").get<std::vector<double>>();
    if (w.size() != 2) throw InvalidParameter("metrics.window must have 2 entries");
    c.metrics.window_start = w[0];
    c.metrics.window_end = w[1];
  }
  if (j.contains("sweep")) detail::read_opt(j.at("sweep"), "payloads", c.sweep_payloads);
  detail::read_opt(j, "output_dir", c.output_dir);
  validate(c);
  return c;
}

inline ScenarioConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open config " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& ex) {
    throw InvalidParameter("config " + path + ": " + ex.what());
  }
  try {
    return config_from_json(j);
  } catch (const json::exception& ex) {
    throw InvalidParameter("config " + path + ": " + ex.what());
  }
}

}  // namespace masv
