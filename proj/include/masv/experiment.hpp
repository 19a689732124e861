#pragma once

// Scenario runner: wires plant, controller and identifier from a config,
// computes metrics and writes run artifacts.

#include "masv/config.hpp"
#include "masv/metrics.hpp"
#include "masv/plots.hpp"

#include <atomic>
#include <filesystem>
#include <thread>

namespace masv {

struct PhaseStats {
  std::string name;
  double t0 = 0.0;
  double t1 = 0.0;
  ErrorStats stats;
};

struct MetricsReport {
  double window_start = 0.0;
  double window_end = 0.0;
  double mean_err_m = 0.0;
  double max_err_m = 0.0;
  std::vector<PhaseStats> phases;
  std::optional<double> disturbance_time;
  std::optional<DisturbanceMetrics> disturbance;
  double coeff_rel_err = 0.0;
  bool fault = false;
  std::optional<std::string> failure;
};

struct RunResult {
  ScenarioConfig config;
  RunLog log;
  MetricsReport metrics;
  std::vector<SolveRecord> solves;
  std::vector<FitRecord> fits;
  long long saturated_ticks = 0;
  LearnedModel final_model;
};

inline std::optional<double> first_event_time(const ScenarioConfig& c, EventKind kind) {
  std::optional<double> t;
  for (const auto& e : c.events) {
    if (e.kind == kind && (!t || e.time < *t)) t = e.time;
  }
  return t;
}

inline std::optional<double> first_event_time(const ScenarioConfig& c) {
  std::optional<double> t;
  for (const auto& e : c.events) if (!t || e.time < *t) t = e.time;
  return t;
}

/// Plant parameters in force at the end of the run.
inline VehicleParams final_plant_params(const ScenarioConfig& c) {
  VehicleParams p = c.vehicle;
  std::vector<ScenarioEvent> ev = c.events;
  std::stable_sort(ev.begin(), ev.end(), [](const auto& a, const auto& b) { return a.time < b.time; });
  for (const auto& e : ev) {
    if (e.kind == EventKind::kPayloadSet && e.time <= c.duration) p.payload = e.payload_kg;
  }
  return p;
}

inline MetricsReport compute_metrics(const ScenarioConfig& cfg, const RunLog& log) {
  MetricsReport m;
  if (log.empty()) throw InvalidParameter("empty run log");
  const double end = log.t.back();
  m.window_start = cfg.metrics.window_start;
  m.window_end = std::min(cfg.metrics.window_end, end);
  const auto overall = tracking_error_stats(log, m.window_start, m.window_end);
  m.mean_err_m = overall.mean;
  m.max_err_m = overall.max;
  if (const auto te = first_event_time(cfg); te && *te > 0.0 && *te < end) {
    m.phases.push_back({"pre_event", 0.0, *te, tracking_error_stats(log, 0.0, *te)});
    m.phases.push_back({"post_event", *te, end, tracking_error_stats(log, *te, end)});
  } else {
    m.phases.push_back({"whole_run", 0.0, end, tracking_error_stats(log, 0.0, end)});
  }
  if (const auto td = first_event_time(cfg, EventKind::kDisturbance); td && *td < end) {
    m.disturbance_time = *td;
    m.disturbance = disturbance_metrics(log, *td);
  }
  m.failure = log.failure;
  return m;
}

inline RunResult run_config(const ScenarioConfig& cfg) {
  validate(cfg);
  RunResult r;
  r.config = cfg;
  std::optional<IdentifierSettings> ident;
  if (cfg.mode == ControllerMode::kDataDriven) ident = cfg.identification;
  auto stack = control_tick_loop(nominal_model(cfg.nominal_params()), cfg.curve, cfg.controller, ident);

  SimOptions opt;
  opt.dt_sim = cfg.dt_sim;
  opt.control_rate = cfg.controller.rate;
  opt.noise_sigma = cfg.noise_sigma;
  opt.seed = cfg.seed;
  r.log = run_scenario(cfg.vehicle, cfg.curve, cfg.events, stack.handle(), cfg.duration, opt);

  r.solves = stack.controller->records();
  r.saturated_ticks = stack.controller->saturated_ticks();
  if (stack.identifier) r.fits = stack.identifier->records();
  r.final_model = *stack.slot->load();
  r.metrics = compute_metrics(cfg, r.log);
  r.metrics.coeff_rel_err =
      max_relative_error(r.final_model.w, true_basis_coefficients(final_plant_params(cfg)));
  r.metrics.fault = stack.controller->fault() || r.log.failure.has_value();
  if (stack.controller->fault() && !r.metrics.failure) {
    r.metrics.failure = "controller fault: repeated TPBVP non-convergence";
  }
  return r;
}

inline json metrics_to_json(const MetricsReport& m) {
  json j;
  j["mean_err_m"] = m.mean_err_m;
  j["max_err_m"] = m.max_err_m;
  j["window"] = {m.window_start, m.window_end};
  json phases = json::array();
  for (const auto& p : m.phases) {
    phases.push_back({{"name", p.name},
                      {"t0", p.t0},
                      {"t1", p.t1},
                      {"mean_err_m", p.stats.mean},
                      {"max_err_m", p.stats.max}});
  }
  j["phases"] = phases;
  if (m.disturbance) {
    j["disturbance_time"] = *m.disturbance_time;
    j["baseline_m"] = m.disturbance->baseline;
    j["overshoot_m"] = m.disturbance->overshoot;
    j["convergence_s"] = m.disturbance->convergence_time;
    j["converged"] = m.disturbance->converged;
  } else {
    j["overshoot_m"] = nullptr;
    j["convergence_s"] = nullptr;
  }
  j["coeff_rel_err"] = m.coeff_rel_err;
  j["fault"] = m.fault;
  j["failure"] = m.failure ? json(*m.failure) : json(nullptr);
  return j;
}

inline json diagnostics_to_json(const RunResult& r) {
  json solves = json::array();
  std::vector<int> iters;
  double worst_pmp = 0.0, worst_wall = 0.0;
  int failures = 0;
  for (const auto& s : r.solves) {
    solves.push_back({{"t", s.t},
                      {"converged", s.converged},
                      {"warm", s.warm},
                      {"iterations", s.iterations},
                      {"residual", s.residual},
                      {"dynamics", s.pontryagin.dynamics},
                      {"costate", s.pontryagin.costate},
                      {"stationarity", s.pontryagin.stationarity},
                      {"boundary", s.pontryagin.boundary},
                      {"wall_s", s.wall_s},
                      {"model_fit_time", s.model_fit_time},
                      {"error", s.error}});
    if (s.converged) {
      iters.push_back(s.iterations);
      worst_pmp = std::max(worst_pmp, s.pontryagin.max());
    } else {
      ++failures;
    }
    worst_wall = std::max(worst_wall, s.wall_s);
  }
  std::sort(iters.begin(), iters.end());
  json fits = json::array();
  for (const auto& f : r.fits) {
    fits.push_back({{"launched", f.launched},
                    {"published", f.published},
                    {"wall_s", f.wall_s},
                    {"updated", f.report.updated},
                    {"failures", f.report.failures},
                    {"model", f.report.model}});
  }
  return {{"summary",
           {{"solves", r.solves.size()},
            {"failures", failures},
            {"median_iterations", iters.empty() ? 0 : iters[iters.size() / 2]},
            {"max_pontryagin_residual", worst_pmp},
            {"max_wall_s", worst_wall},
            {"saturated_ticks", r.saturated_ticks}}},
          {"solves", solves},
          {"fits", fits},
          {"final_model", r.final_model}};
}

inline void write_json(const std::string& path, const json& j) {
  write_text(path, j.dump(2) + "\n");
}

inline std::vector<double> event_times(const ScenarioConfig& c) {
  std::vector<double> t;
  for (const auto& e : c.events) t.push_back(e.time);
  return t;
}

/// config.json, runlog.csv, metrics.json, solver_diagnostics.json and the plots.
inline void write_run_artifacts(const std::filesystem::path& dir, const RunResult& r) {
  std::filesystem::create_directories(dir);
  write_json((dir / "config.json").string(), config_to_json(r.config));
  write_csv(r.log, (dir / "runlog.csv").string());
  write_json((dir / "metrics.json").string(), metrics_to_json(r.metrics));
  write_json((dir / "solver_diagnostics.json").string(), diagnostics_to_json(r));
  const auto ev = event_times(r.config);
  write_text((dir / "path.svg").string(), path_overlay_svg({{to_string(r.config.mode), &r.log}}));
  write_text((dir / "error.svg").string(), error_plot_svg({{to_string(r.config.mode), &r.log}}, ev));
  write_text((dir / "thrust.svg").string(), thrust_plot_svg(r.log, ev));
}

inline double reduction(double baseline, double value) {
  return baseline > 0.0 ? (baseline - value) / baseline : 0.0;
}

struct Comparison {
  RunResult nominal;
  RunResult data_driven;
};

/// Runs `jobs` in parallel on up to `threads` workers.
inline std::vector<RunResult> run_many(const std::vector<ScenarioConfig>& jobs, unsigned threads = 0) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(1, jobs.size())));
  std::vector<RunResult> results(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        results[i] = run_config(jobs[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  for (const auto& e : errors) if (e) std::rethrow_exception(e);
  return results;
}

inline Comparison run_comparison(ScenarioConfig cfg, unsigned threads = 0) {
  ScenarioConfig nominal = cfg;
  nominal.mode = ControllerMode::kNominal;
  ScenarioConfig dd = cfg;
  dd.mode = ControllerMode::kDataDriven;
  auto results = run_many({nominal, dd}, threads);
  return {std::move(results[0]), std::move(results[1])};
}

inline json comparison_to_json(const Comparison& c) {
  const auto& n = c.nominal.metrics;
  const auto& d = c.data_driven.metrics;
  json j{{"nominal", metrics_to_json(n)},
         {"data_driven", metrics_to_json(d)},
         {"mean_err_reduction", reduction(n.mean_err_m, d.mean_err_m)},
         {"max_err_reduction", reduction(n.max_err_m, d.max_err_m)}};
  if (n.disturbance && d.disturbance) {
    j["overshoot_reduction"] = reduction(n.disturbance->overshoot, d.disturbance->overshoot);
    j["convergence_reduction"] =
        reduction(n.disturbance->convergence_time, d.disturbance->convergence_time);
  }
  return j;
}

inline void write_comparison_artifacts(const std::filesystem::path& dir, const Comparison& c) {
  write_run_artifacts(dir / "nominal", c.nominal);
  write_run_artifacts(dir / "data_driven", c.data_driven);
  write_json((dir / "comparison.json").string(), comparison_to_json(c));
  const std::vector<std::pair<std::string, const RunLog*>> logs{{"nominal", &c.nominal.log},
                                                                {"data_driven", &c.data_driven.log}};
  write_text((dir / "path_overlay.svg").string(), path_overlay_svg(logs));
  write_text((dir / "error_overlay.svg").string(), error_plot_svg(logs, event_times(c.nominal.config)));
}

struct SweepResult {
  std::vector<double> payloads;
  std::vector<Comparison> runs;
};

inline SweepResult run_sweep(const ScenarioConfig& cfg, unsigned threads = 0) {
  if (cfg.sweep_payloads.empty()) throw InvalidParameter("sweep requires sweep.payloads");
  std::vector<ScenarioConfig> jobs;
  for (double p : cfg.sweep_payloads) {
    for (auto mode : {ControllerMode::kNominal, ControllerMode::kDataDriven}) {
      ScenarioConfig c = cfg;
      c.vehicle.payload = p;
      c.mode = mode;
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%s_payload_%.1f", cfg.name.c_str(), p);
      c.name = buf;
      jobs.push_back(c);
    }
  }
  auto results = run_many(jobs, threads);
  SweepResult s;
  s.payloads = cfg.sweep_payloads;
  for (std::size_t i = 0; i < cfg.sweep_payloads.size(); ++i) {
    s.runs.push_back({std::move(results[2 * i]), std::move(results[2 * i + 1])});
  }
  return s;
}

inline std::string payload_label(double p) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", p);
  return buf;
}

inline std::string sweep_chart_svg(const SweepResult& s) {
  std::vector<std::string> cats;
  std::vector<double> nom, dd;
  for (std::size_t i = 0; i < s.payloads.size(); ++i) {
    cats.push_back(payload_label(s.payloads[i]) + " kg");
    nom.push_back(s.runs[i].nominal.metrics.mean_err_m);
    dd.push_back(s.runs[i].data_driven.metrics.mean_err_m);
  }
  return bar_chart_svg("Mean tracking error vs payload", cats, {{"nominal", nom}, {"data_driven", dd}},
                       "mean e [m]");
}

inline json sweep_to_json(const SweepResult& s) {
  json rows = json::array();
  for (std::size_t i = 0; i < s.payloads.size(); ++i) {
    const auto& c = s.runs[i];
    rows.push_back({{"payload_kg", s.payloads[i]},
                    {"nominal_mean_err_m", c.nominal.metrics.mean_err_m},
                    {"data_driven_mean_err_m", c.data_driven.metrics.mean_err_m},
                    {"nominal_max_err_m", c.nominal.metrics.max_err_m},
                    {"data_driven_max_err_m", c.data_driven.metrics.max_err_m},
                    {"mean_err_reduction", reduction(c.nominal.metrics.mean_err_m, c.data_driven.metrics.mean_err_m)}});
  }
  return {{"runs", rows}};
}

inline void write_sweep_artifacts(const std::filesystem::path& dir, const SweepResult& s) {
  for (std::size_t i = 0; i < s.payloads.size(); ++i) {
    const auto sub = dir / ("payload_" + payload_label(s.payloads[i]));
    write_run_artifacts(sub / "nominal", s.runs[i].nominal);
    write_run_artifacts(sub / "data_driven", s.runs[i].data_driven);
  }
  write_json((dir / "sweep.json").string(), sweep_to_json(s));
  write_text((dir / "sweep_bars.svg").string(), sweep_chart_svg(s));
}

}  // namespace masv
