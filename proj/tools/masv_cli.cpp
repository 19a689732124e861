// Command-line front end: simulate, identify, experiment, sweep, plot.

#include "masv/experiment.hpp"

#include "CLI11.hpp"

#include <iostream>

namespace fs = std::filesystem;
using namespace masv;

namespace {

struct Globals {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  unsigned threads = 0;
};

ScenarioConfig load(const Globals& g) {
  if (g.config.empty()) throw InvalidParameter("--config is required");
  ScenarioConfig cfg = load_config(g.config);
  if (g.seed) cfg.seed = *g.seed;
  return cfg;
}

fs::path out_dir(const Globals& g, const ScenarioConfig& cfg) {
  return g.out.empty() ? fs::path(cfg.output_dir) : fs::path(g.out);
}

void print_metrics(const std::string& label, const MetricsReport& m) {
  std::printf("%-12s mean_err=%.6g m  max_err=%.6g m", label.c_str(), m.mean_err_m, m.max_err_m);
  if (m.disturbance) {
    std::printf("  overshoot=%.6g m  convergence=%.6g s%s", m.disturbance->overshoot,
                m.disturbance->convergence_time, m.disturbance->converged ? "" : " (not converged)");
  }
  std::printf("  coeff_rel_err=%.3g%s\n", m.coeff_rel_err, m.fault ? "  FAULT" : "");
  if (m.failure) std::printf("             failure: %s\n", m.failure->c_str());
}

int cmd_simulate(const Globals& g, const std::string& mode) {
  ScenarioConfig cfg = load(g);
  if (!mode.empty()) cfg.mode = controller_mode_from_string(mode);
  const auto r = run_config(cfg);
  const auto dir = out_dir(g, cfg);
  write_run_artifacts(dir, r);
  print_metrics(to_string(cfg.mode), r.metrics);
  std::printf("artifacts in %s\n", dir.string().c_str());
  return r.metrics.fault ? 2 : 0;
}

int cmd_identify(const Globals& g, const std::string& csv, double window) {
  WeakFormSettings weak;
  std::optional<ScenarioConfig> cfg;
  if (!g.config.empty()) {
    cfg = load(g);
    weak = cfg->identification.weak;
    if (window <= 0.0) window = cfg->identification.window;
  }
  const RunLog log = read_csv(csv);
  if (log.empty()) throw InvalidParameter("empty run log " + csv);
  if (window <= 0.0) window = log.t.back() - log.t.front();
  const auto start = std::chrono::steady_clock::now();
  const FitReport rep = fit_model(log, window, weak);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  json j = rep.model;
  j["updated"] = rep.updated;
  j["failures"] = rep.failures;
  j["wall_s"] = wall;
  if (cfg) {
    const auto truth = true_basis_coefficients(final_plant_params(*cfg));
    j["truth"] = truth;
    j["max_rel_err"] = max_relative_error(rep.model.w, truth);
  }
  if (!g.out.empty()) {
    fs::create_directories(fs::path(g.out).parent_path().empty() ? fs::path(".") : fs::path(g.out).parent_path());
    write_json(g.out, j);
  }
  std::cout << j.dump(2) << '\n';
  return rep.complete() ? 0 : 2;
}

int cmd_experiment(const Globals& g) {
  const ScenarioConfig cfg = load(g);
  const auto c = run_comparison(cfg, g.threads);
  const auto dir = out_dir(g, cfg);
  write_comparison_artifacts(dir, c);
  print_metrics("nominal", c.nominal.metrics);
  print_metrics("data_driven", c.data_driven.metrics);
  const json cj = comparison_to_json(c);
  std::printf("mean error reduction %.1f%%, max error reduction %.1f%%\n",
              100.0 * cj["mean_err_reduction"].get<double>(), 100.0 * cj["max_err_reduction"].get<double>());
  if (cj.contains("overshoot_reduction")) {
    std::printf("overshoot reduction %.1f%%, convergence reduction %.1f%%\n",
                100.0 * cj["overshoot_reduction"].get<double>(),
                100.0 * cj["convergence_reduction"].get<double>());
  }
  std::printf("artifacts in %s\n", dir.string().c_str());
  return (c.nominal.metrics.fault || c.data_driven.metrics.fault) ? 2 : 0;
}

int cmd_sweep(const Globals& g) {
  const ScenarioConfig cfg = load(g);
  const auto s = run_sweep(cfg, g.threads);
  const auto dir = out_dir(g, cfg);
  write_sweep_artifacts(dir, s);
  bool fault = false;
  std::printf("payload  nominal_mean  data_driven_mean  reduction\n");
  for (std::size_t i = 0; i < s.payloads.size(); ++i) {
    const auto& n = s.runs[i].nominal.metrics;
    const auto& d = s.runs[i].data_driven.metrics;
    fault = fault || n.fault || d.fault;
    std::printf("%6.1f  %12.6g  %16.6g  %8.1f%%\n", s.payloads[i], n.mean_err_m, d.mean_err_m,
                100.0 * reduction(n.mean_err_m, d.mean_err_m));
  }
  std::printf("artifacts in %s\n", dir.string().c_str());
  return fault ? 2 : 0;
}

int cmd_plot(const Globals& g, const std::vector<std::string>& csvs, std::vector<std::string> labels,
             const std::vector<double>& events) {
  if (csvs.empty()) throw InvalidParameter("plot needs at least one --csv");
  std::vector<RunLog> logs;
  for (const auto& p : csvs) logs.push_back(read_csv(p));
  while (labels.size() < csvs.size()) labels.push_back(fs::path(csvs[labels.size()]).parent_path().filename().string());
  std::vector<std::pair<std::string, const RunLog*>> named;
  for (std::size_t i = 0; i < logs.size(); ++i) named.emplace_back(labels[i], &logs[i]);
  const fs::path dir = g.out.empty() ? fs::path("plots") : fs::path(g.out);
  fs::create_directories(dir);
  write_text((dir / "path.svg").string(), path_overlay_svg(named));
  write_text((dir / "error.svg").string(), error_plot_svg(named, events));
  write_text((dir / "thrust.svg").string(), thrust_plot_svg(logs.front(), events));
  std::printf("plots in %s\n", dir.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MicroASV simulation, online identification and TPBVP control"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Scenario config (JSON)");
  app.add_option("--out", g.out, "Output directory (or file for identify)");
  app.add_option("--seed", g.seed, "Override the scenario RNG seed");
  app.add_option("--threads", g.threads, "Worker threads for experiment/sweep (0 = all cores)");

  std::string mode;
  auto* sim = app.add_subcommand("simulate", "Run one scenario in the configured (or given) mode");
  sim->add_option("--mode", mode, "nominal | data_driven");

  std::string csv;
  double window = 0.0;
  auto* ident = app.add_subcommand("identify", "Fit the weak-form model to an existing run log");
  ident->add_option("--csv", csv, "RunLog CSV")->required();
  ident->add_option("--window", window, "Trailing window [s] (default: config or whole log)");

  auto* exp = app.add_subcommand("experiment", "Run the nominal vs data-driven comparison");
  auto* sweep = app.add_subcommand("sweep", "Run the payload sweep");

  std::vector<std::string> csvs, labels;
  std::vector<double> events;
  auto* plot = app.add_subcommand("plot", "Render SVG plots from run logs");
  plot->add_option("--csv", csvs, "RunLog CSV (repeatable)")->required();
  plot->add_option("--label", labels, "Label per CSV");
  plot->add_option("--event", events, "Event time to mark (repeatable)");

  for (auto* sub : {sim, ident, exp, sweep, plot}) sub->fallthrough();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*sim) return cmd_simulate(g, mode);
    if (*ident) return cmd_identify(g, csv, window);
    if (*exp) return cmd_experiment(g);
    if (*sweep) return cmd_sweep(g);
    if (*plot) return cmd_plot(g, csvs, labels, events);
  } catch (const std::exception& ex) {
    std::fprintf(stderr, "error: %s\n", ex.what());
    return 1;
  }
  return 0;
}
