#pragma once

// Tracking and disturbance-recovery metrics over a RunLog.

#include "masv/simulator.hpp"

#include <optional>

namespace masv {

/// e(t) = |(X_G, Y_G) - (X_d, Y_d)|, recomputed from the logged positions.
inline std::vector<double> tracking_error_series(const RunLog& log) {
  std::vector<double> e(log.size());
  for (std::size_t k = 0; k < log.size(); ++k) {
    e[k] = (log.states[k].head<2>() - log.references[k].head<2>()).norm();
  }
  return e;
}

struct ErrorStats {
  double mean = 0.0;
  double max = 0.0;
  std::size_t samples = 0;
};

/// Mean and max of the logged e over samples with t0 <= t <= t1.
inline ErrorStats tracking_error_stats(const RunLog& log, double t0, double t1) {
  ErrorStats s;
  double sum = 0.0;
  for (std::size_t k = 0; k < log.size(); ++k) {
    if (log.t[k] < t0 || log.t[k] > t1) continue;
    sum += log.errors[k];
    s.max = std::max(s.max, log.errors[k]);
    ++s.samples;
  }
  if (s.samples == 0) throw InvalidParameter("no samples in the requested time range");
  s.mean = sum / static_cast<double>(s.samples);
  return s;
}

struct DisturbanceMetrics {
  double baseline = 0.0;
  double peak_time = 0.0;
  double overshoot = 0.0;
  double convergence_time = 0.0;
  bool converged = false;
};

/// baseline  = mean e over [t_d - 5, t_d]
/// overshoot = max e for t > t_d, minus the baseline (floored at 0)
/// convergence = first t at or after the peak from which e <= 1.5 baseline holds
///   for 1 s, minus t_d; if that never happens, the remaining duration.
inline DisturbanceMetrics disturbance_metrics(const RunLog& log, double t_dist,
                                              double baseline_span = 5.0, double band = 1.5,
                                              double hold = 1.0) {
  if (log.empty() || !(log.t.back() > t_dist)) throw InvalidParameter("log must extend past the disturbance");
  DisturbanceMetrics m;
  double sum = 0.0;
  std::size_t n = 0;
  const double b0 = t_dist - baseline_span;
  for (std::size_t k = 0; k < log.size(); ++k) {
    if (log.t[k] >= b0 && log.t[k] <= t_dist) {
      sum += log.errors[k];
      ++n;
    }
  }
  if (n == 0) throw InvalidParameter("no samples before the disturbance");
  m.baseline = sum / static_cast<double>(n);

  std::size_t peak = log.size();
  double peak_e = -1.0;
  for (std::size_t k = 0; k < log.size(); ++k) {
    if (log.t[k] > t_dist && log.errors[k] > peak_e) {
      peak_e = log.errors[k];
      peak = k;
    }
  }
  m.peak_time = log.t[peak];
  m.overshoot = std::max(0.0, peak_e - m.baseline);

  const double limit = band * m.baseline;
  m.convergence_time = log.t.back() - t_dist;
  // Scan back from the end so each candidate start knows how long e has stayed inside.
  std::optional<double> inside_until;
  std::optional<std::size_t> first;
  for (std::size_t k = log.size(); k-- > peak;) {
    if (log.errors[k] <= limit) {
      if (!inside_until) inside_until = log.t[k];
      if (*inside_until - log.t[k] >= hold - 1e-9) first = k;
    } else {
      inside_until.reset();
    }
  }
  if (first) {
    m.converged = true;
    m.convergence_time = log.t[*first] - t_dist;
  }
  return m;
}

}  // namespace masv
