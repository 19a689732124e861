#pragma once

// Minimal static SVG charts for run artifacts.

#include "masv/simulator.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace masv {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  std::string color = "#1f77b4";
  bool dashed = false;
};

namespace svg {

inline constexpr int kWidth = 800;
inline constexpr int kHeight = 480;
inline constexpr int kMargin = 60;

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

struct Frame {
  double x0, x1, y0, y1;
  bool equal_aspect = false;

  double px(double x) const { return kMargin + (x - x0) / (x1 - x0) * (kWidth - 2 * kMargin); }
  double py(double y) const { return kHeight - kMargin - (y - y0) / (y1 - y0) * (kHeight - 2 * kMargin); }
};

inline Frame fit_frame(const std::vector<Series>& series, bool equal_aspect) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    for (double v : s.x) if (std::isfinite(v)) { x0 = std::min(x0, v); x1 = std::max(x1, v); }
    for (double v : s.y) if (std::isfinite(v)) { y0 = std::min(y0, v); y1 = std::max(y1, v); }
  }
  if (!std::isfinite(x0)) { x0 = 0; x1 = 1; y0 = 0; y1 = 1; }
  if (x1 - x0 < 1e-12) { x0 -= 0.5; x1 += 0.5; }
  if (y1 - y0 < 1e-12) { y0 -= 0.5; y1 += 0.5; }
  const double padx = 0.03 * (x1 - x0), pady = 0.05 * (y1 - y0);
  Frame f{x0 - padx, x1 + padx, y0 - pady, y1 + pady, equal_aspect};
  if (equal_aspect) {
    const double sx = (f.x1 - f.x0) / (kWidth - 2 * kMargin);
    const double sy = (f.y1 - f.y0) / (kHeight - 2 * kMargin);
    const double s = std::max(sx, sy);
    const double cx = 0.5 * (f.x0 + f.x1), cy = 0.5 * (f.y0 + f.y1);
    f.x0 = cx - 0.5 * s * (kWidth - 2 * kMargin);
    f.x1 = cx + 0.5 * s * (kWidth - 2 * kMargin);
    f.y0 = cy - 0.5 * s * (kHeight - 2 * kMargin);
    f.y1 = cy + 0.5 * s * (kHeight - 2 * kMargin);
  }
  return f;
}

inline void open(std::ostringstream& os, const std::string& title) {
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
     << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">"
     << escape(title) << "</text>\n";
}

inline void axes(std::ostringstream& os, const Frame& f, const std::string& xlabel, const std::string& ylabel) {
  os << "<g class=\"axes\" stroke=\"#333\" stroke-width=\"1\" fill=\"none\">\n";
  os << "<rect x=\"" << kMargin << "\" y=\"" << kMargin << "\" width=\"" << kWidth - 2 * kMargin
     << "\" height=\"" << kHeight - 2 * kMargin << "\"/>\n</g>\n";
  os << "<g font-family=\"sans-serif\" font-size=\"11\" fill=\"#333\">\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = f.x0 + (f.x1 - f.x0) * i / 4.0;
    const double yv = f.y0 + (f.y1 - f.y0) * i / 4.0;
    os << "<text x=\"" << fmt(f.px(xv)) << "\" y=\"" << kHeight - kMargin + 16 << "\" text-anchor=\"middle\">"
       << fmt(xv) << "</text>\n";
    os << "<text x=\"" << kMargin - 6 << "\" y=\"" << fmt(f.py(yv) + 4) << "\" text-anchor=\"end\">"
       << fmt(yv) << "</text>\n";
  }
  os << "<text x=\"" << kWidth / 2 << "\" y=\"" << kHeight - 18 << "\" text-anchor=\"middle\">"
     << escape(xlabel) << "</text>\n";
  os << "<text x=\"16\" y=\"" << kHeight / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << kHeight / 2 << ")\">" << escape(ylabel) << "</text>\n</g>\n";
}

inline void polyline(std::ostringstream& os, const Frame& f, const Series& s, std::size_t max_points = 4000) {
  const std::size_t n = std::min(s.x.size(), s.y.size());
  const std::size_t stride = std::max<std::size_t>(1, n / max_points);
  os << "<polyline class=\"series\" data-label=\"" << escape(s.label) << "\" fill=\"none\" stroke=\""
     << s.color << "\" stroke-width=\"1.5\"" << (s.dashed ? " stroke-dasharray=\"6 4\"" : "") << " points=\"";
  for (std::size_t k = 0; k < n; k += stride) {
    if (!std::isfinite(s.x[k]) || !std::isfinite(s.y[k])) continue;
    os << fmt(f.px(s.x[k])) << ',' << fmt(f.py(s.y[k])) << ' ';
  }
  if (n > 0 && (n - 1) % stride != 0) os << fmt(f.px(s.x[n - 1])) << ',' << fmt(f.py(s.y[n - 1]));
  os << "\"/>\n";
}

inline void legend(std::ostringstream& os, const std::vector<std::pair<std::string, std::string>>& items) {
  os << "<g class=\"legend\" font-family=\"sans-serif\" font-size=\"12\">\n";
  int y = kMargin + 14;
  for (const auto& [label, color] : items) {
    os << "<rect x=\"" << kWidth - kMargin - 150 << "\" y=\"" << y - 9 << "\" width=\"12\" height=\"3\" fill=\""
       << color << "\"/><text x=\"" << kWidth - kMargin - 132 << "\" y=\"" << y << "\">" << escape(label)
       << "</text>\n";
    y += 16;
  }
  os << "</g>\n";
}

}  // namespace svg

inline std::string line_chart_svg(const std::string& title, const std::vector<Series>& series,
                                  const std::string& xlabel, const std::string& ylabel,
                                  const std::vector<double>& event_times = {}, bool equal_aspect = false) {
  std::ostringstream os;
  svg::open(os, title);
  const auto f = svg::fit_frame(series, equal_aspect);
  svg::axes(os, f, xlabel, ylabel);
  for (double te : event_times) {
    if (te < f.x0 || te > f.x1) continue;
    os << "<line class=\"event\" x1=\"" << svg::fmt(f.px(te)) << "\" x2=\"" << svg::fmt(f.px(te)) << "\" y1=\""
       << svg::kMargin << "\" y2=\"" << svg::kHeight - svg::kMargin
       << "\" stroke=\"#888\" stroke-dasharray=\"3 3\"/>\n";
  }
  std::vector<std::pair<std::string, std::string>> items;
  for (const auto& s : series) {
    svg::polyline(os, f, s);
    items.emplace_back(s.label, s.color);
  }
  svg::legend(os, items);
  os << "</svg>\n";
  return os.str();
}

/// Reference path plus one actual path per labelled log.
inline std::string path_overlay_svg(const std::vector<std::pair<std::string, const RunLog*>>& logs) {
  static const char* colors[] = {"#d62728", "#1f77b4", "#2ca02c", "#9467bd"};
  std::vector<Series> series;
  if (!logs.empty()) {
    Series ref{"reference", {}, {}, "#000000", true};
    for (const auto& r : logs.front().second->references) {
      ref.x.push_back(r(idx::kX));
      ref.y.push_back(r(idx::kY));
    }
    series.push_back(std::move(ref));
  }
  for (std::size_t i = 0; i < logs.size(); ++i) {
    Series s{logs[i].first, {}, {}, colors[i % 4], false};
    for (const auto& x : logs[i].second->states) {
      s.x.push_back(x(idx::kX));
      s.y.push_back(x(idx::kY));
    }
    series.push_back(std::move(s));
  }
  return line_chart_svg("Path", series, "X [m]", "Y [m]", {}, true);
}

inline std::string error_plot_svg(const std::vector<std::pair<std::string, const RunLog*>>& logs,
                                  const std::vector<double>& event_times) {
  static const char* colors[] = {"#d62728", "#1f77b4", "#2ca02c", "#9467bd"};
  std::vector<Series> series;
  for (std::size_t i = 0; i < logs.size(); ++i) {
    series.push_back({logs[i].first, logs[i].second->t, logs[i].second->errors, colors[i % 4], false});
  }
  return line_chart_svg("Tracking error", series, "t [s]", "e [m]", event_times);
}

inline std::string thrust_plot_svg(const RunLog& log, const std::vector<double>& event_times) {
  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728"};
  std::vector<Series> series;
  for (int i = 0; i < 4; ++i) {
    Series s{"F" + std::to_string(i + 1), log.t, {}, colors[i], false};
    for (const auto& u : log.controls) s.y.push_back(u(i));
    series.push_back(std::move(s));
  }
  return line_chart_svg("Thrust", series, "t [s]", "F [N]", event_times);
}

/// Grouped bars: one group per category, one bar per series within it.
inline std::string bar_chart_svg(const std::string& title, const std::vector<std::string>& categories,
                                 const std::vector<std::pair<std::string, std::vector<double>>>& groups,
                                 const std::string& ylabel) {
  static const char* colors[] = {"#d62728", "#1f77b4", "#2ca02c", "#9467bd"};
  std::ostringstream os;
  svg::open(os, title);
  double ymax = 0.0;
  for (const auto& g : groups) for (double v : g.second) if (std::isfinite(v)) ymax = std::max(ymax, v);
  if (ymax <= 0.0) ymax = 1.0;
  svg::Frame f{0.0, static_cast<double>(std::max<std::size_t>(1, categories.size())), 0.0, 1.05 * ymax};
  svg::axes(os, f, "", ylabel);
  const double slot = (svg::kWidth - 2.0 * svg::kMargin) / std::max<std::size_t>(1, categories.size());
  const double bar = 0.8 * slot / std::max<std::size_t>(1, groups.size());
  for (std::size_t c = 0; c < categories.size(); ++c) {
    for (std::size_t g = 0; g < groups.size(); ++g) {
      const double v = c < groups[g].second.size() ? groups[g].second[c] : 0.0;
      const double h = std::isfinite(v) ? f.py(0.0) - f.py(v) : 0.0;
      const double x = svg::kMargin + c * slot + 0.1 * slot + g * bar;
      os << "<rect class=\"bar\" data-group=\"" << svg::escape(groups[g].first) << "\" x=\"" << svg::fmt(x)
         << "\" y=\"" << svg::fmt(f.py(0.0) - h) << "\" width=\"" << svg::fmt(bar) << "\" height=\""
         << svg::fmt(h) << "\" fill=\"" << colors[g % 4] << "\"/>\n";
    }
    os << "<text font-family=\"sans-serif\" font-size=\"11\" x=\"" << svg::fmt(svg::kMargin + (c + 0.5) * slot)
       << "\" y=\"" << svg::kHeight - svg::kMargin + 30 << "\" text-anchor=\"middle\">"
       << svg::escape(categories[c]) << "</text>\n";
  }
  std::vector<std::pair<std::string, std::string>> items;
  for (std::size_t g = 0; g < groups.size(); ++g) items.emplace_back(groups[g].first, colors[g % 4]);
  svg::legend(os, items);
  os << "</svg>\n";
  return os.str();
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open " + path + " for writing");
  os << text;
}

}  // namespace masv
