#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "moerl/errors.hpp"

// Minimal deterministic CSV and SVG writers. Numbers are printed with a fixed
// format so identical inputs give byte-identical files.
namespace moerl::analysis {

inline std::string fmt(double v, int digits = 6) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

inline std::string csv(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::ostringstream os;
  for (std::size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
  os << '\n';
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << r[i];
    os << '\n';
  }
  return os.str();
}

struct Series {
  std::string name;
  std::vector<double> x, y;
};

// Long-format CSV of every plotted point: series,x,y.
inline std::string series_csv(const std::vector<Series>& series) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) rows.push_back({s.name, fmt(s.x[i], 10), fmt(s.y[i], 10)});
  }
  return csv({"series", "x", "y"}, rows);
}

namespace detail {

inline const char* palette(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                 "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return colors[i % 10];
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace detail

inline std::string svg_lines(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                             const std::vector<Series>& series) {
  const double W = 640, H = 400, L = 70, R = 160, T = 40, B = 50;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw DimensionError("svg_lines: x and y lengths differ in " + s.name);
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y0 -= 0.5, y1 += 0.5;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << detail::escape(title)
     << "</text>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
    os << "<text x=\"" << fmt(px(xv)) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\" font-size=\"10\">"
       << fmt(xv, 4) << "</text>\n";
    os << "<text x=\"" << L - 6 << "\" y=\"" << fmt(py(yv) + 3) << "\" text-anchor=\"end\" font-size=\"10\">"
       << fmt(yv, 4) << "</text>\n";
  }
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\" font-size=\"12\">"
     << detail::escape(xlabel) << "</text>\n";
  os << "<text transform=\"translate(16," << (T + H - B) / 2
     << ") rotate(-90)\" text-anchor=\"middle\" font-size=\"12\">" << detail::escape(ylabel) << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    os << "<polyline fill=\"none\" stroke=\"" << detail::palette(k) << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (std::isfinite(s.y[i])) os << fmt(px(s.x[i])) << ',' << fmt(py(s.y[i])) << ' ';
    }
    os << "\"/>\n";
    os << "<text x=\"" << W - R + 8 << "\" y=\"" << T + 14 * (k + 1) << "\" font-size=\"11\" fill=\""
       << detail::palette(k) << "\">" << detail::escape(s.name) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

// Row-per-group heatmap with white (0) to dark blue (matrix max) cells.
inline std::string svg_heatmap(const std::string& title, const std::vector<std::string>& row_labels,
                               const std::vector<std::string>& col_labels,
                               const std::vector<std::vector<double>>& m) {
  if (m.size() != row_labels.size()) throw DimensionError("svg_heatmap: one label per row required");
  const double cell = 28, L = 90, T = 50;
  const double W = L + cell * static_cast<double>(col_labels.size()) + 20;
  const double H = T + cell * static_cast<double>(row_labels.size()) + 20;
  double hi = 0.0;
  for (const auto& r : m) {
    if (r.size() != col_labels.size()) throw DimensionError("svg_heatmap: ragged matrix");
    for (double v : r) hi = std::max(hi, v);
  }
  if (hi <= 0.0) hi = 1.0;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << detail::escape(title)
     << "</text>\n";
  for (std::size_t j = 0; j < col_labels.size(); ++j) {
    os << "<text x=\"" << fmt(L + cell * (j + 0.5)) << "\" y=\"" << T - 6
       << "\" text-anchor=\"middle\" font-size=\"9\">" << detail::escape(col_labels[j]) << "</text>\n";
  }
  for (std::size_t i = 0; i < m.size(); ++i) {
    os << "<text x=\"" << L - 6 << "\" y=\"" << fmt(T + cell * (i + 0.5) + 4)
       << "\" text-anchor=\"end\" font-size=\"11\">" << detail::escape(row_labels[i]) << "</text>\n";
    for (std::size_t j = 0; j < m[i].size(); ++j) {
      const double a = std::clamp(m[i][j] / hi, 0.0, 1.0);
      const int r = static_cast<int>(std::lround(255 * (1 - a))), g = static_cast<int>(std::lround(255 - 180 * a));
      char color[16];
      std::snprintf(color, sizeof color, "#%02x%02x%02x", r, g, 255);
      os << "<rect x=\"" << fmt(L + cell * j) << "\" y=\"" << fmt(T + cell * i) << "\" width=\"" << cell
         << "\" height=\"" << cell << "\" fill=\"" << color << "\" stroke=\"#ddd\"/>\n";
    }
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace moerl::analysis
