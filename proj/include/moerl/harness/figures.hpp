#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "moerl/analysis/cosine.hpp"
#include "moerl/analysis/plot.hpp"
#include "moerl/analysis/usage.hpp"
#include "moerl/harness/run.hpp"

namespace moerl::harness {

inline const std::vector<std::string>& figure_names() {
  static const std::vector<std::string> names = {"dormant",     "return",     "success",     "candidates",
                                                 "usage-task", "usage-stage", "usage-time", "cosine"};
  return names;
}

inline std::string run_id(const fs::path& dir) {
  const fs::path d = dir.filename().empty() ? dir.parent_path() : dir;
  const std::string parent = d.parent_path().filename().string();
  return parent.empty() ? d.filename().string() : parent + "_" + d.filename().string();
}

namespace detail {

inline std::vector<Json> events_or_throw(const std::vector<Json>& log, const std::string& kind, const std::string& key,
                                         const fs::path& dir) {
  std::vector<Json> out;
  for (const auto& e : log) {
    if (e.value("event", "") == kind && e.contains(key) && !e.at(key).is_null()) out.push_back(e);
  }
  if (out.empty()) {
    throw UnsupportedAnalysis("missing metric '" + kind + "." + key + "' in " + (dir / kMetricsFile).string());
  }
  return out;
}

inline analysis::Series series_of(const std::vector<Json>& events, const std::string& name, const std::string& key) {
  analysis::Series s{name, {}, {}};
  for (const auto& e : events) {
    s.x.push_back(e.at("frame").get<double>());
    s.y.push_back(e.at(key).get<double>());
  }
  return s;
}

}  // namespace detail

struct FigureFiles {
  fs::path svg, csv;
};

// Renders `figure` from one or more run directories into `out`. Line figures
// overlay every run; matrix figures use the first run only.
inline FigureFiles plot_figure(const std::vector<fs::path>& runs, const std::string& figure, const fs::path& out) {
  if (runs.empty()) throw ConfigError("plot: no run directories given");
  if (std::find(figure_names().begin(), figure_names().end(), figure) == figure_names().end()) {
    throw ConfigError("plot: unknown figure '" + figure + "'");
  }
  std::string id = run_id(runs.front());
  if (runs.size() > 1) id += "+" + std::to_string(runs.size() - 1);

  auto line_figure = [&](const std::string& kind, const std::string& key, const std::string& title,
                         const std::string& ylabel) {
    std::vector<analysis::Series> series;
    for (const auto& dir : runs) {
      const auto log = read_jsonl(dir / kMetricsFile);
      series.push_back(detail::series_of(detail::events_or_throw(log, kind, key, dir), run_id(dir), key));
    }
    FigureFiles f{out / (id + "_" + figure + "_frame.svg"), out / (id + "_" + figure + "_frame.csv")};
    analysis::write_text(f.svg, analysis::svg_lines(title, "frame", ylabel, series));
    analysis::write_text(f.csv, analysis::series_csv(series));
    return f;
  };

  if (figure == "dormant") return line_figure("snapshot", "beta", "Dormant ratio", "beta");
  if (figure == "return") return line_figure("eval", "mean_return", "Evaluation return", "mean return");
  if (figure == "success") return line_figure("eval", "success_rate", "Evaluation success rate", "success rate");
  if (figure == "candidates") {
    return line_figure("perturb", "candidate_return", "Perturbation candidate return", "candidate return");
  }

  const fs::path dir = runs.front();
  const auto log = read_jsonl(dir / kMetricsFile);
  if (figure.rfind("usage-", 0) == 0) {
    const std::string group_by = figure.substr(6);
    const analysis::UsageMatrix m = analysis::usage_matrix(log, group_by);
    std::vector<std::string> cols;
    for (std::size_t j = 0; j < (m.rows.empty() ? 0 : m.rows[0].size()); ++j) cols.push_back("E" + std::to_string(j));
    std::vector<std::vector<std::string>> rows;
    for (std::size_t i = 0; i < m.rows.size(); ++i) {
      std::vector<std::string> r{m.labels[i]};
      for (double v : m.rows[i]) r.push_back(analysis::fmt(v, 10));
      rows.push_back(r);
    }
    std::vector<std::string> header{group_by};
    header.insert(header.end(), cols.begin(), cols.end());
    FigureFiles f{out / (id + "_usage_" + group_by + ".svg"), out / (id + "_usage_" + group_by + ".csv")};
    analysis::write_text(f.svg, analysis::svg_heatmap("Expert usage by " + group_by, m.labels, cols, m.rows));
    analysis::write_text(f.csv, analysis::csv(header, rows));
    return f;
  }

  // cosine: mean pairwise gradient cosine across all probes
  const auto events = detail::events_or_throw(log, "grad_cosine", "matrix", dir);
  std::vector<analysis::CosineMatrix> ms;
  for (const auto& e : events) {
    analysis::CosineMatrix m;
    for (const auto& row : e.at("matrix")) {
      std::vector<std::optional<double>> r;
      for (const auto& v : row) r.push_back(v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()));
      m.push_back(r);
    }
    ms.push_back(m);
  }
  const auto mean = analysis::mean_cosine(ms);
  const auto labels = events.front().at("groups").get<std::vector<std::string>>();
  std::vector<std::vector<double>> shifted;  // heatmap of (cos + 1) / 2
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < mean.size(); ++i) {
    std::vector<double> r;
    std::vector<std::string> c{labels.at(i)};
    for (const auto& v : mean[i]) {
      r.push_back(v ? (*v + 1.0) / 2.0 : 0.0);
      c.push_back(v ? analysis::fmt(*v, 10) : "nan");
    }
    shifted.push_back(r);
    rows.push_back(c);
  }
  std::vector<std::string> header{"group"};
  header.insert(header.end(), labels.begin(), labels.end());
  FigureFiles f{out / (id + "_cosine_group.svg"), out / (id + "_cosine_group.csv")};
  analysis::write_text(f.svg, analysis::svg_heatmap("Mean gradient cosine (conflict fraction " +
                                                        analysis::fmt(analysis::conflict_fraction(ms), 3) + ")",
                                                    labels, labels, shifted));
  analysis::write_text(f.csv, analysis::csv(header, rows));
  return f;
}

}  // namespace moerl::harness
