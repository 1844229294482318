#pragma once

#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mlprobe/clusteval.hpp"
#include "mlprobe/error.hpp"
#include "mlprobe/harness.hpp"

namespace mlprobe {

inline constexpr std::string_view kPlusMinus = "±";

/// Fixed-point with round-half-away-from-zero (std::round semantics).
inline std::string format_fixed(double value, int decimals = 2) {
  const double scale = std::pow(10.0, decimals);
  double rounded = std::round(value * scale) / scale;
  if (rounded == 0.0)
    rounded = 0.0; // no "-0.00"
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, rounded);
  return buf;
}

/// "mean±std", e.g. (64.35, 0.26) -> "64.35±0.26".
inline std::string format_cell(double mean, double std, int decimals = 2) {
  if (std < 0.0 || std::isnan(std))
    throw ShapeError("format_cell: negative standard deviation");
  return format_fixed(mean, decimals) + std::string(kPlusMinus) + format_fixed(std, decimals);
}

/// Inverse of format_cell.
inline std::pair<double, double> parse_cell(std::string_view cell) {
  const auto pos = cell.find(kPlusMinus);
  if (pos == std::string_view::npos)
    throw DataError("cell '" + std::string(cell) + "' is not of the form mean±std");
  const std::string mean(cell.substr(0, pos));
  const std::string sd(cell.substr(pos + kPlusMinus.size()));
  return {std::stod(mean), std::stod(sd)};
}

/// "0.60 / 0.66 / Δ0.06 (↑)"
inline std::string format_cluster_row(double nmi_without, double nmi_with) {
  const double delta = nmi_with - nmi_without;
  const std::string d = format_fixed(delta);
  const char *arrow = d == "0.00" ? "(=)" : delta > 0 ? "(↑)" : "(↓)";
  return format_fixed(nmi_without) + " / " + format_fixed(nmi_with) + " / Δ" + d + " " + arrow;
}

struct ReportMetadata {
  std::string config_hash;
  std::vector<std::uint64_t> seeds;
};

struct ReportBundle {
  SweepTable table;
  DeltaReport deltas;
  std::vector<ClusterEvalRow> cluster_rows;
  std::vector<std::string> task_order; ///< column order; empty means table order
  std::vector<int> layers;             ///< row order; empty means table order
  ReportMetadata metadata;

  std::vector<std::string> tasks() const { return task_order.empty() ? table.tasks() : task_order; }
  std::vector<int> rows() const { return layers.empty() ? table.layers() : layers; }
};

enum class TableFormat { csv, markdown };

inline TableFormat parse_table_format(std::string_view s) {
  if (s == "csv")
    return TableFormat::csv;
  if (s == "markdown" || s == "md")
    return TableFormat::markdown;
  throw DataError("unknown table format '" + std::string(s) + "'");
}

namespace detail {

/// 1 for the best layer of a column, 2 for the runner-up, 0 otherwise.
/// Ties go to the lower layer.
inline std::map<int, int> layer_ranks(const SweepTable &t, const std::string &task,
                                      const std::vector<int> &layers, Setting s) {
  std::vector<std::pair<double, int>> order;
  for (int l : layers)
    order.push_back({-t.find(task, l, s)->mean_acc, l});
  std::sort(order.begin(), order.end());
  std::map<int, int> ranks;
  for (std::size_t i = 0; i < order.size(); ++i)
    ranks[order[i].second] = i < 2 ? static_cast<int>(i) + 1 : 0;
  return ranks;
}

inline void require_complete(const ReportBundle &b) {
  std::string missing;
  for (const auto &task : b.tasks())
    for (int layer : b.rows())
      for (Setting s : {Setting::without_mlp, Setting::with_mlp})
        if (!b.table.find(task, layer, s))
          missing += "\n  (" + task + ", layer " + std::to_string(layer) + ", " +
                     std::string(to_string(s)) + ")";
  if (!missing.empty())
    throw DataError("report: missing cells:" + missing);
}

inline std::string percent_cell(const CellStats &c) { return format_cell(c.mean_acc * 100.0, c.std_acc * 100.0); }

} // namespace detail

/// Rows are layers; each task contributes a without/with column pair, values
/// in percent. CSV appends per-column rank columns (1 best layer, 2 second).
/// Markdown bolds a with-cell whose mean strictly beats its without-cell.
inline std::string emit_table(const ReportBundle &b, TableFormat format) {
  detail::require_complete(b);
  const auto tasks = b.tasks();
  const auto layers = b.rows();
  const Setting settings[] = {Setting::without_mlp, Setting::with_mlp};
  std::string out;

  if (format == TableFormat::csv) {
    std::map<std::pair<std::string, Setting>, std::map<int, int>> ranks;
    out += "layer";
    for (const auto &t : tasks)
      for (Setting s : settings) {
        out += "," + t + "_" + std::string(to_string(s));
        ranks[{t, s}] = detail::layer_ranks(b.table, t, layers, s);
      }
    for (const auto &t : tasks)
      for (Setting s : settings)
        out += "," + t + "_" + std::string(to_string(s)) + "_rank";
    out += "\n";
    for (int layer : layers) {
      out += std::to_string(layer);
      for (const auto &t : tasks)
        for (Setting s : settings)
          out += "," + detail::percent_cell(*b.table.find(t, layer, s));
      for (const auto &t : tasks)
        for (Setting s : settings) {
          const int r = ranks[{t, s}][layer];
          out += "," + (r ? std::to_string(r) : std::string());
        }
      out += "\n";
    }
    return out;
  }

  out += "| Layer |";
  for (const auto &t : tasks)
    out += " " + t + " w/o | " + t + " w |";
  out += "\n|---:|";
  for (std::size_t i = 0; i < tasks.size(); ++i)
    out += "---:|---:|";
  out += "\n";
  for (int layer : layers) {
    out += "| " + std::to_string(layer) + " |";
    for (const auto &t : tasks) {
      const CellStats &wo = *b.table.find(t, layer, Setting::without_mlp);
      const CellStats &w = *b.table.find(t, layer, Setting::with_mlp);
      const std::string wcell = detail::percent_cell(w);
      out += " " + detail::percent_cell(wo) + " | " + (w.mean_acc > wo.mean_acc ? "**" + wcell + "**" : wcell) + " |";
    }
    out += "\n";
  }
  if (!b.cluster_rows.empty()) {
    out += "\n| Group | Mode | Layer | NMI (w/o) / NMI (w) / ΔNMI |\n|---|---|---:|---|\n";
    for (const auto &r : b.cluster_rows)
      out += "| " + r.group + " | " + std::string(to_string(r.mode)) + " | " + std::to_string(r.layer) +
             " | " + format_cluster_row(r.scores.nmi_without, r.scores.nmi_with) + " |\n";
  }
  return out;
}

/// Per task: [{layer, delta}] and the trimmed std, in accuracy-fraction units.
inline nlohmann::json emit_plot_data(const DeltaReport &report, const ReportMetadata &meta = {}) {
  if (report.empty())
    throw DataError("emit_plot_data: empty delta report");
  nlohmann::json tasks = nlohmann::json::array();
  for (const auto &[task, td] : report.tasks) {
    nlohmann::json deltas = nlohmann::json::array();
    for (const auto &d : td.layers)
      deltas.push_back({{"layer", d.layer}, {"delta", d.delta}});
    tasks.push_back({{"task", task}, {"deltas", deltas}, {"trimmed_std", td.trimmed_std}});
  }
  nlohmann::json out = {{"units", "accuracy_fraction"}, {"tasks", tasks}};
  if (!meta.config_hash.empty() || !meta.seeds.empty())
    out["metadata"] = {{"config_hash", meta.config_hash}, {"seeds", meta.seeds}};
  return out;
}

} // namespace mlprobe
