#include <sstream>

#include <gtest/gtest.h>

#include "mlprobe/report.hpp"

using namespace mlprobe;

namespace {

void add(std::vector<CellResult> &cells, const std::string &task, int layer, Setting s, double a, double b) {
  cells.push_back({task, layer, s, 0, a});
  cells.push_back({task, layer, s, 1, b});
}

ReportBundle two_by_two() {
  std::vector<CellResult> cells;
  for (int layer : {1, 2}) {
    add(cells, "Depth", layer, Setting::without_mlp, 0.6435, 0.6435);
    add(cells, "Depth", layer, Setting::with_mlp, 0.6634 - 0.01 * layer, 0.6634 - 0.01 * layer);
    add(cells, "Tense", layer, Setting::without_mlp, 0.80 + 0.01 * layer, 0.82 + 0.01 * layer);
    add(cells, "Tense", layer, Setting::with_mlp, 0.79, 0.79);
  }
  ReportBundle b;
  b.table = aggregate(cells);
  b.task_order = {"Tense", "Depth"};
  return b;
}

std::vector<std::string> lines(const std::string &s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string line; std::getline(in, line);)
    out.push_back(line);
  return out;
}

std::vector<std::string> split_csv(const std::string &line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ','))
    out.push_back(field);
  if (!line.empty() && line.back() == ',')
    out.emplace_back();
  return out;
}

} // namespace

TEST(FormatCell, RoundsHalfAwayFromZero) {
  EXPECT_EQ(format_cell(64.35, 0.26), "64.35±0.26");
  EXPECT_EQ(format_cell(0.0, 0.0), "0.00±0.00");
  EXPECT_EQ(format_cell(86.125, 0.005), "86.13±0.01");
  EXPECT_EQ(format_fixed(-0.001), "0.00");
  EXPECT_EQ(format_fixed(2.5, 0), "3");
  EXPECT_EQ(format_fixed(-2.5, 0), "-3");
  EXPECT_THROW(format_cell(50.0, -0.1), ShapeError);
}

TEST(FormatCell, ParsesBack) {
  const auto [m, s] = parse_cell("64.35±0.26");
  EXPECT_DOUBLE_EQ(m, 64.35);
  EXPECT_DOUBLE_EQ(s, 0.26);
  EXPECT_THROW(parse_cell("64.35+0.26"), DataError);
}

TEST(FormatClusterRow, ArrowFollowsRoundedDelta) {
  EXPECT_EQ(format_cluster_row(0.60, 0.66), "0.60 / 0.66 / Δ0.06 (↑)");
  EXPECT_EQ(format_cluster_row(0.66, 0.60), "0.66 / 0.60 / Δ-0.06 (↓)");
  EXPECT_EQ(format_cluster_row(0.601, 0.602), "0.60 / 0.60 / Δ0.00 (=)");
}

TEST(EmitTable, CsvLayout) {
  const auto b = two_by_two();
  const auto rows = lines(emit_table(b, TableFormat::csv));
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0], "layer,Tense_without_mlp,Tense_with_mlp,Depth_without_mlp,Depth_with_mlp,"
                     "Tense_without_mlp_rank,Tense_with_mlp_rank,Depth_without_mlp_rank,Depth_with_mlp_rank");
  const auto r1 = split_csv(rows[1]);
  ASSERT_EQ(r1.size(), 9u);
  EXPECT_EQ(r1[0], "1");
  EXPECT_EQ(r1[1], "82.00±1.41");
  EXPECT_EQ(r1[3], "64.35±0.00");
  EXPECT_EQ(r1[4], "65.34±0.00");
  // Tense w/o is best at layer 2; Depth w is best at layer 1; equal columns rank by layer
  EXPECT_EQ(r1[5], "2");
  EXPECT_EQ(r1[8], "1");
  EXPECT_EQ(split_csv(rows[2])[5], "1");
}

TEST(EmitTable, CsvRoundTripsTheAggregate) {
  const auto b = two_by_two();
  const auto rows = lines(emit_table(b, TableFormat::csv));
  const auto header = split_csv(rows[0]);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto f = split_csv(rows[r]);
    const int layer = std::stoi(f[0]);
    for (std::size_t c = 1; c <= 4; ++c) {
      const auto &h = header[c];
      const auto us = h.find('_');
      const auto *cell = b.table.find(h.substr(0, us), layer, parse_setting(h.substr(us + 1)));
      ASSERT_NE(cell, nullptr) << h;
      const auto [mean, sd] = parse_cell(f[c]);
      EXPECT_NEAR(mean, cell->mean_acc * 100.0, 0.005 + 1e-9);
      EXPECT_NEAR(sd, cell->std_acc * 100.0, 0.005 + 1e-9);
    }
  }
}

TEST(EmitTable, MarkdownBoldsStrictWins) {
  std::vector<CellResult> cells;
  add(cells, "Depth", 1, Setting::without_mlp, 0.6435, 0.6435);
  add(cells, "Depth", 1, Setting::with_mlp, 0.6634, 0.6634);
  add(cells, "Depth", 2, Setting::without_mlp, 0.70, 0.70);
  add(cells, "Depth", 2, Setting::with_mlp, 0.70, 0.70);
  ReportBundle b;
  b.table = aggregate(cells);
  const std::string md = emit_table(b, TableFormat::markdown);
  EXPECT_NE(md.find("| 1 | 64.35±0.00 | **66.34±0.00** |"), std::string::npos) << md;
  EXPECT_NE(md.find("| 2 | 70.00±0.00 | 70.00±0.00 |"), std::string::npos) << md;
  EXPECT_EQ(md.find("NMI"), std::string::npos);

  b.cluster_rows.push_back({"Depth", ClusterMode::per_task, 12, 6, 0, {0.60, 0.66, 0.06}});
  const std::string with_cluster = emit_table(b, TableFormat::markdown);
  EXPECT_NE(with_cluster.find("| Depth | per_task | 12 | 0.60 / 0.66 / Δ0.06 (↑) |"), std::string::npos);
  EXPECT_EQ(emit_table(b, TableFormat::markdown), with_cluster);
}

TEST(EmitTable, MissingCellsAreListed) {
  auto b = two_by_two();
  b.layers = {1, 2, 3};
  try {
    emit_table(b, TableFormat::csv);
    FAIL();
  } catch (const DataError &e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("(Tense, layer 3, without_mlp)"), std::string::npos) << msg;
    EXPECT_NE(msg.find("(Depth, layer 3, with_mlp)"), std::string::npos) << msg;
  }
}

TEST(PlotData, OneEntryPerLayerInFractionUnits) {
  std::vector<CellResult> cells;
  for (int l = 1; l <= 12; ++l) {
    add(cells, "T", l, Setting::without_mlp, 0.5, 0.5);
    add(cells, "T", l, Setting::with_mlp, 0.5 + 0.01 * l, 0.5 + 0.01 * l);
  }
  const auto j = emit_plot_data(delta_analysis(aggregate(cells)), {"abc", {0, 1}});
  EXPECT_EQ(j.at("units"), "accuracy_fraction");
  const auto &t = j.at("tasks").at(0);
  EXPECT_EQ(t.at("task"), "T");
  ASSERT_EQ(t.at("deltas").size(), 12u);
  EXPECT_EQ(t.at("deltas").at(11).at("layer"), 12);
  EXPECT_NEAR(t.at("deltas").at(11).at("delta").get<double>(), 0.12, 1e-12);
  EXPECT_NEAR(t.at("trimmed_std").get<double>(), sample_std({0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09, 0.10, 0.11}), 1e-12);
  EXPECT_EQ(j.at("metadata").at("config_hash"), "abc");
}

TEST(PlotData, UnscaledDeltas) {
  DeltaReport r;
  r.tasks["T"] = {{{1, 1.0}, {2, 2.0}, {3, 3.0}, {4, 4.0}, {5, 5.0}}, trimmed_std({1, 2, 3, 4, 5})};
  EXPECT_EQ(emit_plot_data(r).at("tasks").at(0).at("trimmed_std"), 1.0);
  EXPECT_THROW(emit_plot_data(DeltaReport{}), DataError);
}
