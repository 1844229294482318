#pragma once

#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mlprobe/clusteval.hpp"
#include "mlprobe/dataio.hpp"
#include "mlprobe/error.hpp"
#include "mlprobe/harness.hpp"
#include "mlprobe/report.hpp"
#include "mlprobe/trainer.hpp"

namespace mlprobe::cli {

enum ExitCode : int { ok = 0, usage = 1, data = 2, runtime = 3 };

/// Everything a config file can set. Relative paths are resolved against the
/// directory of the config file.
struct RunConfig {
  std::vector<fs::path> manifest_paths;
  fs::path results_dir = "results";
  std::size_t workers = 1;
  bool save_checkpoints = true;
  SweepSpec sweep;
  TrainConfig train;
  ClusterConfig cluster;
  std::uint64_t cluster_probe_seed = 0; ///< which with-MLP checkpoint seed to cluster with
  std::map<std::string, std::vector<std::string>> cluster_groups;
};

inline std::vector<int> parse_layer_list(const std::string &text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  try {
    while (std::getline(ss, item, ',')) {
      if (item.empty())
        continue;
      const auto dash = item.find('-', 1);
      if (dash == std::string::npos) {
        out.push_back(std::stoi(item));
      } else {
        const int lo = std::stoi(item.substr(0, dash)), hi = std::stoi(item.substr(dash + 1));
        for (int l = lo; l <= hi; ++l)
          out.push_back(l);
      }
    }
  } catch (const std::exception &) {
    throw DataError("bad layer list '" + text + "'");
  }
  if (out.empty())
    throw DataError("empty layer list");
  return out;
}

inline std::vector<std::string> parse_name_list(const std::string &text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto first = item.find_first_not_of(" \t");
    if (first != std::string::npos)
      out.push_back(item.substr(first, item.find_last_not_of(" \t") - first + 1));
  }
  if (out.empty())
    throw DataError("empty task list");
  return out;
}

inline RunConfig run_config_from_json(const nlohmann::json &j, const fs::path &base) {
  RunConfig c;
  try {
    auto resolve = [&](const std::string &p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
    for (const auto &m : j.value("manifests", nlohmann::json::array()))
      c.manifest_paths.push_back(resolve(m.get<std::string>()));
    c.results_dir = resolve(j.value("results_dir", std::string("results")));
    c.workers = j.value("workers", c.workers);
    c.save_checkpoints = j.value("save_checkpoints", c.save_checkpoints);
    if (j.contains("train"))
      c.train = train_config_from_json(j.at("train"));
    if (j.contains("sweep")) {
      const auto &s = j.at("sweep");
      c.sweep.tasks = s.value("tasks", c.sweep.tasks);
      c.sweep.layers = s.value("layers", c.sweep.layers);
      c.sweep.seeds = s.value("seeds", c.sweep.seeds);
      if (s.contains("settings")) {
        c.sweep.settings.clear();
        for (const auto &name : s.at("settings"))
          c.sweep.settings.push_back(parse_setting(name.get<std::string>()));
      }
    }
    if (j.contains("cluster")) {
      const auto &s = j.at("cluster");
      if (s.contains("mode"))
        c.cluster.mode = parse_cluster_mode(s.at("mode").get<std::string>());
      c.cluster.layer = s.value("layer", c.cluster.layer);
      c.cluster.k = s.value("k", c.cluster.k);
      c.cluster.max_iter = s.value("max_iter", c.cluster.max_iter);
      c.cluster.n_init = s.value("n_init", c.cluster.n_init);
      c.cluster.seed = s.value("seed", c.cluster.seed);
      c.cluster_probe_seed = s.value("probe_seed", c.cluster_probe_seed);
      if (s.contains("groups"))
        c.cluster_groups = s.at("groups").get<std::map<std::string, std::vector<std::string>>>();
    }
  } catch (const nlohmann::json::exception &e) {
    throw DataError("malformed config: " + std::string(e.what()));
  }
  try {
    c.train.validate();
  } catch (const ShapeError &e) {
    throw DataError(e.what());
  }
  return c;
}

inline RunConfig load_run_config(const fs::path &path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file_bytes(path));
  } catch (const nlohmann::json::exception &e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return run_config_from_json(j, path.parent_path());
}

/// Manifests keyed by task name.
inline std::map<std::string, Manifest> load_manifests(const RunConfig &c) {
  std::map<std::string, Manifest> out;
  for (const auto &p : c.manifest_paths) {
    Manifest m = read_manifest(p);
    verify_manifest(m);
    const std::string name = m.task.name;
    if (!out.emplace(name, std::move(m)).second)
      throw DataError("two manifests describe task '" + name + "'");
  }
  return out;
}

namespace detail {

inline const Manifest &manifest_for(const std::map<std::string, Manifest> &ms, const std::string &task) {
  const auto it = ms.find(task);
  if (it == ms.end())
    throw DataError("no manifest for task '" + task + "'");
  return it->second;
}

inline void require_layer(const Manifest &m, int layer) {
  if (std::find(m.layers.begin(), m.layers.end(), layer) == m.layers.end())
    throw DataError("layer " + std::to_string(layer) + " is not available for task '" + m.task.name +
                    "' (manifest lists " + std::to_string(m.layers.size()) + " layers)");
}

inline int cmd_ingest(const fs::path &senteval, const std::string &task_name,
                      const std::optional<std::string> &level, std::optional<int> n_classes,
                      const fs::path &emb_dir, const fs::path &out, std::ostream &os, std::ostream &es) {
  TaskSpec spec;
  if (auto builtin = find_builtin_task(task_name))
    spec = *builtin;
  else
    spec.name = task_name;
  if (level)
    spec.level = parse_level(*level);
  if (n_classes)
    spec.n_classes = *n_classes;
  else if (!find_builtin_task(task_name))
    spec.n_classes = 0; // take the distinct-label count
  std::vector<std::string> warnings;
  const Manifest m = ingest(senteval, spec, emb_dir, out, &warnings);
  for (const auto &w : warnings)
    es << "warning: " << w << "\n";
  os << "wrote " << out.string() << ": task " << m.task.name << ", " << m.layers.size() << " layers, dim "
     << m.dim << "\n";
  return ok;
}

inline int cmd_train(const RunConfig &c, const std::string &task, int layer, Setting setting,
                     std::uint64_t seed, std::ostream &os) {
  const auto manifests = load_manifests(c);
  const Manifest &m = manifest_for(manifests, task);
  require_layer(m, layer);
  TrainConfig cfg = c.train;
  cfg.seed = seed;
  cfg.with_mlp = setting == Setting::with_mlp;
  const auto train = load_dataset(m, task, layer, Split::train);
  const auto val = load_dataset(m, task, layer, Split::val);
  const auto test = load_dataset(m, task, layer, Split::test);
  const auto out = train_probe_with_params<double>(train, val, test, m.task, cfg);
  const CellResult cell{task, layer, setting, seed, out.result.test_acc};
  const auto j = cell_json(cell, out.result, config_hash(c.train));
  write_file_atomic(result_path(c.results_dir, task, layer, setting, seed), j.dump(2) + "\n");
  if (c.save_checkpoints && cfg.with_mlp)
    save_checkpoint(out.best_params, static_cast<std::uint16_t>(layer),
                    checkpoint_path(c.results_dir, task, layer, setting, seed));
  os << j.dump(2) << "\n";
  return ok;
}

inline int cmd_sweep(const RunConfig &c, std::ostream &os, std::ostream &es) {
  const auto manifests = load_manifests(c);
  for (const auto &task : c.sweep.tasks) {
    const Manifest &m = manifest_for(manifests, task);
    for (int layer : c.sweep.layers)
      require_layer(m, layer);
  }
  const auto outcome = run_sweep(manifests, c.sweep, c.train, {c.results_dir, c.workers, c.save_checkpoints});
  for (const auto &f : outcome.failures)
    es << "failed: " << run_stem(f.task, f.layer, f.setting, f.seed) << ": " << f.error << "\n";
  os << "sweep: " << outcome.cells.size() << " cells (" << outcome.computed << " trained, " << outcome.reused
     << " reused), " << outcome.failures.size() << " failed\n";
  return outcome.failures.empty() ? ok : runtime;
}

inline int cmd_cluster(const RunConfig &c, std::ostream &os) {
  const auto manifests = load_manifests(c);
  std::vector<std::pair<std::string, std::vector<std::string>>> groups;
  if (c.cluster.mode == ClusterMode::per_task) {
    for (const auto &t : c.sweep.tasks)
      groups.push_back({t, {t}});
  } else {
    if (c.cluster_groups.empty())
      throw DataError("pooled_group clustering needs cluster.groups in the config");
    for (const auto &g : c.cluster_groups)
      groups.push_back(g);
  }
  for (const auto &[group, tasks] : groups) {
    std::vector<ClusterSource> sources;
    for (const auto &t : tasks) {
      const Manifest &m = manifest_for(manifests, t);
      require_layer(m, c.cluster.layer);
      const fs::path ckpt =
          checkpoint_path(c.results_dir, t, c.cluster.layer, Setting::with_mlp, c.cluster_probe_seed);
      if (!fs::exists(ckpt))
        throw DataError("missing with-MLP checkpoint '" + ckpt.string() + "' (run train or sweep first)");
      sources.push_back({&m, load_checkpoint<double>(ckpt, c.train.activation)});
    }
    const ClusterEvalRow row = cluster_eval(sources, c.cluster, group);
    const fs::path out = c.results_dir / "cluster" /
                         (group + "_" + std::string(to_string(row.mode)) + "_" + std::to_string(row.layer) + ".json");
    write_file_atomic(out, to_json(row).dump(2) + "\n");
    os << group << " (" << to_string(row.mode) << ", layer " << row.layer << ", k=" << row.k
       << "): " << format_cluster_row(row.scores.nmi_without, row.scores.nmi_with) << "\n";
  }
  return ok;
}

inline int cmd_report(const RunConfig &c, TableFormat format, const std::optional<fs::path> &out_path,
                      const std::optional<fs::path> &plot_path, std::ostream &os, std::ostream &es) {
  std::vector<CellResult> cells;
  for (const auto &cell : load_cells(c.results_dir)) {
    const bool task_ok = std::find(c.sweep.tasks.begin(), c.sweep.tasks.end(), cell.task) != c.sweep.tasks.end();
    const bool layer_ok = std::find(c.sweep.layers.begin(), c.sweep.layers.end(), cell.layer) != c.sweep.layers.end();
    const bool seed_ok = std::find(c.sweep.seeds.begin(), c.sweep.seeds.end(), cell.seed) != c.sweep.seeds.end();
    if (task_ok && layer_ok && seed_ok)
      cells.push_back(cell);
  }
  if (cells.empty())
    throw DataError("no stored results in '" + c.results_dir.string() + "'");
  ReportBundle b;
  b.table = aggregate(cells, c.sweep.seeds.size());
  b.task_order = c.sweep.tasks;
  b.layers = c.sweep.layers;
  b.metadata = {config_hash(c.train), c.sweep.seeds};
  const fs::path cluster_dir = c.results_dir / "cluster";
  if (fs::exists(cluster_dir)) {
    std::vector<fs::path> files;
    for (const auto &e : fs::directory_iterator(cluster_dir))
      if (e.path().extension() == ".json")
        files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto &f : files)
      b.cluster_rows.push_back(cluster_row_from_json(nlohmann::json::parse(read_file_bytes(f))));
  }
  const std::string doc = emit_table(b, format);
  if (out_path)
    write_file_atomic(*out_path, doc);
  else
    os << doc;
  if (plot_path) {
    b.deltas = delta_analysis(b.table);
    write_file_atomic(*plot_path, emit_plot_data(b.deltas, b.metadata).dump(2) + "\n");
    es << "wrote plot data to " << plot_path->string() << "\n";
  }
  return ok;
}

} // namespace detail

/// Entry point of the `mlprobe` command. Exit codes: 0 success, 1 usage
/// error, 2 data error, 3 runtime failure.
inline int cli_main(int argc, const char *const *argv, std::ostream &os = std::cout,
                    std::ostream &es = std::cerr) {
  CLI::App app{"Probe frozen-encoder representations with and without a residual MLP block", "mlprobe"};
  app.require_subcommand(1);

  std::string config;
  std::optional<std::uint64_t> seed_override;
  std::string layers_override, tasks_override;
  auto add_common = [&](CLI::App *sub) {
    sub->add_option("--config", config, "JSON config file")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed_override, "override the seed list with a single seed");
    sub->add_option("--layers", layers_override, "override layers, e.g. 1-12 or 1,6,12");
    sub->add_option("--tasks", tasks_override, "override tasks, comma separated");
  };

  std::string senteval, ingest_task, emb_dir, ingest_out;
  std::optional<std::string> ingest_level;
  std::optional<int> ingest_classes;
  auto *ingest = app.add_subcommand("ingest", "SentEval-style text + PRBE embeddings -> manifest");
  ingest->add_option("--senteval", senteval, "probing task file")->required()->check(CLI::ExistingFile);
  ingest->add_option("--task", ingest_task, "task name")->required();
  ingest->add_option("--level", ingest_level, "surface, syntactic or semantic");
  ingest->add_option("--n-classes", ingest_classes, "class count (default: catalog or distinct labels)");
  ingest->add_option("--embeddings", emb_dir, "directory of <split>_layer<L>.prbe files")
      ->required()
      ->check(CLI::ExistingDirectory);
  ingest->add_option("--out", ingest_out, "manifest path to write")->required();

  std::string train_task, train_setting = "with_mlp";
  int train_layer = 0;
  auto *train = app.add_subcommand("train", "train a single (task, layer, setting, seed) probe");
  add_common(train);
  train->add_option("--task", train_task, "task name")->required();
  train->add_option("--layer", train_layer, "encoder layer")->required();
  train->add_option("--setting", train_setting, "with_mlp or without_mlp")
      ->check(CLI::IsMember({"with_mlp", "without_mlp"}));

  auto *sweep = app.add_subcommand("sweep", "run the task x layer x setting x seed grid");
  add_common(sweep);
  std::optional<std::size_t> workers;
  sweep->add_option("--workers", workers, "parallel (task, layer) jobs");

  auto *cluster = app.add_subcommand("cluster", "k-means NMI of raw vs MLP-transformed test representations");
  add_common(cluster);
  std::optional<int> cluster_layer;
  std::optional<std::string> cluster_mode;
  cluster->add_option("--layer", cluster_layer, "layer to cluster (default from config)");
  cluster->add_option("--mode", cluster_mode, "per_task or pooled_group")
      ->check(CLI::IsMember({"per_task", "pooled_group"}));

  auto *report = app.add_subcommand("report", "tables and plot data from stored results");
  add_common(report);
  std::string format = "markdown";
  std::optional<std::string> report_out, plot_out;
  report->add_option("--format", format, "csv or markdown")->check(CLI::IsMember({"csv", "markdown"}));
  report->add_option("--out", report_out, "write the table here instead of stdout");
  report->add_option("--plot-out", plot_out, "write per-layer delta plot data (JSON) here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    os << app.help();
    return ok;
  } catch (const CLI::ParseError &e) {
    es << "error: " << e.what() << "\n\n" << app.help();
    return usage;
  }

  try {
    if (*ingest)
      return detail::cmd_ingest(senteval, ingest_task, ingest_level, ingest_classes, emb_dir, ingest_out, os, es);

    RunConfig c = load_run_config(config);
    if (seed_override)
      c.sweep.seeds = {*seed_override};
    if (!layers_override.empty())
      c.sweep.layers = parse_layer_list(layers_override);
    if (!tasks_override.empty())
      c.sweep.tasks = parse_name_list(tasks_override);

    if (*train)
      return detail::cmd_train(c, train_task, train_layer, parse_setting(train_setting),
                               seed_override.value_or(c.sweep.seeds.front()), os);
    if (*sweep) {
      if (workers)
        c.workers = *workers;
      return detail::cmd_sweep(c, os, es);
    }
    if (*cluster) {
      if (cluster_layer)
        c.cluster.layer = *cluster_layer;
      if (cluster_mode)
        c.cluster.mode = parse_cluster_mode(*cluster_mode);
      if (seed_override)
        c.cluster_probe_seed = *seed_override;
      return detail::cmd_cluster(c, os);
    }
    if (*report) {
      std::optional<fs::path> out, plot;
      if (report_out)
        out = *report_out;
      if (plot_out)
        plot = *plot_out;
      return detail::cmd_report(c, parse_table_format(format), out, plot, os, es);
    }
  } catch (const DataError &e) {
    es << "data error: " << e.what() << "\n";
    return data;
  } catch (const std::exception &e) {
    es << "error: " << e.what() << "\n";
    return runtime;
  }
  return usage;
}

} // namespace mlprobe::cli
