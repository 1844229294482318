#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "mlprobe/dataio.hpp"
#include "mlprobe/error.hpp"
#include "mlprobe/trainer.hpp"

namespace mlprobe {

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

/// Mean of values summed in ascending order, so the result does not depend
/// on input order.
inline double stable_mean(std::vector<double> values) {
  if (values.empty())
    throw ShapeError("mean of empty set");
  std::sort(values.begin(), values.end());
  double s = 0.0;
  for (double v : values)
    s += v;
  return s / static_cast<double>(values.size());
}

/// Sample standard deviation (n - 1 denominator). Requires n >= 2.
inline double sample_std(std::vector<double> values) {
  if (values.size() < 2)
    throw ShapeError("sample standard deviation needs at least 2 values, got " +
                     std::to_string(values.size()));
  std::sort(values.begin(), values.end());
  if (values.front() == values.back())
    return 0.0; // exact, even where the rounded mean is not
  const double mean = stable_mean(values);
  double ss = 0.0;
  for (double v : values)
    ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

/// Sample std after dropping one instance of the maximum and one of the
/// minimum. A single survivor has no spread and yields 0.
inline double trimmed_std(std::vector<double> values) {
  if (values.size() < 3)
    throw ShapeError("trimmed std needs at least 3 values, got " + std::to_string(values.size()));
  std::sort(values.begin(), values.end());
  values.erase(values.begin());
  values.pop_back();
  return values.size() == 1 ? 0.0 : sample_std(std::move(values));
}

// ---------------------------------------------------------------------------
// Sweep
// ---------------------------------------------------------------------------

struct SweepSpec {
  std::vector<std::string> tasks;
  std::vector<int> layers = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12};
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::vector<Setting> settings = {Setting::without_mlp, Setting::with_mlp};

  void validate() const {
    if (tasks.empty() || layers.empty() || seeds.empty() || settings.empty())
      throw DataError("sweep: tasks, layers, seeds and settings must be non-empty");
  }
};

struct CellResult {
  std::string task;
  int layer = 0;
  Setting setting = Setting::without_mlp;
  std::uint64_t seed = 0;
  double test_acc = 0.0;
  friend bool operator==(const CellResult &, const CellResult &) = default;
};

struct CellFailure {
  std::string task;
  int layer = 0;
  Setting setting = Setting::without_mlp;
  std::uint64_t seed = 0;
  std::string error;
};

struct SweepOptions {
  fs::path results_dir = "results";
  std::size_t workers = 1;
  bool save_checkpoints = true;
};

struct SweepOutcome {
  std::vector<CellResult> cells; ///< spec order: task, layer, setting, seed
  std::vector<CellFailure> failures;
  std::size_t computed = 0;
  std::size_t reused = 0;
};

inline fs::path result_path(const fs::path &dir, std::string_view task, int layer, Setting s,
                            std::uint64_t seed) {
  return dir / (run_stem(task, layer, s, seed) + ".json");
}

inline fs::path checkpoint_path(const fs::path &dir, std::string_view task, int layer, Setting s,
                                std::uint64_t seed) {
  return dir / (run_stem(task, layer, s, seed) + ".ckpt.prbe");
}

/// Hash of the training configuration minus the seed, stored in every result
/// file; a stored result is reused only if the hash matches.
inline std::string config_hash(const TrainConfig &cfg) {
  nlohmann::json j = to_json(cfg);
  j.erase("seed");
  j.erase("with_mlp");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(j.dump())));
  return buf;
}

inline nlohmann::json cell_json(const CellResult &c, const TrainResult &r, const std::string &hash) {
  nlohmann::json j = {{"task", c.task},   {"layer", c.layer},       {"setting", to_string(c.setting)},
                      {"seed", c.seed},   {"status", "ok"},          {"config_hash", hash}};
  j.update(to_json(r));
  return j;
}

inline nlohmann::json failure_json(const CellFailure &f, const std::string &hash) {
  return {{"task", f.task},   {"layer", f.layer},     {"setting", to_string(f.setting)},
          {"seed", f.seed},   {"status", "failed"},   {"config_hash", hash},
          {"error", f.error}};
}

/// Reads a stored result. Returns nullopt for absent, failed or stale files.
inline std::optional<CellResult> read_cell(const fs::path &path, const std::string &hash = {}) {
  if (!fs::exists(path))
    return std::nullopt;
  try {
    const auto j = nlohmann::json::parse(read_file_bytes(path));
    if (j.value("status", "") != "ok")
      return std::nullopt;
    if (!hash.empty() && j.value("config_hash", "") != hash)
      return std::nullopt;
    return CellResult{j.at("task").get<std::string>(), j.at("layer").get<int>(),
                      parse_setting(j.at("setting").get<std::string>()),
                      j.at("seed").get<std::uint64_t>(), j.at("test_acc").get<double>()};
  } catch (const std::exception &) {
    return std::nullopt;
  }
}

/// Every successful cell result stored in `dir`, sorted by coordinate.
inline std::vector<CellResult> load_cells(const fs::path &dir) {
  std::vector<CellResult> cells;
  if (!fs::exists(dir))
    return cells;
  for (const auto &entry : fs::directory_iterator(dir)) {
    const auto &p = entry.path();
    if (p.extension() != ".json" || !entry.is_regular_file())
      continue;
    if (auto c = read_cell(p))
      cells.push_back(*c);
  }
  std::sort(cells.begin(), cells.end(), [](const CellResult &a, const CellResult &b) {
    return std::tie(a.task, a.layer, a.setting, a.seed) < std::tie(b.task, b.layer, b.setting, b.seed);
  });
  return cells;
}

/// Trains one probe per (task, layer, setting, seed). Stored results with a
/// matching config hash are reused; each new result is written atomically.
/// Data is loaded once per (task, layer) job; jobs run on `workers` threads.
/// A failing cell is recorded (result file with status "failed") and the
/// sweep continues.
inline SweepOutcome run_sweep(const std::map<std::string, Manifest> &manifests, const SweepSpec &spec,
                              const TrainConfig &base, const SweepOptions &opts) {
  spec.validate();
  base.validate();
  fs::create_directories(opts.results_dir);
  const std::string hash = config_hash(base);

  struct Slot {
    CellResult cell;
    std::optional<std::string> error;
    bool computed = false;
  };
  struct Job {
    std::string task;
    int layer;
    std::size_t first_slot;
  };
  std::vector<Slot> slots;
  std::vector<Job> jobs;
  for (const auto &task : spec.tasks)
    for (int layer : spec.layers) {
      jobs.push_back({task, layer, slots.size()});
      for (Setting s : spec.settings)
        for (std::uint64_t seed : spec.seeds)
          slots.push_back({CellResult{task, layer, s, seed, 0.0}, std::nullopt, false});
    }
  const std::size_t per_job = spec.settings.size() * spec.seeds.size();

  auto run_job = [&](const Job &job) {
    std::vector<Slot *> todo;
    for (std::size_t i = 0; i < per_job; ++i) {
      Slot &slot = slots[job.first_slot + i];
      const CellResult &c = slot.cell;
      if (auto stored = read_cell(result_path(opts.results_dir, c.task, c.layer, c.setting, c.seed), hash))
        slot.cell = *stored;
      else
        todo.push_back(&slot);
    }
    if (todo.empty())
      return;

    std::optional<std::string> load_error;
    const TaskSpec *task_spec = nullptr;
    DatasetSplit train, val, test;
    try {
      const auto it = manifests.find(job.task);
      if (it == manifests.end())
        throw DataError("no manifest for task '" + job.task + "'");
      const Manifest &m = it->second;
      task_spec = &m.task;
      train = load_dataset(m, job.task, job.layer, Split::train);
      val = load_dataset(m, job.task, job.layer, Split::val);
      test = load_dataset(m, job.task, job.layer, Split::test);
    } catch (const std::exception &e) {
      load_error = e.what();
    }

    for (Slot *slot : todo) {
      CellResult &c = slot->cell;
      slot->computed = true;
      const fs::path out = result_path(opts.results_dir, c.task, c.layer, c.setting, c.seed);
      try {
        if (load_error)
          throw DataError(*load_error);
        TrainConfig cfg = base;
        cfg.seed = c.seed;
        cfg.with_mlp = c.setting == Setting::with_mlp;
        auto trained = train_probe_with_params<double>(train, val, test, *task_spec, cfg);
        c.test_acc = trained.result.test_acc;
        if (opts.save_checkpoints && cfg.with_mlp)
          save_checkpoint(trained.best_params, static_cast<std::uint16_t>(c.layer),
                          checkpoint_path(opts.results_dir, c.task, c.layer, c.setting, c.seed));
        write_file_atomic(out, cell_json(c, trained.result, hash).dump(2) + "\n");
      } catch (const std::exception &e) {
        slot->error = e.what();
        CellFailure f{c.task, c.layer, c.setting, c.seed, e.what()};
        try {
          write_file_atomic(out, failure_json(f, hash).dump(2) + "\n");
        } catch (const std::exception &) {
        }
      }
    }
  };

  const std::size_t workers = std::clamp<std::size_t>(opts.workers, 1, std::max<std::size_t>(jobs.size(), 1));
  std::atomic<std::size_t> next{0};
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t j; (j = next.fetch_add(1)) < jobs.size();)
          run_job(jobs[j]);
      });
  }

  SweepOutcome outcome;
  for (const Slot &s : slots) {
    if (s.error) {
      outcome.failures.push_back({s.cell.task, s.cell.layer, s.cell.setting, s.cell.seed, *s.error});
      continue;
    }
    outcome.cells.push_back(s.cell);
    (s.computed ? outcome.computed : outcome.reused) += 1;
  }
  return outcome;
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

struct CellKey {
  std::string task;
  int layer;
  Setting setting;
  auto operator<=>(const CellKey &) const = default;
};

struct CellStats {
  double mean_acc = 0.0;
  double std_acc = 0.0;
  std::size_t n_seeds = 0;
  friend bool operator==(const CellStats &, const CellStats &) = default;
};

struct SweepTable {
  std::map<CellKey, CellStats> cells;

  const CellStats *find(const std::string &task, int layer, Setting s) const {
    const auto it = cells.find({task, layer, s});
    return it == cells.end() ? nullptr : &it->second;
  }

  std::vector<std::string> tasks() const {
    std::vector<std::string> out;
    for (const auto &[k, _] : cells)
      if (out.empty() || out.back() != k.task)
        out.push_back(k.task);
    return out;
  }

  std::vector<int> layers() const {
    std::vector<int> out;
    for (const auto &[k, _] : cells)
      out.push_back(k.layer);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  friend bool operator==(const SweepTable &, const SweepTable &) = default;
};

/// Mean and sample std over seeds for each (task, layer, setting).
/// `expected_seeds`, when non-zero, is enforced per group.
inline SweepTable aggregate(std::span<const CellResult> cells, std::size_t expected_seeds = 0) {
  std::map<CellKey, std::vector<double>> groups;
  for (const auto &c : cells)
    groups[{c.task, c.layer, c.setting}].push_back(c.test_acc);
  SweepTable table;
  for (auto &[key, values] : groups) {
    const std::string where = key.task + " layer " + std::to_string(key.layer) + " " +
                              std::string(to_string(key.setting));
    if (values.size() < 2)
      throw DataError("aggregate: " + where + " has " + std::to_string(values.size()) +
                      " seed(s); at least 2 are needed for a sample std");
    if (expected_seeds && values.size() != expected_seeds)
      throw DataError("aggregate: " + where + " has " + std::to_string(values.size()) +
                      " seeds, expected " + std::to_string(expected_seeds));
    table.cells[key] = {stable_mean(values), sample_std(values), values.size()};
  }
  return table;
}

struct LayerDelta {
  int layer;
  double delta; ///< mean_with - mean_without
  friend bool operator==(const LayerDelta &, const LayerDelta &) = default;
};

struct TaskDelta {
  std::vector<LayerDelta> layers;
  double trimmed_std = 0.0;
  friend bool operator==(const TaskDelta &, const TaskDelta &) = default;
};

struct DeltaReport {
  std::map<std::string, TaskDelta> tasks;
  bool empty() const noexcept { return tasks.empty(); }
  friend bool operator==(const DeltaReport &, const DeltaReport &) = default;
};

/// Per-layer with-minus-without deltas and their trimmed std per task.
inline DeltaReport delta_analysis(const SweepTable &table) {
  DeltaReport report;
  std::map<std::string, std::vector<int>> layers_by_task;
  for (const auto &[key, _] : table.cells)
    if (layers_by_task[key.task].empty() || layers_by_task[key.task].back() != key.layer)
      layers_by_task[key.task].push_back(key.layer);
  for (const auto &[task, layers] : layers_by_task) {
    TaskDelta td;
    std::vector<double> deltas;
    for (int layer : layers) {
      const CellStats *w = table.find(task, layer, Setting::with_mlp);
      const CellStats *wo = table.find(task, layer, Setting::without_mlp);
      if (!w || !wo)
        throw DataError("delta_analysis: " + task + " layer " + std::to_string(layer) +
                        " lacks the " + (w ? "without_mlp" : "with_mlp") + " setting");
      td.layers.push_back({layer, w->mean_acc - wo->mean_acc});
      deltas.push_back(td.layers.back().delta);
    }
    if (deltas.size() < 3)
      throw DataError("delta_analysis: task " + task + " has " + std::to_string(deltas.size()) +
                      " layers; the trimmed std needs at least 3");
    td.trimmed_std = trimmed_std(deltas);
    report.tasks[task] = std::move(td);
  }
  return report;
}

} // namespace mlprobe
