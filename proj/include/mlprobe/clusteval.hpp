#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <json.hpp>

#include "mlprobe/dataio.hpp"
#include "mlprobe/error.hpp"
#include "mlprobe/matrix.hpp"
#include "mlprobe/probe_model.hpp"
#include "mlprobe/rng.hpp"

namespace mlprobe {

// ---------------------------------------------------------------------------
// k-means
// ---------------------------------------------------------------------------

struct KMeansConfig {
  std::size_t k = 2;
  std::size_t max_iter = 300;
  std::size_t n_init = 10;
  std::uint64_t seed = 0;
  std::size_t threads = 1; ///< restarts run on up to this many threads
};

struct KMeansResult {
  std::vector<int> assignments;
  Matrix<double> centroids;
  double inertia = 0.0;
  std::size_t iterations = 0;
  /// Inertia after every Lloyd iteration of the winning restart.
  std::vector<double> inertia_history;
  /// Final inertia of every restart, in restart order.
  std::vector<double> restart_inertias;
};

namespace detail {

inline double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double d = a[j] - b[j];
    s += d * d;
  }
  return s;
}

/// k-means++ seeding. Throws DataError if the points hold fewer than k
/// distinct locations (every remaining point coincides with a chosen centre).
inline Matrix<double> kmeans_pp(const Matrix<double> &pts, std::size_t k, Rng &rng) {
  const std::size_t n = pts.rows();
  Matrix<double> centers(k, pts.cols());
  auto place = [&](std::size_t c, std::size_t i) {
    std::copy(pts.row(i).begin(), pts.row(i).end(), centers.row(c).begin());
  };
  place(0, rng.below(n));
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i)
    d2[i] = sq_dist(pts.row(i), centers.row(0));
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (double v : d2)
      total += v;
    if (!(total > 0.0))
      throw DataError("k-means: degenerate input, fewer than k=" + std::to_string(k) +
                      " distinct points (all points identical to the chosen centres)");
    double target = rng.uniform() * total;
    std::size_t pick = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      if (d2[i] <= 0.0)
        continue;
      target -= d2[i];
      if (target < 0.0) {
        pick = i;
        break;
      }
    }
    while (d2[pick] <= 0.0) // floating round-off landed on a zero-weight tail
      --pick;
    place(c, pick);
    for (std::size_t i = 0; i < n; ++i)
      d2[i] = std::min(d2[i], sq_dist(pts.row(i), centers.row(c)));
  }
  return centers;
}

inline KMeansResult lloyd(const Matrix<double> &pts, Matrix<double> centers, std::size_t max_iter) {
  const std::size_t n = pts.rows(), k = centers.rows(), d = pts.cols();
  KMeansResult r;
  r.assignments.assign(n, -1);
  std::vector<double> dist(n);
  std::vector<std::size_t> counts(k);

  for (std::size_t iter = 0; iter < max_iter; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double dc = sq_dist(pts.row(i), centers.row(c));
        if (dc < best_d) {
          best_d = dc;
          best = static_cast<int>(c);
        }
      }
      // Keep the current cluster on exact ties so inertia cannot rise.
      const int cur = r.assignments[i];
      if (cur >= 0 && cur != best && sq_dist(pts.row(i), centers.row(cur)) <= best_d)
        best = cur;
      changed = changed || best != cur;
      r.assignments[i] = best;
    }
    if (!changed)
      break;
    r.iterations = iter + 1;

    auto recompute = [&] {
      centers.fill(0.0);
      std::fill(counts.begin(), counts.end(), 0);
      for (std::size_t i = 0; i < n; ++i) {
        const auto c = static_cast<std::size_t>(r.assignments[i]);
        ++counts[c];
        auto cr = centers.row(c);
        const auto pr = pts.row(i);
        for (std::size_t j = 0; j < d; ++j)
          cr[j] += pr[j];
      }
      for (std::size_t c = 0; c < k; ++c)
        if (counts[c] > 0)
          for (auto &v : centers.row(c))
            v /= static_cast<double>(counts[c]);
    };
    recompute();

    // Empty clusters take the point farthest from its centroid.
    bool repaired = false;
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] != 0)
        continue;
      std::size_t far = n;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        const auto a = static_cast<std::size_t>(r.assignments[i]);
        if (counts[a] < 2)
          continue;
        const double di = sq_dist(pts.row(i), centers.row(a));
        if (di > far_d) {
          far_d = di;
          far = i;
        }
      }
      if (far == n)
        break;
      --counts[static_cast<std::size_t>(r.assignments[far])];
      r.assignments[far] = static_cast<int>(c);
      counts[c] = 1;
      std::copy(pts.row(far).begin(), pts.row(far).end(), centers.row(c).begin());
      repaired = true;
    }
    if (repaired)
      recompute();

    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      inertia += sq_dist(pts.row(i), centers.row(static_cast<std::size_t>(r.assignments[i])));
    r.inertia_history.push_back(inertia);
  }
  r.inertia = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    r.inertia += sq_dist(pts.row(i), centers.row(static_cast<std::size_t>(r.assignments[i])));
  r.centroids = std::move(centers);
  return r;
}

} // namespace detail

/// Restart seed for restart `r` of a k-means call seeded with `seed`.
inline std::uint64_t kmeans_restart_seed(std::uint64_t seed, std::size_t r) {
  std::uint64_t s = seed ^ (0xa0761d6478bd642fULL * (r + 1));
  return splitmix64(s);
}

/// Lloyd's algorithm from k-means++ seeds; best of n_init restarts by inertia
/// (ties keep the earliest restart).
template <typename T> KMeansResult kmeans(const Matrix<T> &points, const KMeansConfig &cfg) {
  if (cfg.k < 1 || cfg.n_init < 1)
    throw ShapeError("kmeans: k and n_init must be >= 1");
  if (points.rows() < cfg.k)
    throw ShapeError("kmeans: " + std::to_string(points.rows()) + " points < k=" +
                     std::to_string(cfg.k));
  Matrix<double> pts(points.rows(), points.cols());
  std::copy(points.flat().begin(), points.flat().end(), pts.flat().begin());
  for (double v : pts.flat())
    if (!std::isfinite(v))
      throw DataError("kmeans: non-finite point coordinate");

  std::vector<KMeansResult> runs(cfg.n_init);
  auto run = [&](std::size_t r) {
    Rng rng(kmeans_restart_seed(cfg.seed, r));
    runs[r] = detail::lloyd(pts, detail::kmeans_pp(pts, cfg.k, rng), cfg.max_iter);
  };
  const std::size_t threads = std::min(std::max<std::size_t>(cfg.threads, 1), cfg.n_init);
  if (threads == 1) {
    for (std::size_t r = 0; r < cfg.n_init; ++r)
      run(r);
  } else {
    std::vector<std::exception_ptr> errors(threads);
    {
      std::vector<std::jthread> pool;
      for (std::size_t t = 0; t < threads; ++t)
        pool.emplace_back([&, t] {
          try {
            for (std::size_t r = t; r < cfg.n_init; r += threads)
              run(r);
          } catch (...) {
            errors[t] = std::current_exception();
          }
        });
    }
    for (auto &e : errors)
      if (e)
        std::rethrow_exception(e);
  }

  std::size_t best = 0;
  for (std::size_t r = 1; r < runs.size(); ++r)
    if (runs[r].inertia < runs[best].inertia)
      best = r;
  KMeansResult out = std::move(runs[best]);
  out.restart_inertias.clear();
  for (std::size_t r = 0; r < runs.size(); ++r)
    out.restart_inertias.push_back(r == best ? out.inertia : runs[r].inertia);
  return out;
}

// ---------------------------------------------------------------------------
// Normalized mutual information
// ---------------------------------------------------------------------------

/// NMI with arithmetic-mean normalization, natural logs:
///   MI(U, V) / ((H(U) + H(V)) / 2).
/// Two single-cluster partitions score 1; if exactly one partition is a
/// single cluster the score is 0.
inline double nmi(std::span<const int> truth, std::span<const int> pred) {
  if (truth.size() != pred.size())
    throw ShapeError("nmi: length mismatch (" + std::to_string(truth.size()) + " vs " +
                     std::to_string(pred.size()) + ")");
  if (truth.empty())
    throw ShapeError("nmi: empty input");
  const double n = static_cast<double>(truth.size());
  std::map<int, double> cu, cv;
  std::map<std::pair<int, int>, double> joint;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    cu[truth[i]] += 1.0;
    cv[pred[i]] += 1.0;
    joint[{truth[i], pred[i]}] += 1.0;
  }
  auto entropy = [n](const std::map<int, double> &counts) {
    double h = 0.0;
    for (const auto &[_, c] : counts)
      h -= c / n * std::log(c / n);
    return h;
  };
  const double hu = entropy(cu), hv = entropy(cv);
  if (cu.size() == 1 && cv.size() == 1)
    return 1.0;
  if (cu.size() == 1 || cv.size() == 1)
    return 0.0;
  double mi = 0.0;
  for (const auto &[key, c] : joint)
    mi += c / n * std::log(c * n / (cu[key.first] * cv[key.second]));
  const double value = mi / ((hu + hv) / 2.0);
  return std::clamp(value, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Raw vs MLP-transformed representations
// ---------------------------------------------------------------------------

/// Z = MLP(X) + X: the features the head of a with-MLP probe sees.
template <typename T> Matrix<T> mlp_transform(const ProbeParams<T> &p, const Matrix<T> &x) {
  if (!p.mlp)
    throw ShapeError("mlp_transform: probe has no MLP block");
  detail::check_input(p, x);
  ForwardCache<T> cache;
  cache.x = x;
  return detail::residual_features(p, cache);
}

enum class ClusterMode { per_task, pooled_group };

inline std::string_view to_string(ClusterMode m) {
  return m == ClusterMode::per_task ? "per_task" : "pooled_group";
}

inline ClusterMode parse_cluster_mode(std::string_view s) {
  if (s == "per_task")
    return ClusterMode::per_task;
  if (s == "pooled_group")
    return ClusterMode::pooled_group;
  throw DataError("unknown cluster mode '" + std::string(s) + "'");
}

struct ClusterConfig {
  ClusterMode mode = ClusterMode::per_task;
  int layer = 12;
  std::size_t k = 0; ///< 0: derived from the mode
  std::size_t max_iter = 300;
  std::size_t n_init = 10;
  std::uint64_t seed = 0;
};

struct ClusterComparison {
  double nmi_without = 0.0;
  double nmi_with = 0.0;
  double delta = 0.0;
};

/// Clusters both representations with the identical k-means configuration
/// and scores each against `truth`.
template <typename T>
ClusterComparison compare_clusterings(const Matrix<T> &raw, const Matrix<T> &transformed,
                                      std::span<const int> truth, const KMeansConfig &km) {
  if (raw.rows() != truth.size() || transformed.rows() != truth.size())
    throw ShapeError("compare_clusterings: row counts differ from truth length");
  ClusterComparison c;
  c.nmi_without = nmi(truth, kmeans(raw, km).assignments);
  c.nmi_with = nmi(truth, kmeans(transformed, km).assignments);
  c.delta = c.nmi_with - c.nmi_without;
  return c;
}

/// Test-split data for one task plus the trained with-MLP probe for that
/// task at the configured layer.
struct ClusterSource {
  const Manifest *manifest;
  ProbeParams<double> probe;
};

struct ClusterEvalRow {
  std::string group;
  ClusterMode mode = ClusterMode::per_task;
  int layer = 0;
  std::size_t k = 0;
  std::uint64_t seed = 0;
  ClusterComparison scores;
};

/// per_task: one source, truth = class labels, k = n_classes.
/// pooled_group: several tasks of one linguistic level pooled, truth = task
/// identity, k = number of tasks; each task's rows go through its own probe.
inline ClusterEvalRow cluster_eval(std::span<const ClusterSource> sources, const ClusterConfig &cfg,
                                   std::string group = {}) {
  if (sources.empty())
    throw DataError("cluster_eval: no sources");
  for (const auto &s : sources)
    if (!s.probe.mlp)
      throw DataError("cluster_eval: task '" + s.manifest->task.name +
                      "' lacks a with-MLP checkpoint");
  std::size_t k = 0;
  if (cfg.mode == ClusterMode::per_task) {
    if (sources.size() != 1)
      throw DataError("cluster_eval: per_task mode takes exactly one task");
    k = static_cast<std::size_t>(sources[0].manifest->task.n_classes);
  } else {
    if (sources.size() < 2)
      throw DataError("cluster_eval: pooled_group mode needs at least two tasks");
    for (const auto &s : sources)
      if (s.manifest->task.level != sources[0].manifest->task.level)
        throw DataError("cluster_eval: pooled tasks must share a linguistic level");
    k = sources.size();
  }
  if (cfg.k != 0 && cfg.k != k)
    throw DataError("cluster_eval: k=" + std::to_string(cfg.k) + " inconsistent with mode " +
                    std::string(to_string(cfg.mode)) + " (expects k=" + std::to_string(k) + ")");

  std::vector<Matrix<double>> raws, zs;
  std::vector<int> truth;
  std::size_t rows = 0, dim = 0;
  for (std::size_t s = 0; s < sources.size(); ++s) {
    const Manifest &m = *sources[s].manifest;
    const DatasetSplit test = load_dataset(m, m.task.name, cfg.layer, Split::test);
    Matrix<double> x = convert<double>(test.embeddings.values);
    if (x.cols() != sources[s].probe.dim())
      throw DataError("cluster_eval: checkpoint dim " + std::to_string(sources[s].probe.dim()) +
                      " != embedding dim " + std::to_string(x.cols()) + " for task '" + m.task.name + "'");
    if (s > 0 && x.cols() != dim)
      throw DataError("cluster_eval: pooled tasks disagree on dim");
    dim = x.cols();
    zs.push_back(mlp_transform(sources[s].probe, x));
    if (cfg.mode == ClusterMode::per_task)
      truth = test.labels.class_ids;
    else
      truth.insert(truth.end(), x.rows(), static_cast<int>(s));
    rows += x.rows();
    raws.push_back(std::move(x));
  }
  auto stack = [&](const std::vector<Matrix<double>> &parts) {
    Matrix<double> out(rows, dim);
    std::size_t r = 0;
    for (const auto &p : parts)
      for (std::size_t i = 0; i < p.rows(); ++i, ++r)
        std::copy(p.row(i).begin(), p.row(i).end(), out.row(r).begin());
    return out;
  };

  KMeansConfig km{k, cfg.max_iter, cfg.n_init, cfg.seed, 1};
  ClusterEvalRow row;
  row.group = group.empty() ? sources[0].manifest->task.name : std::move(group);
  row.mode = cfg.mode;
  row.layer = cfg.layer;
  row.k = k;
  row.seed = cfg.seed;
  row.scores = compare_clusterings(stack(raws), stack(zs), truth, km);
  return row;
}

inline nlohmann::json to_json(const ClusterEvalRow &r) {
  return {{"group", r.group},
          {"mode", to_string(r.mode)},
          {"layer", r.layer},
          {"k", r.k},
          {"seed", r.seed},
          {"nmi_without", r.scores.nmi_without},
          {"nmi_with", r.scores.nmi_with},
          {"delta", r.scores.delta}};
}

inline ClusterEvalRow cluster_row_from_json(const nlohmann::json &j) {
  ClusterEvalRow r;
  r.group = j.at("group").get<std::string>();
  r.mode = parse_cluster_mode(j.at("mode").get<std::string>());
  r.layer = j.at("layer").get<int>();
  r.k = j.at("k").get<std::size_t>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.scores.nmi_without = j.at("nmi_without").get<double>();
  r.scores.nmi_with = j.at("nmi_with").get<double>();
  r.scores.delta = j.at("delta").get<double>();
  return r;
}

} // namespace mlprobe
