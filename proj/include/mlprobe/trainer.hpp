#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mlprobe/dataio.hpp"
#include "mlprobe/error.hpp"
#include "mlprobe/probe_model.hpp"
#include "mlprobe/rng.hpp"

namespace mlprobe {

enum class Setting { without_mlp, with_mlp };

inline std::string_view to_string(Setting s) {
  return s == Setting::with_mlp ? "with_mlp" : "without_mlp";
}

inline Setting parse_setting(std::string_view s) {
  if (s == "with_mlp")
    return Setting::with_mlp;
  if (s == "without_mlp")
    return Setting::without_mlp;
  throw DataError("unknown setting '" + std::string(s) + "' (expected with_mlp or without_mlp)");
}

struct TrainConfig {
  std::size_t batch_size = 64;
  std::size_t epochs = 4;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t eval_every = 200;
  std::size_t patience = 5;
  std::uint64_t seed = 0;
  bool with_mlp = false;
  std::size_t hidden = 0; ///< 0 means "same as input dim"
  Activation activation = Activation::relu;

  Setting setting() const noexcept { return with_mlp ? Setting::with_mlp : Setting::without_mlp; }

  void validate() const {
    if (batch_size < 1 || epochs < 1 || patience < 1 || eval_every < 1)
      throw ShapeError("TrainConfig: batch_size, epochs, patience and eval_every must be >= 1");
    if (!(lr >= 0.0))
      throw ShapeError("TrainConfig: lr must be non-negative");
  }
};

struct HistoryEntry {
  std::size_t step;
  double train_loss; ///< mean batch loss since the previous validation
  double val_acc;
  friend bool operator==(const HistoryEntry &, const HistoryEntry &) = default;
};

struct TrainResult {
  double best_val_acc = 0.0;
  double test_acc = 0.0;
  std::size_t best_step = 0;
  std::size_t steps_run = 0;
  bool stopped_early = false;
  std::vector<HistoryEntry> history;
  friend bool operator==(const TrainResult &, const TrainResult &) = default;
};

/// Seed of one (seed, task, layer, setting) run: FNV-1a over
/// "<task>|<layer>|<setting>", xor-ed with the user seed, then one
/// splitmix64 round. Runs are reproducible in isolation.
inline std::uint64_t derive_run_seed(std::uint64_t seed, std::string_view task, int layer,
                                     Setting setting) {
  const std::string key =
      std::string(task) + "|" + std::to_string(layer) + "|" + std::string(to_string(setting));
  std::uint64_t state = fnv1a(key) ^ seed;
  return splitmix64(state);
}

/// True iff each of the last `patience` validations fails to strictly exceed
/// the best value seen before it.
inline bool check_early_stop(std::span<const double> val_history, std::size_t patience) {
  if (patience == 0 || val_history.size() <= patience)
    return false;
  const std::size_t first_stale = val_history.size() - patience;
  double best = val_history[0];
  for (std::size_t i = 1; i < first_stale; ++i)
    best = std::max(best, val_history[i]);
  for (std::size_t i = first_stale; i < val_history.size(); ++i) {
    if (val_history[i] > best)
      return false;
  }
  return true;
}

/// One epoch's mini-batches: a seeded Fisher-Yates permutation cut into
/// batch_size chunks. The final short batch is kept.
inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size,
                                                           Rng &rng) {
  const auto order = shuffled_indices(n, rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size)
    batches.emplace_back(order.begin() + start, order.begin() + std::min(n, start + batch_size));
  return batches;
}

template <typename T> struct TrainOutput {
  TrainResult result;
  ProbeParams<T> best_params;
};

namespace detail {

inline void check_splits(const DatasetSplit &train, const DatasetSplit &val, const DatasetSplit &test,
                         const TaskSpec &spec) {
  if (train.size() == 0)
    throw ShapeError("train_probe: empty train split");
  if (val.size() == 0 || test.size() == 0)
    throw ShapeError("train_probe: empty validation or test split");
  if (val.dim() != train.dim() || test.dim() != train.dim())
    throw ShapeError("train_probe: splits disagree on dim");
  for (const DatasetSplit *s : {&train, &val, &test}) {
    if (s->embeddings.n_rows() != s->labels.n_rows())
      throw ShapeError("train_probe: embedding/label row mismatch");
    for (int id : s->labels.class_ids)
      if (id < 0 || id >= spec.n_classes)
        throw ShapeError("train_probe: label " + std::to_string(id) + " outside [0, " +
                         std::to_string(spec.n_classes) + ") for task '" + spec.name + "'");
  }
}

} // namespace detail

/// Mini-batch Adam training with step-based validation, early stopping and
/// best-checkpoint selection. Validation also runs after the last step if it
/// did not land on an eval_every boundary. Test accuracy is measured once, on
/// the best-validation checkpoint (earliest on ties).
template <typename T = double>
TrainOutput<T> train_probe_with_params(const DatasetSplit &train, const DatasetSplit &val,
                                       const DatasetSplit &test, const TaskSpec &spec,
                                       const TrainConfig &cfg) {
  cfg.validate();
  detail::check_splits(train, val, test, spec);
  const int layer = train.embeddings.layer;
  Rng rng(derive_run_seed(cfg.seed, spec.name, layer, cfg.setting()));

  const std::size_t dim = train.dim();
  const std::size_t hidden = cfg.hidden == 0 ? dim : cfg.hidden;
  ProbeParams<T> params =
      init_params<T>(dim, static_cast<std::size_t>(spec.n_classes), cfg.with_mlp, hidden, rng, cfg.activation);
  AdamState<T> adam(params, {cfg.lr, cfg.beta1, cfg.beta2, cfg.epsilon});

  TrainOutput<T> out;
  TrainResult &res = out.result;
  out.best_params = params;
  std::vector<double> val_history;
  double best = -1.0;
  double loss_sum = 0.0;
  std::size_t loss_count = 0;
  std::size_t step = 0;
  std::size_t last_eval_step = 0;
  std::vector<int> batch_labels;

  auto evaluate = [&] {
    const double acc = accuracy(params, val);
    res.history.push_back({step, loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0, acc});
    loss_sum = 0.0;
    loss_count = 0;
    last_eval_step = step;
    val_history.push_back(acc);
    if (acc > best) {
      best = acc;
      res.best_step = step;
      out.best_params = params;
    }
    return check_early_stop(val_history, cfg.patience);
  };

  for (std::size_t epoch = 0; epoch < cfg.epochs && !res.stopped_early; ++epoch) {
    for (const auto &batch : epoch_batches(train.size(), cfg.batch_size, rng)) {
      const Matrix<T> x = gather_rows<T>(train.embeddings.values, batch);
      batch_labels.resize(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i)
        batch_labels[i] = train.labels.class_ids[batch[i]];
      const LossAndGrad<T> lg = loss_and_grad(params, x, batch_labels);
      adam_step(params, lg.grads, adam);
      loss_sum += static_cast<double>(lg.loss);
      ++loss_count;
      ++step;
      if (step % cfg.eval_every == 0 && evaluate()) {
        res.stopped_early = true;
        break;
      }
    }
  }
  if (last_eval_step != step)
    evaluate();

  res.steps_run = step;
  res.best_val_acc = best;
  res.test_acc = accuracy(out.best_params, test);
  return out;
}

template <typename T = double>
TrainResult train_probe(const DatasetSplit &train, const DatasetSplit &val, const DatasetSplit &test,
                        const TaskSpec &spec, const TrainConfig &cfg) {
  return train_probe_with_params<T>(train, val, test, spec, cfg).result;
}

// ---------------------------------------------------------------------------
// Result files
// ---------------------------------------------------------------------------

/// `<task>_<layer>_<setting>_<seed>`
inline std::string run_stem(std::string_view task, int layer, Setting setting, std::uint64_t seed) {
  return std::string(task) + "_" + std::to_string(layer) + "_" + std::string(to_string(setting)) +
         "_" + std::to_string(seed);
}

inline nlohmann::json to_json(const TrainResult &r) {
  nlohmann::json history = nlohmann::json::array();
  for (const auto &h : r.history)
    history.push_back({{"step", h.step}, {"train_loss", h.train_loss}, {"val_acc", h.val_acc}});
  return {{"best_val_acc", r.best_val_acc}, {"test_acc", r.test_acc},
          {"best_step", r.best_step},       {"steps_run", r.steps_run},
          {"stopped_early", r.stopped_early}, {"history", history}};
}

inline TrainResult train_result_from_json(const nlohmann::json &j) {
  TrainResult r;
  r.best_val_acc = j.at("best_val_acc").get<double>();
  r.test_acc = j.at("test_acc").get<double>();
  r.best_step = j.value("best_step", std::size_t{0});
  r.steps_run = j.at("steps_run").get<std::size_t>();
  r.stopped_early = j.at("stopped_early").get<bool>();
  for (const auto &h : j.at("history"))
    r.history.push_back({h.at("step").get<std::size_t>(), h.at("train_loss").get<double>(),
                         h.at("val_acc").get<double>()});
  return r;
}

inline nlohmann::json to_json(const TrainConfig &c) {
  return {{"batch_size", c.batch_size}, {"epochs", c.epochs},   {"lr", c.lr},
          {"beta1", c.beta1},           {"beta2", c.beta2},     {"epsilon", c.epsilon},
          {"eval_every", c.eval_every}, {"patience", c.patience}, {"seed", c.seed},
          {"with_mlp", c.with_mlp},     {"hidden", c.hidden},   {"activation", to_string(c.activation)}};
}

/// Missing keys keep their defaults.
inline TrainConfig train_config_from_json(const nlohmann::json &j, TrainConfig c = {}) {
  try {
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.lr = j.value("lr", c.lr);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.eval_every = j.value("eval_every", c.eval_every);
    c.patience = j.value("patience", c.patience);
    c.seed = j.value("seed", c.seed);
    c.with_mlp = j.value("with_mlp", c.with_mlp);
    if (j.contains("hidden") && !j.at("hidden").is_null())
      c.hidden = j.at("hidden").get<std::size_t>();
    if (j.contains("activation"))
      c.activation = parse_activation(j.at("activation").get<std::string>());
  } catch (const nlohmann::json::exception &e) {
    throw DataError("malformed train config: " + std::string(e.what()));
  }
  return c;
}

} // namespace mlprobe
