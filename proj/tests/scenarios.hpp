#pragma once

// Shared training setups for the unit and acceptance suites.

#include "mlprobe/synthetic.hpp"
#include "mlprobe/trainer.hpp"

namespace mlprobe::testing {

inline TaskSpec binary_task(std::string name, Level level = Level::syntactic) {
  return {std::move(name), level, 2, {{"neg", 0}, {"pos", 1}}};
}

/// Small-batch Adam with a 16-unit hidden layer. The 2-d XOR signal needs more
/// hidden units than the input width, and frequent validation to pick a good
/// checkpoint.
inline TrainConfig synthetic_config(bool with_mlp, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.batch_size = 64;
  cfg.epochs = 10;
  cfg.lr = 3e-3;
  cfg.eval_every = 50;
  cfg.patience = 5;
  cfg.hidden = 16;
  cfg.with_mlp = with_mlp;
  cfg.seed = seed;
  return cfg;
}

inline TrainResult train_on(const synthetic::Dataset &d, const TaskSpec &spec, bool with_mlp,
                            std::uint64_t seed) {
  return train_probe(d.train, d.val, d.test, spec, synthetic_config(with_mlp, seed));
}

} // namespace mlprobe::testing
