#pragma once

// Finite-difference oracle for probe gradients. It only calls forward() and
// evaluates the loss itself, so it shares nothing with the backward pass.

#include <algorithm>
#include <cmath>
#include <vector>

#include "mlprobe/probe_model.hpp"
#include "mlprobe/rng.hpp"

namespace mlprobe::testing {

/// Mean softmax cross-entropy from logits, computed directly with long double.
inline double reference_loss(const ProbeParams<double> &p, const Matrix<double> &x, const std::vector<int> &y) {
  const Matrix<double> logits = forward(p, x).logits;
  long double total = 0.0L;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto r = logits.row(i);
    const long double mx = *std::max_element(r.begin(), r.end());
    long double z = 0.0L;
    for (double v : r)
      z += std::exp(static_cast<long double>(v) - mx);
    total += mx + std::log(z) - r[y[i]];
  }
  return static_cast<double>(total / logits.rows());
}

/// ReLU sign pattern of the MLP pre-activations; empty without an MLP.
inline std::vector<bool> relu_pattern(const ProbeParams<double> &p, const Matrix<double> &x) {
  std::vector<bool> out;
  if (!p.mlp || p.activation != Activation::relu)
    return out;
  const Matrix<double> pre = linalg::affine(x, p.mlp->w1, p.mlp->b1);
  for (double v : pre.flat())
    out.push_back(v > 0.0);
  return out;
}

struct GradCheckStats {
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
  /// Worst per-coordinate relative error.
  double max_rel_err = 0.0;
  /// ||analytic - numeric|| / max(||analytic||, ||numeric||) over the checked
  /// coordinates. Unlike the per-coordinate figure it is not dominated by
  /// the O(h^2) truncation error on near-zero gradients.
  double vector_rel_err = 0.0;
};

/// Relative error with a floor on the denominator so coordinates whose
/// gradient is ~0 are judged on absolute error.
inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

/// Central differences with step h on `coords` random coordinates. ReLU
/// coordinates whose +h/-h perturbation flips any unit across its kink are
/// resampled: the loss is not differentiable there.
inline GradCheckStats check_gradients(const ProbeParams<double> &params, const Matrix<double> &x,
                                      const std::vector<int> &y, const ProbeParams<double> &analytic,
                                      std::size_t coords, Rng &rng, double h = 1e-3) {
  GradCheckStats stats;
  ProbeParams<double> probe = params;
  auto tensors = probe.tensors();
  const auto grads = analytic.tensors();
  const auto base_pattern = relu_pattern(params, x);
  std::size_t attempts = 0;
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  while (stats.checked < coords && attempts < coords * 50) {
    ++attempts;
    const std::size_t t = rng.below(tensors.size());
    const std::size_t i = rng.below(tensors[t]->size());
    double &w = tensors[t]->flat()[i];
    const double saved = w;
    w = saved + h;
    const double up = reference_loss(probe, x, y);
    const bool kink_up = relu_pattern(probe, x) != base_pattern;
    w = saved - h;
    const double down = reference_loss(probe, x, y);
    const bool kink_down = relu_pattern(probe, x) != base_pattern;
    w = saved;
    if (kink_up || kink_down) {
      ++stats.skipped_kinks;
      continue;
    }
    const double numeric = (up - down) / (2.0 * h);
    const double a = grads[t]->flat()[i];
    stats.max_rel_err = std::max(stats.max_rel_err, rel_err(a, numeric));
    diff2 += (a - numeric) * (a - numeric);
    a2 += a * a;
    n2 += numeric * numeric;
    ++stats.checked;
  }
  const double denom = std::max(std::sqrt(std::max(a2, n2)), 1e-12);
  stats.vector_rel_err = std::sqrt(diff2) / denom;
  return stats;
}

inline Matrix<double> random_matrix(std::size_t r, std::size_t c, Rng &rng, double scale = 1.0) {
  Matrix<double> m(r, c);
  for (auto &v : m.flat())
    v = scale * rng.normal();
  return m;
}

/// Random probe with non-zero biases so every parameter gets exercised.
inline ProbeParams<double> random_probe(std::size_t dim, std::size_t classes, bool with_mlp,
                                        std::size_t hidden, Activation act, Rng &rng) {
  ProbeParams<double> p = init_params<double>(dim, classes, with_mlp, hidden, rng, act);
  for (auto *t : p.tensors())
    if (t->rows() == 1)
      for (auto &v : t->flat())
        v = 0.1 * rng.normal();
  return p;
}

} // namespace mlprobe::testing
