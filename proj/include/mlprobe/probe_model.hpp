#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mlprobe/dataio.hpp"
#include "mlprobe/error.hpp"
#include "mlprobe/matrix.hpp"
#include "mlprobe/rng.hpp"

namespace mlprobe {

enum class Activation { relu, tanh };

inline std::string_view to_string(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }

inline Activation parse_activation(std::string_view s) {
  if (s == "relu")
    return Activation::relu;
  if (s == "tanh")
    return Activation::tanh;
  throw DataError("unknown activation '" + std::string(s) + "'");
}

/// Two affine layers, dim -> hidden -> dim, so the output can be added back
/// onto the input.
template <typename T> struct MlpBlock {
  Matrix<T> w1; // dim x hidden
  Matrix<T> b1; // 1 x hidden
  Matrix<T> w2; // hidden x dim
  Matrix<T> b2; // 1 x dim

  std::size_t dim() const noexcept { return w1.rows(); }
  std::size_t hidden() const noexcept { return w1.cols(); }
  friend bool operator==(const MlpBlock &, const MlpBlock &) = default;
};

template <typename T> struct LinearHead {
  Matrix<T> w; // dim x n_classes
  Matrix<T> b; // 1 x n_classes
  friend bool operator==(const LinearHead &, const LinearHead &) = default;
};

/// Probe parameters. `mlp` is present exactly for the with-MLP setting.
template <typename T> struct ProbeParams {
  std::optional<MlpBlock<T>> mlp;
  LinearHead<T> head;
  Activation activation = Activation::relu;

  std::size_t dim() const noexcept { return head.w.rows(); }
  std::size_t n_classes() const noexcept { return head.w.cols(); }
  bool with_mlp() const noexcept { return mlp.has_value(); }

  /// Tensors in checkpoint order: W1, b1, W2, b2, W, b.
  std::vector<Matrix<T> *> tensors() {
    std::vector<Matrix<T> *> out;
    if (mlp)
      out = {&mlp->w1, &mlp->b1, &mlp->w2, &mlp->b2};
    out.push_back(&head.w);
    out.push_back(&head.b);
    return out;
  }
  std::vector<const Matrix<T> *> tensors() const {
    auto self = const_cast<ProbeParams *>(this)->tensors();
    return {self.begin(), self.end()};
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto *t : tensors())
      n += t->size();
    return n;
  }

  /// Same shapes, all zeros.
  ProbeParams zeros_like() const {
    ProbeParams z = *this;
    for (auto *t : z.tensors())
      t->fill(T{0});
    return z;
  }

  friend bool operator==(const ProbeParams &, const ProbeParams &) = default;
};

namespace detail {

/// Glorot-uniform sample strictly inside (-s, s).
template <typename T> Matrix<T> glorot(std::size_t fan_in, std::size_t fan_out, Rng &rng) {
  const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Matrix<T> m(fan_in, fan_out);
  for (auto &w : m.flat()) {
    const double u = (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
    w = static_cast<T>((2.0 * u - 1.0) * s);
  }
  return m;
}

template <typename T> T activate(T x, Activation a) {
  return a == Activation::relu ? (x > T{0} ? x : T{0}) : std::tanh(x);
}

/// d act / d pre, expressed through pre-activation and activation values.
template <typename T> T activate_grad(T pre, T post, Activation a) {
  return a == Activation::relu ? (pre > T{0} ? T{1} : T{0}) : T{1} - post * post;
}

} // namespace detail

template <typename T = double>
ProbeParams<T> init_params(std::size_t dim, std::size_t n_classes, bool with_mlp,
                           std::size_t hidden, Rng &rng,
                           Activation activation = Activation::relu) {
  if (dim == 0 || n_classes == 0 || (with_mlp && hidden == 0))
    throw ShapeError("init_params: dim, n_classes and hidden must be positive");
  ProbeParams<T> p;
  p.activation = activation;
  if (with_mlp) {
    MlpBlock<T> mlp;
    mlp.w1 = detail::glorot<T>(dim, hidden, rng);
    mlp.b1 = Matrix<T>(1, hidden);
    mlp.w2 = detail::glorot<T>(hidden, dim, rng);
    mlp.b2 = Matrix<T>(1, dim);
    p.mlp = std::move(mlp);
  }
  p.head.w = detail::glorot<T>(dim, n_classes, rng);
  p.head.b = Matrix<T>(1, n_classes);
  return p;
}

/// Intermediates kept for the backward pass.
template <typename T> struct ForwardCache {
  Matrix<T> x;
  Matrix<T> pre;    // X W1 + b1
  Matrix<T> hidden; // act(pre)
  Matrix<T> z;      // probe-head input
};

template <typename T> struct ForwardResult {
  Matrix<T> logits;
  ForwardCache<T> cache;
};

namespace detail {

template <typename T> void check_input(const ProbeParams<T> &p, const Matrix<T> &x) {
  if (x.cols() != p.dim())
    throw ShapeError("input has " + std::to_string(x.cols()) + " columns, probe expects dim " +
                     std::to_string(p.dim()));
}

/// Z = act(X W1 + b1) W2 + b2 + X, filling the cache's MLP intermediates.
template <typename T> Matrix<T> residual_features(const ProbeParams<T> &p, ForwardCache<T> &cache) {
  const MlpBlock<T> &mlp = *p.mlp;
  cache.pre = linalg::affine(cache.x, mlp.w1, mlp.b1);
  cache.hidden = cache.pre;
  for (auto &v : cache.hidden.flat())
    v = activate(v, p.activation);
  Matrix<T> z = linalg::affine(cache.hidden, mlp.w2, mlp.b2);
  const auto xs = cache.x.flat();
  auto zs = z.flat();
  for (std::size_t i = 0; i < zs.size(); ++i)
    zs[i] = xs[i] + zs[i];
  return z;
}

} // namespace detail

/// Logits of the probe. Without MLP: X W + b. With MLP: Z W + b where Z is
/// the residual MLP output.
template <typename T> ForwardResult<T> forward(const ProbeParams<T> &p, const Matrix<T> &x) {
  detail::check_input(p, x);
  ForwardResult<T> r;
  r.cache.x = x;
  r.cache.z = p.mlp ? detail::residual_features(p, r.cache) : x;
  r.logits = linalg::affine(r.cache.z, p.head.w, p.head.b);
  return r;
}

template <typename T> struct LossAndGrad {
  T loss;
  ProbeParams<T> grads;
};

namespace detail {

/// Row-wise softmax, max-shifted. Returns per-row log-sum-exp.
template <typename T> std::vector<T> softmax_rows(Matrix<T> &logits) {
  std::vector<T> lse(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto r = logits.row(i);
    const T mx = *std::max_element(r.begin(), r.end());
    T sum{0};
    for (auto &v : r) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (auto &v : r)
      v /= sum;
    lse[i] = mx + std::log(sum);
  }
  return lse;
}

template <typename T> void check_labels(std::span<const int> labels, std::size_t rows, std::size_t n_classes) {
  if (labels.size() != rows)
    throw ShapeError("got " + std::to_string(labels.size()) + " labels for " + std::to_string(rows) +
                     " rows");
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= n_classes)
      throw ShapeError("label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                       " outside [0, " + std::to_string(n_classes) + ")");
}

} // namespace detail

/// Mean softmax cross-entropy over the batch and its exact gradient.
template <typename T>
LossAndGrad<T> loss_and_grad(const ProbeParams<T> &p, const Matrix<T> &x, std::span<const int> labels) {
  if (x.rows() == 0)
    throw ShapeError("loss_and_grad: empty batch");
  detail::check_labels<T>(labels, x.rows(), p.n_classes());
  ForwardResult<T> fw = forward(p, x);
  const std::size_t batch = x.rows();
  const T inv_batch = T{1} / static_cast<T>(batch);

  // logits -> probabilities, then dL/dlogits = (p - onehot) / B
  Matrix<T> &dlogits = fw.logits;
  T loss{0};
  {
    Matrix<T> raw = fw.logits;
    const auto lse = detail::softmax_rows(dlogits);
    for (std::size_t i = 0; i < batch; ++i) {
      loss += lse[i] - raw(i, labels[i]);
      dlogits(i, labels[i]) -= T{1};
    }
  }
  loss *= inv_batch;
  for (auto &v : dlogits.flat())
    v *= inv_batch;

  LossAndGrad<T> out{loss, p.zeros_like()};
  ProbeParams<T> &g = out.grads;
  linalg::accumulate_at_b(fw.cache.z, dlogits, g.head.w);
  linalg::accumulate_column_sums(dlogits, g.head.b);

  if (p.mlp) {
    const MlpBlock<T> &mlp = *p.mlp;
    MlpBlock<T> &gm = *g.mlp;
    // The residual path carries dZ straight to X; only the branch needs work.
    const Matrix<T> dz = linalg::multiply_abt(dlogits, p.head.w);
    linalg::accumulate_at_b(fw.cache.hidden, dz, gm.w2);
    linalg::accumulate_column_sums(dz, gm.b2);
    Matrix<T> dpre = linalg::multiply_abt(dz, mlp.w2);
    auto dp = dpre.flat();
    const auto pre = fw.cache.pre.flat();
    const auto post = fw.cache.hidden.flat();
    for (std::size_t i = 0; i < dp.size(); ++i)
      dp[i] *= detail::activate_grad(pre[i], post[i], p.activation);
    linalg::accumulate_at_b(fw.cache.x, dpre, gm.w1);
    linalg::accumulate_column_sums(dpre, gm.b1);
  }
  return out;
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T> struct AdamState {
  ProbeParams<T> m;
  ProbeParams<T> v;
  std::uint64_t t = 0;
  AdamConfig config;

  AdamState() = default;
  AdamState(const ProbeParams<T> &like, AdamConfig cfg)
      : m(like.zeros_like()), v(like.zeros_like()), config(cfg) {}
};

/// One bias-corrected Adam update, in place.
template <typename T>
void adam_step(ProbeParams<T> &params, const ProbeParams<T> &grads, AdamState<T> &state) {
  auto ps = params.tensors();
  auto gs = grads.tensors();
  auto ms = state.m.tensors();
  auto vs = state.v.tensors();
  if (ps.size() != gs.size() || ps.size() != ms.size())
    throw ShapeError("adam_step: parameter/gradient/state structure mismatch");
  state.t += 1;
  const AdamConfig &c = state.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
  const T b1 = static_cast<T>(c.beta1), b2 = static_cast<T>(c.beta2);
  for (std::size_t k = 0; k < ps.size(); ++k) {
    auto p = ps[k]->flat();
    const auto g = gs[k]->flat();
    auto m = ms[k]->flat();
    auto v = vs[k]->flat();
    if (p.size() != g.size() || p.size() != m.size())
      throw ShapeError("adam_step: tensor " + std::to_string(k) + " shape mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (T{1} - b1) * g[i];
      v[i] = b2 * v[i] + (T{1} - b2) * g[i] * g[i];
      const T m_hat = static_cast<T>(m[i] / bc1);
      const T v_hat = static_cast<T>(v[i] / bc2);
      p[i] -= static_cast<T>(c.lr) * m_hat / (std::sqrt(v_hat) + static_cast<T>(c.epsilon));
    }
  }
}

/// Converts selected rows of a stored f32 matrix to the compute type.
template <typename T>
Matrix<T> gather_rows(const Matrix<float> &src, std::span<const std::size_t> rows) {
  Matrix<T> out(rows.size(), src.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto s = src.row(rows[i]);
    std::copy(s.begin(), s.end(), out.row(i).begin());
  }
  return out;
}

template <typename T> Matrix<T> convert(const Matrix<float> &src) {
  Matrix<T> out(src.rows(), src.cols());
  std::copy(src.flat().begin(), src.flat().end(), out.flat().begin());
  return out;
}

/// Argmax per row; ties resolve to the lowest class id.
template <typename T> std::vector<int> argmax_rows(const Matrix<T> &logits) {
  std::vector<int> out(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto r = logits.row(i);
    out[i] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return out;
}

template <typename T>
double accuracy(const ProbeParams<T> &p, const DatasetSplit &split, std::size_t chunk = 1024) {
  if (split.size() == 0)
    throw ShapeError("accuracy: empty split");
  if (split.dim() != p.dim())
    throw ShapeError("accuracy: split dim " + std::to_string(split.dim()) + " != probe dim " +
                     std::to_string(p.dim()));
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < split.size(); start += chunk) {
    const std::size_t end = std::min(split.size(), start + chunk);
    idx.resize(end - start);
    for (std::size_t i = start; i < end; ++i)
      idx[i - start] = i;
    const auto pred = argmax_rows(forward(p, gather_rows<T>(split.embeddings.values, idx)).logits);
    for (std::size_t i = start; i < end; ++i)
      correct += pred[i - start] == split.labels.class_ids[i];
  }
  return static_cast<double>(correct) / static_cast<double>(split.size());
}

// ---------------------------------------------------------------------------
// Checkpoints: consecutive PRBE sections in W1, b1, W2, b2, W, b order.
// ---------------------------------------------------------------------------

template <typename T> std::string encode_checkpoint(const ProbeParams<T> &p, std::uint16_t layer) {
  std::string bytes;
  for (const auto *t : p.tensors()) {
    Matrix<float> f(t->rows(), t->cols());
    std::transform(t->flat().begin(), t->flat().end(), f.flat().begin(),
                   [](T v) { return static_cast<float>(v); });
    encode_prbe(f, layer, bytes);
  }
  return bytes;
}

template <typename T>
void save_checkpoint(const ProbeParams<T> &p, std::uint16_t layer, const fs::path &path) {
  write_file_atomic(path, encode_checkpoint(p, layer));
}

template <typename T = double>
ProbeParams<T> load_checkpoint(const fs::path &path, Activation activation = Activation::relu) {
  const std::string bytes = read_file_bytes(path);
  std::vector<Matrix<T>> sections;
  std::size_t offset = 0;
  while (offset < bytes.size())
    sections.push_back(convert<T>(decode_prbe(bytes, offset, path.string()).values));
  ProbeParams<T> p;
  p.activation = activation;
  if (sections.size() == 6) {
    p.mlp = MlpBlock<T>{std::move(sections[0]), std::move(sections[1]), std::move(sections[2]),
                        std::move(sections[3])};
    sections.erase(sections.begin(), sections.begin() + 4);
  } else if (sections.size() != 2) {
    throw DataError(path.string() + ": checkpoint must hold 2 or 6 sections, found " +
                    std::to_string(sections.size()));
  }
  p.head = {std::move(sections[0]), std::move(sections[1])};
  const std::size_t dim = p.head.w.rows(), classes = p.head.w.cols();
  bool ok = p.head.b.rows() == 1 && p.head.b.cols() == classes;
  if (p.mlp) {
    const auto &m = *p.mlp;
    ok = ok && m.w1.rows() == dim && m.b1.rows() == 1 && m.b1.cols() == m.w1.cols() &&
         m.w2.rows() == m.w1.cols() && m.w2.cols() == dim && m.b2.rows() == 1 && m.b2.cols() == dim;
  }
  if (!ok)
    throw DataError(path.string() + ": checkpoint tensor shapes are inconsistent");
  return p;
}

} // namespace mlprobe
