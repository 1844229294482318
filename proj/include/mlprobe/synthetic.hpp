#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mlprobe/dataio.hpp"
#include "mlprobe/rng.hpp"

// Constructed datasets with known structure, used by the test suites and the
// make_fixture tool.

namespace mlprobe::synthetic {

struct SplitSizes {
  std::size_t train = 4000;
  std::size_t val = 1000;
  std::size_t test = 1000;
};

struct Dataset {
  DatasetSplit train;
  DatasetSplit val;
  DatasetSplit test;
};

namespace detail {

template <typename Gen> DatasetSplit make(std::size_t n, std::size_t dim, int layer, Rng &rng, Gen &&gen) {
  Matrix<float> x(n, dim);
  LabelVector y;
  y.class_ids.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    y.class_ids.push_back(gen(x.row(i), rng));
  return {EmbeddingMatrix{static_cast<std::uint16_t>(layer), std::move(x)}, std::move(y)};
}

template <typename Gen>
Dataset make_all(SplitSizes sizes, std::size_t dim, int layer, std::uint64_t seed, Gen &&gen) {
  Rng rng(seed);
  Dataset d;
  d.train = make(sizes.train, dim, layer, rng, gen);
  d.val = make(sizes.val, dim, layer, rng, gen);
  d.test = make(sizes.test, dim, layer, rng, gen);
  return d;
}

} // namespace detail

/// 2-d points uniform on [-1, 1]^2, label 1 iff x1 * x2 > 0. Both classes
/// have the same mean and the distribution is symmetric under x -> -x, so the
/// population cross-entropy optimum of a linear probe is the constant
/// predictor.
inline Dataset xor_dataset(SplitSizes sizes = {}, std::uint64_t seed = 7, int layer = 1) {
  return detail::make_all(sizes, 2, layer, seed, [](std::span<float> row, Rng &rng) {
    const double a = rng.uniform(-1.0, 1.0), b = rng.uniform(-1.0, 1.0);
    row[0] = static_cast<float>(a);
    row[1] = static_cast<float>(b);
    return a * b > 0.0 ? 1 : 0;
  });
}

/// Gaussian points in `dim` dimensions labelled by the side of a fixed
/// hyperplane; points within `margin` of the plane are pushed out to the margin.
inline Dataset linear_dataset(SplitSizes sizes = {}, std::size_t dim = 8, double margin = 0.25,
                              std::uint64_t seed = 11, int layer = 1) {
  std::vector<double> normal(dim);
  {
    Rng dir(seed ^ 0x5eedULL);
    double norm = 0.0;
    for (auto &v : normal) {
      v = dir.normal();
      norm += v * v;
    }
    for (auto &v : normal)
      v /= std::sqrt(norm);
  }
  return detail::make_all(sizes, dim, layer, seed, [&](std::span<float> row, Rng &rng) {
    std::vector<double> x(dim);
    double proj = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      x[j] = rng.normal();
      proj += x[j] * normal[j];
    }
    const int label = proj > 0.0 ? 1 : 0;
    const double target = label ? std::max(proj, margin) : std::min(proj, -margin);
    for (std::size_t j = 0; j < dim; ++j)
      row[j] = static_cast<float>(x[j] + (target - proj) * normal[j]);
    return label;
  });
}

/// Two concentric classes in `dim` dimensions: class 1 lies on a shell of
/// radius `outer`, class 0 inside radius `inner`. Centred, so any hyperplane
/// through the mean cuts both classes evenly.
inline Dataset ring_dataset(SplitSizes sizes = {}, std::size_t dim = 2, double inner = 0.5,
                            double outer = 1.5, std::uint64_t seed = 13, int layer = 1) {
  return detail::make_all(sizes, dim, layer, seed, [&](std::span<float> row, Rng &rng) {
    const int label = static_cast<int>(rng.below(2));
    std::vector<double> x(dim);
    double norm = 0.0;
    for (auto &v : x) {
      v = rng.normal();
      norm += v * v;
    }
    norm = std::sqrt(norm);
    const double radius =
        label ? outer + 0.1 * rng.normal() : inner * std::pow(rng.uniform(), 1.0 / static_cast<double>(dim));
    for (std::size_t j = 0; j < dim; ++j)
      row[j] = static_cast<float>(x[j] / norm * radius);
    return label;
  });
}

/// Isotropic Gaussian blobs; returns the points and the generating blob of each.
inline std::pair<Matrix<double>, std::vector<int>>
blobs(const std::vector<std::vector<double>> &centers, std::size_t per_blob, double sigma, Rng &rng) {
  const std::size_t dim = centers.front().size();
  Matrix<double> pts(centers.size() * per_blob, dim);
  std::vector<int> truth;
  for (std::size_t c = 0; c < centers.size(); ++c)
    for (std::size_t i = 0; i < per_blob; ++i) {
      auto r = pts.row(truth.size());
      for (std::size_t j = 0; j < dim; ++j)
        r[j] = centers[c][j] + sigma * rng.normal();
      truth.push_back(static_cast<int>(c));
    }
  return {std::move(pts), std::move(truth)};
}

enum class Signal { xor_pair, linear };

/// Writes a complete on-disk probing task under `root/name/`: a SentEval-style
/// `task.txt`, one `emb/<split>_layer<L>.prbe` per split and layer, label
/// sidecars and `manifest.json`. Each layer gets its own draw of the chosen
/// signal; with Signal::xor_pair only a nonlinear feature carries the label.
inline Manifest write_fixture_task(const fs::path &root, const std::string &name, Level level,
                                   Signal signal, const std::vector<int> &layers, SplitSizes sizes,
                                   std::uint64_t seed = 1) {
  const fs::path dir = root / name;
  fs::create_directories(dir / "emb");
  const char *label_names[] = {"neg", "pos"};
  std::string text;
  bool text_done = false;
  std::vector<int> reference[3];
  for (int layer : layers) {
    const std::uint64_t layer_seed = seed * 1000003ULL + static_cast<std::uint64_t>(layer);
    Dataset d = signal == Signal::xor_pair ? xor_dataset(sizes, layer_seed, layer)
                                           : linear_dataset(sizes, 4, 0.25, layer_seed, layer);
    // Labels must agree across layers, so every layer reuses the first
    // layer's labels and flips its points where they disagree.
    std::pair<Split, DatasetSplit *> parts[] = {
        {Split::train, &d.train}, {Split::val, &d.val}, {Split::test, &d.test}};
    for (auto &[split, part] : parts) {
      auto &ref = reference[static_cast<int>(split)];
      if (!text_done)
        ref = part->labels.class_ids;
      for (std::size_t i = 0; i < ref.size(); ++i)
        if (part->labels.class_ids[i] != ref[i]) {
          // xor: negate x1 flips the sign of x1*x2; linear: reflect through the origin
          auto row = part->embeddings.values.row(i);
          if (signal == Signal::xor_pair)
            row[0] = -row[0];
          else
            for (auto &v : row)
              v = -v;
          part->labels.class_ids[i] = ref[i];
        }
      write_embeddings(part->embeddings,
                       dir / "emb" / (std::string(to_string(split)) + "_layer" + std::to_string(layer) + ".prbe"));
      if (!text_done) {
        const char *tag = split == Split::train ? "tr" : split == Split::val ? "va" : "te";
        for (std::size_t i = 0; i < ref.size(); ++i)
          text += std::string(tag) + "\t" + label_names[ref[i]] + "\t" + name + " sentence " +
                  std::to_string(i) + "\n";
      }
    }
    text_done = true;
  }
  write_file_atomic(dir / "task.txt", text);
  TaskSpec spec{name, level, 2, {{"neg", 0}, {"pos", 1}}};
  return ingest(dir / "task.txt", spec, dir / "emb", dir / "manifest.json");
}

} // namespace mlprobe::synthetic
