#include <algorithm>
#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "grad_check.hpp"
#include "mlprobe/clusteval.hpp"
#include "mlprobe/synthetic.hpp"
#include "test_util.hpp"

using namespace mlprobe;
using namespace mlprobe::testing;

namespace {

KMeansConfig km(std::size_t k, std::uint64_t seed = 0, std::size_t n_init = 10) {
  KMeansConfig c;
  c.k = k;
  c.seed = seed;
  c.n_init = n_init;
  return c;
}

/// 1 iff a and b induce the same partition up to relabeling.
bool same_partition(const std::vector<int> &a, const std::vector<int> &b) {
  std::map<int, int> ab, ba;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto [x, new_a] = ab.emplace(a[i], b[i]);
    const auto [y, new_b] = ba.emplace(b[i], a[i]);
    if (x->second != b[i] || y->second != a[i])
      return false;
  }
  return true;
}

} // namespace

TEST(KMeans, OneClusterPerPointHasZeroInertia) {
  Rng rng(1);
  const auto x = random_matrix(12, 3, rng);
  const auto r = kmeans(x, km(12));
  EXPECT_EQ(r.inertia, 0.0);
  auto sorted = r.assignments;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 12; ++i)
    EXPECT_EQ(sorted[i], i);
}

TEST(KMeans, SingleClusterIsTheMean) {
  Rng rng(2);
  const auto x = random_matrix(50, 4, rng);
  const auto r = kmeans(x, km(1));
  double total = 0.0;
  for (std::size_t j = 0; j < 4; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < 50; ++i)
      mean += x(i, j);
    mean /= 50.0;
    EXPECT_NEAR(r.centroids(0, j), mean, 1e-12);
    for (std::size_t i = 0; i < 50; ++i)
      total += (x(i, j) - mean) * (x(i, j) - mean);
  }
  EXPECT_NEAR(r.inertia, total, 1e-9);
}

TEST(KMeans, RecoversSeparatedBlobs) {
  Rng rng(3);
  auto [pts, truth] = synthetic::blobs({{0.0, 0.0}, {10.0, 10.0}}, 100, 0.5, rng);
  const auto r = kmeans(pts, km(2));
  EXPECT_TRUE(same_partition(r.assignments, truth));
  EXPECT_EQ(nmi(truth, r.assignments), 1.0);
}

TEST(KMeans, LloydInertiaNeverIncreases) {
  Rng data(4);
  for (int inst = 0; inst < 20; ++inst) {
    const auto x = random_matrix(60 + data.below(60), 2 + data.below(5), data);
    const auto r = kmeans(x, km(2 + data.below(6), inst, 3));
    for (std::size_t i = 1; i < r.inertia_history.size(); ++i)
      EXPECT_LE(r.inertia_history[i], r.inertia_history[i - 1] * (1.0 + 1e-12));
  }
}

TEST(KMeans, BestRestartIsKept) {
  Rng rng(5);
  const auto x = random_matrix(200, 2, rng);
  const auto r = kmeans(x, km(7, 3, 10));
  ASSERT_EQ(r.restart_inertias.size(), 10u);
  EXPECT_EQ(r.inertia, *std::min_element(r.restart_inertias.begin(), r.restart_inertias.end()));
  // a single-restart run can only be as good or worse
  EXPECT_LE(r.inertia, kmeans(x, km(7, 3, 1)).inertia);
}

TEST(KMeans, DeterministicAndThreadIndependent) {
  Rng rng(6);
  const auto x = random_matrix(300, 3, rng);
  auto cfg = km(5, 9);
  const auto a = kmeans(x, cfg);
  cfg.threads = 4;
  const auto b = kmeans(x, cfg);
  EXPECT_EQ(a.assignments, b.assignments);
  EXPECT_EQ(a.inertia, b.inertia);
  EXPECT_EQ(a.restart_inertias, b.restart_inertias);
}

TEST(KMeans, DegenerateInputsAreErrors) {
  Matrix<double> same(10, 2, 3.0);
  try {
    kmeans(same, km(2));
    FAIL() << "expected DataError";
  } catch (const DataError &e) {
    EXPECT_NE(std::string(e.what()).find("distinct"), std::string::npos);
  }
  EXPECT_THROW(kmeans(Matrix<double>(3, 2), km(4)), ShapeError);
  Matrix<double> bad(4, 2);
  bad(1, 1) = std::nan("");
  EXPECT_THROW(kmeans(bad, km(2)), DataError);
}

TEST(Nmi, ReferenceValues) {
  // reference values computed with an independent implementation
  EXPECT_NEAR(nmi(std::vector<int>{0, 0, 1, 1, 2, 2}, std::vector<int>{0, 0, 1, 1, 1, 1}),
              0.7336804366512113, 1e-12);
  EXPECT_NEAR(nmi(std::vector<int>{0, 0, 1, 1, 2, 2, 0, 1}, std::vector<int>{1, 1, 0, 2, 2, 2, 0, 0}),
              0.55887303821703238, 1e-12);
  EXPECT_NEAR(nmi(std::vector<int>{0, 0, 1, 1}, std::vector<int>{0, 1, 0, 1}), 0.0, 1e-15);
}

TEST(Nmi, SingleClusterConventions) {
  EXPECT_EQ(nmi(std::vector<int>{3, 3, 3}, std::vector<int>{1, 1, 1}), 1.0);
  EXPECT_EQ(nmi(std::vector<int>{3, 3, 3}, std::vector<int>{0, 1, 2}), 0.0);
  EXPECT_EQ(nmi(std::vector<int>{0, 1, 2}, std::vector<int>{5, 5, 5}), 0.0);
}

TEST(Nmi, SymmetricBoundedAndRelabelingInvariant) {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(40);
    std::vector<int> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = static_cast<int>(rng.below(4));
      b[i] = static_cast<int>(rng.below(5));
    }
    const double v = nmi(a, b);
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    EXPECT_NEAR(v, nmi(b, a), 1e-12);
    std::vector<int> relabeled(n);
    for (std::size_t i = 0; i < n; ++i)
      relabeled[i] = 10 - 3 * a[i];
    EXPECT_NEAR(nmi(a, relabeled), 1.0, 1e-12);
  }
}

TEST(Nmi, InvalidInput) {
  EXPECT_THROW(nmi(std::vector<int>{0, 1}, std::vector<int>{0}), ShapeError);
  EXPECT_THROW(nmi(std::vector<int>{}, std::vector<int>{}), ShapeError);
}

TEST(MlpTransform, ZeroBranchIsIdentityAndFeedsTheHead) {
  Rng rng(8);
  auto p = random_probe(5, 3, true, 7, Activation::relu, rng);
  const auto x = random_matrix(9, 5, rng);
  const auto z = mlp_transform(p, x);
  const auto f = forward(p, x);
  EXPECT_EQ(z, f.cache.z);
  EXPECT_EQ(linalg::affine(z, p.head.w, p.head.b), f.logits);

  p.mlp->w2.fill(0.0);
  p.mlp->b2.fill(0.0);
  EXPECT_EQ(mlp_transform(p, x), x);

  ProbeParams<double> linear{std::nullopt, p.head, Activation::relu};
  EXPECT_THROW(mlp_transform(linear, x), ShapeError);
}

TEST(MlpTransform, HandCase) {
  ProbeParams<double> p;
  Matrix<double> eye(2, 2);
  eye(0, 0) = eye(1, 1) = 1.0;
  p.mlp = MlpBlock<double>{eye, Matrix<double>(1, 2), eye, Matrix<double>(1, 2, std::vector<double>{0.5, 0.0})};
  p.head = {Matrix<double>(2, 2), Matrix<double>(1, 2)};
  const Matrix<double> x(1, 2, std::vector<double>{1.0, -1.0});
  EXPECT_EQ(mlp_transform(p, x).values(), (std::vector<double>{2.5, -1.0}));
}

class ClusterEval : public ::testing::Test {
protected:
  void SetUp() override {
    a_ = synthetic::write_fixture_task(dir_.path(), "A", Level::syntactic, synthetic::Signal::xor_pair, {1, 2},
                                       {100, 50, 80}, 1);
    b_ = synthetic::write_fixture_task(dir_.path(), "B", Level::syntactic, synthetic::Signal::linear, {1, 2},
                                       {100, 50, 80}, 2);
    c_ = synthetic::write_fixture_task(dir_.path(), "C", Level::semantic, synthetic::Signal::xor_pair, {1, 2},
                                       {100, 50, 80}, 3);
  }
  static ProbeParams<double> identity_probe(std::size_t dim) {
    Rng rng(1);
    auto p = init_params<double>(dim, 2, true, 4, rng);
    p.mlp->w2.fill(0.0);
    return p;
  }
  TempDir dir_;
  Manifest a_, b_, c_;
};

TEST_F(ClusterEval, IdentityTransformGivesZeroDelta) {
  ClusterConfig cfg;
  cfg.layer = 2;
  const ClusterSource src[] = {{&a_, identity_probe(2)}};
  const auto row = cluster_eval(src, cfg);
  EXPECT_EQ(row.k, 2u);
  EXPECT_EQ(row.group, "A");
  EXPECT_EQ(row.scores.nmi_with, row.scores.nmi_without);
  EXPECT_EQ(row.scores.delta, 0.0);
  EXPECT_EQ(cluster_row_from_json(to_json(row)).scores.nmi_with, row.scores.nmi_with);
}

TEST_F(ClusterEval, ModeAndKMustAgree) {
  ClusterConfig cfg;
  cfg.layer = 1;
  cfg.k = 3;
  const ClusterSource one[] = {{&a_, identity_probe(2)}};
  EXPECT_THROW(cluster_eval(one, cfg), DataError);

  // A and C sit at different levels; A and B are both syntactic.
  cfg.mode = ClusterMode::pooled_group;
  cfg.k = 0;
  EXPECT_THROW(cluster_eval(one, cfg), DataError);
  const ClusterSource mixed[] = {{&a_, identity_probe(2)}, {&c_, identity_probe(2)}};
  EXPECT_THROW(cluster_eval(mixed, cfg), DataError);
}

TEST_F(ClusterEval, PooledGroupUsesTaskIdentity) {
  ClusterConfig cfg;
  cfg.layer = 1;
  cfg.mode = ClusterMode::pooled_group;
  // B has 4-d embeddings, A 2-d: pooling requires one dim
  const ClusterSource mismatch[] = {{&a_, identity_probe(2)}, {&b_, identity_probe(4)}};
  EXPECT_THROW(cluster_eval(mismatch, cfg), DataError);

  auto a2 = synthetic::write_fixture_task(dir_.path(), "A2", Level::syntactic, synthetic::Signal::xor_pair,
                                          {1}, {100, 50, 60}, 7);
  const ClusterSource pooled[] = {{&a_, identity_probe(2)}, {&a2, identity_probe(2)}};
  const auto row = cluster_eval(pooled, cfg, "syntactic");
  EXPECT_EQ(row.k, 2u);
  EXPECT_EQ(row.group, "syntactic");
  EXPECT_EQ(row.scores.delta, 0.0);
}

TEST_F(ClusterEval, MissingMlpOrLayerIsAnError) {
  ClusterConfig cfg;
  cfg.layer = 1;
  Rng rng(1);
  const ClusterSource linear[] = {{&a_, init_params<double>(2, 2, false, 2, rng)}};
  EXPECT_THROW(cluster_eval(linear, cfg), DataError);
  cfg.layer = 12;
  const ClusterSource src[] = {{&a_, identity_probe(2)}};
  EXPECT_THROW(cluster_eval(src, cfg), DataError);
  cfg.layer = 1;
  const ClusterSource wrong_dim[] = {{&a_, identity_probe(3)}};
  EXPECT_THROW(cluster_eval(wrong_dim, cfg), DataError);
}
