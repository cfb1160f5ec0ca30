#include "novelscan/errors.hpp"
#include "novelscan/random.hpp"
#include "novelscan/synthetic.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

using namespace novelscan;
using oracle::kolmogorov_tail;
using oracle::monte_carlo_significance;

TEST(SampleClusterParams, RespectsBounds) {
  const auto p = sample_cluster_params(4, 4, 11);
  ASSERT_EQ(p.n_clusters(), 4);
  ASSERT_EQ(p.dim(), 4);
  for (int i = 0; i < 4; ++i) {
    EXPECT_TRUE((p.means[i].array() >= 0.0).all() && (p.means[i].array() <= 1.0).all());
    EXPECT_TRUE((p.sigmas[i].array() >= 0.02).all() && (p.sigmas[i].array() <= 0.5).all());
  }
}

TEST(SampleClusterParams, Deterministic) {
  const auto a = sample_cluster_params(5, 3, 99);
  const auto b = sample_cluster_params(5, 3, 99);
  for (int i = 0; i < 5; ++i) {
    EXPECT_EQ(a.means[i], b.means[i]);
    EXPECT_EQ(a.sigmas[i], b.sigmas[i]);
  }
}

TEST(SampleClusterParams, RejectsSingleCluster) { EXPECT_THROW(sample_cluster_params(1, 2, 0), InvalidArgument); }

TEST(PairwiseSignificance, IdenticalClustersGiveOne) {
  ClusterParams p;
  p.means = {Vector::Constant(2, 0.5), Vector::Constant(2, 0.5)};
  p.sigmas = {Vector::Constant(2, 0.1), Vector::Constant(2, 0.1)};
  EXPECT_NEAR(pairwise_injection_significance(p, 0, 1), 1.0, 1e-6);
}

TEST(PairwiseSignificance, IncreasesWithSeparation) {
  double last = 0.0;
  for (double delta : {0.0, 0.5, 1.0, 2.0, 4.0}) {
    ClusterParams p;
    p.means = {Vector::Constant(1, 0.0), Vector::Constant(1, delta)};
    p.sigmas = {Vector::Constant(1, 1.0), Vector::Constant(1, 1.0)};
    const double z = pairwise_injection_significance(p, 0, 1);
    EXPECT_GT(z, last);
    last = z;
  }
}

TEST(PairwiseSignificance, RejectsSamePair) {
  const auto p = sample_cluster_params(3, 2, 1);
  EXPECT_THROW(pairwise_injection_significance(p, 1, 1), InvalidArgument);
}

TEST(CalibrateSeparation, HitsTargetAndIsIdempotent) {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto raw = sample_cluster_params(4, 4, seed);
    const auto cal = calibrate_separation(raw, 3.5);
    EXPECT_NEAR(min_pairwise_significance(cal.params), 3.5, 0.05);
    for (int i = 0; i < 4; ++i) EXPECT_EQ(cal.params.sigmas[i], raw.sigmas[i]);
    const auto again = calibrate_separation(cal.params, 3.5);
    EXPECT_NEAR(again.scale, 1.0, 0.01);
  }
}

TEST(CalibrateSeparation, ContractsOverSeparatedMeans) {
  const auto raw = sample_cluster_params(4, 4, 5);
  const auto at7 = calibrate_separation(raw, 7.0);
  const auto back = calibrate_separation(at7.params, 3.5);
  EXPECT_LT(back.scale, 1.0);
}

TEST(CalibrateSeparation, MonteCarloAgreesOnMinimumPair) {
  const auto cal = calibrate_separation(sample_cluster_params(5, 4, 2024), 3.5);
  int best_i = 0, best_j = 1;
  double best = 1e300;
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j)
      if (i != j) {
        const double z = pairwise_injection_significance(cal.params, i, j);
        if (z < best) best = z, best_i = i, best_j = j;
      }
  const double mc = monte_carlo_significance(cal.params, best_i, best_j, 1000000, 77);
  EXPECT_NEAR(mc / best, 1.0, 0.02);
}

TEST(RandomRotation, OrthogonalAndIsometric) {
  for (int dim : {1, 4, 34}) {
    const Matrix q = random_rotation(dim, static_cast<std::uint64_t>(dim));
    const Matrix id = Matrix::Identity(dim, dim);
    EXPECT_LT((q.transpose() * q - id).cwiseAbs().maxCoeff(), 1e-10);
    Vector v = Vector::LinSpaced(dim, -1.0, 2.0);
    EXPECT_NEAR((q * v).norm(), v.norm(), 1e-10);
  }
  EXPECT_NEAR(std::abs(random_rotation(1, 3)(0, 0)), 1.0, 1e-15);
}

TEST(GenerateDataset, CountsAndHeldOutClass) {
  auto spec = make_synthetic_spec(5, 4, 0, 10000, 8);
  const auto data = generate_dataset(spec, 4);
  EXPECT_EQ(data.background.size(), 40000u);
  EXPECT_EQ(data.signal.size(), 10000u);
  for (int l : data.background.labels) EXPECT_NE(l, 4);
  for (int l : data.signal.labels) EXPECT_EQ(l, 4);
}

TEST(GenerateDataset, UnrotatedMeansMatch) {
  auto spec = make_synthetic_spec(3, 2, 0, 5000, 4);
  spec.rotation = Matrix::Identity(2, 2);
  const auto data = generate_dataset(spec, std::nullopt);
  for (int c = 0; c < 3; ++c) {
    Vector sum = Vector::Zero(2);
    int n = 0;
    for (std::size_t r = 0; r < data.background.size(); ++r)
      if (data.background.labels[r] == c) sum += data.background.points.row(static_cast<Eigen::Index>(r)).transpose(), ++n;
    const Vector mean = sum / n;
    for (int k = 0; k < 2; ++k)
      EXPECT_LT(std::abs(mean(k) - spec.clusters.means[c](k)), 4.0 * spec.clusters.sigmas[c](k) / std::sqrt(n));
  }
}

TEST(GenerateDataset, NoiseMarginalsUniformAfterInverseRotation) {
  const auto spec = make_synthetic_spec(3, 4, 30, 2000, 12);
  const auto data = generate_dataset(spec, std::nullopt);
  const Matrix unrotated = data.background.points * spec.rotation;  // rows are R x, so x = R^T row
  const auto n = static_cast<double>(unrotated.rows());
  for (int k = 4; k < 34; ++k) {
    std::vector<double> col(unrotated.rows());
    for (Eigen::Index r = 0; r < unrotated.rows(); ++r) col[static_cast<std::size_t>(r)] = unrotated(r, k);
    std::sort(col.begin(), col.end());
    double d = 0.0;
    for (std::size_t i = 0; i < col.size(); ++i) {
      d = std::max({d, (i + 1) / n - col[i], col[i] - i / n});
    }
    EXPECT_GT(kolmogorov_tail(std::sqrt(n) * d), 0.001) << "noise column " << k;
  }
}

TEST(GenerateDataset, Deterministic) {
  const auto spec = make_synthetic_spec(4, 3, 2, 500, 21);
  const auto a = generate_dataset(spec, 1);
  const auto b = generate_dataset(spec, 1);
  EXPECT_EQ(a.background.points, b.background.points);
  EXPECT_EQ(a.signal.points, b.signal.points);
}
