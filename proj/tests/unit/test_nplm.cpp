#include "novelscan/errors.hpp"
#include "novelscan/nplm.hpp"
#include "novelscan/random.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

using namespace novelscan;
using oracle::gaussian_points;

TEST(Objective, GradientMatchesFiniteDifferences) {
  Rng rng(1);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 20; ++trial) {
    const auto inst = oracle::random_kernel_instance(rng);
    Vector w(8);
    for (Eigen::Index i = 0; i < 8; ++i) w(i) = normal(rng);
    const double w_ref = 0.25, lambda = 1e-2;
    const auto v = nplm_objective(w, inst.k, inst.y, w_ref, lambda, inst.kc);
    EXPECT_NEAR(v.loss, oracle::nplm_objective(w, inst, w_ref, lambda), 1e-10 * std::abs(v.loss));
    double worst = 0.0;
    for (Eigen::Index i = 0; i < 8; ++i) {
      Vector a = w, b = w;
      a(i) += 1e-6;
      b(i) -= 1e-6;
      const double fd = (nplm_objective(a, inst.k, inst.y, w_ref, lambda, inst.kc).loss -
                         nplm_objective(b, inst.k, inst.y, w_ref, lambda, inst.kc).loss) /
                        2e-6;
      worst = std::max(worst, std::abs(fd - v.grad(i)) / std::max(std::abs(fd), 1e-8));
    }
    EXPECT_LT(worst, 1e-5);
  }
}

TEST(Objective, ZeroWeightsGiveLog2Yield) {
  Rng rng(2);
  const auto inst = oracle::random_kernel_instance(rng);
  const double w_ref = 0.3;
  const auto v = nplm_objective(Vector::Zero(8), inst.k, inst.y, w_ref, 1e-6, inst.kc);
  EXPECT_NEAR(v.loss, (w_ref * 30.0 + 10.0) * std::log(2.0), 1e-10);
}

TEST(Objective, RidgeWithIdentityCenterKernel) {
  const Matrix k = Matrix::Zero(4, 3);
  const std::vector<int> y{0, 1, 0, 1};
  Vector w(3);
  w << 1.0, -2.0, 0.5;
  const auto v = nplm_objective(w, k, y, 1.0, 0.1, Matrix::Identity(3, 3));
  EXPECT_NEAR(v.loss, 4.0 * std::log(2.0) + 0.1 * w.squaredNorm(), 1e-14);
}

TEST(Objective, StableForLargeOutputs) {
  const Matrix k = Matrix::Ones(2, 1);
  const std::vector<int> y{0, 1};
  Vector w(1);
  w << 800.0;
  const auto v = nplm_objective(w, k, y, 1.0, 0.0, Matrix::Identity(1, 1));
  EXPECT_TRUE(std::isfinite(v.loss));
  EXPECT_NEAR(v.loss, 800.0, 1e-9);
}

TEST(TestStatistic, HandComputedThreePointInstance) {
  KernelModel model;
  model.centers = Matrix::Zero(1, 1);
  model.width = 1.0;
  model.weights = Vector::Constant(1, 0.5);
  Matrix ref(2, 1), obs(1, 1);
  ref << 0.0, 1.0;
  obs << 2.0;
  const double w_ref = 0.5;
  const double f0 = 0.5, f1 = 0.5 * std::exp(-0.5), f2 = 0.5 * std::exp(-2.0);
  const double expected = -2.0 * (w_ref * (std::exp(f0) - 1.0) + w_ref * (std::exp(f1) - 1.0) - f2);
  EXPECT_NEAR(test_statistic(model, ref, obs, w_ref), expected, 1e-12);
  model.weights.setZero();
  EXPECT_EQ(test_statistic(model, ref, obs, w_ref), 0.0);
}

TEST(TestStatistic, OverflowIsNumericalError) {
  const Vector f_ref = Vector::Constant(1, 1000.0);
  const Vector f_obs = Vector::Zero(1);
  EXPECT_THROW(test_statistic_from_outputs(f_ref, f_obs, 1.0), NumericalError);
}

TEST(KernelMatrix, Values) {
  Matrix x(3, 2), c(1, 2);
  const double width = 0.7;
  const double r = width * std::sqrt(2.0 * std::log(2.0));
  x << 0, 0, r, 0, 1e6, 0;
  c << 0, 0;
  const Matrix k = kernel_matrix(x, c, width);
  EXPECT_EQ(k(0, 0), 1.0);
  EXPECT_NEAR(k(1, 0), 0.5, 1e-14);
  EXPECT_EQ(k(2, 0), 0.0);
  EXPECT_NEAR(kernel_matrix(x.topRows(2), c, 1e8)(1, 0), 1.0, 1e-15);
}

TEST(SelectWidths, TwoPoints) {
  Matrix x(2, 3);
  x << 0, 0, 0, 1, 0, 0;
  const auto w = select_kernel_widths(x, 2000, 1);
  const std::vector<double> expected{1, 1, 1, 1, 1, 2};
  ASSERT_EQ(w.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(w[i], expected[i], 1e-15);
}

TEST(SelectWidths, HomogeneousAndOrdered) {
  Rng rng(3);
  const Matrix x = gaussian_points(500, 4, rng);
  const auto a = select_kernel_widths(x, 300, 5);
  const auto b = select_kernel_widths(3.5 * x, 300, 5);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(b[i], 3.5 * a[i], 1e-9 * b[i]);
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
  EXPECT_DOUBLE_EQ(a[5], 2.0 * a[4]);
}

TEST(SelectWidths, IdenticalPointsRejected) {
  EXPECT_THROW(select_kernel_widths(Matrix::Ones(10, 2), 2000, 0), DegenerateData);
}

TEST(Centers, DefaultCountAndSampling) {
  EXPECT_EQ(default_n_centers(10000, 2000), 110);
  Rng rng(4);
  const Matrix pool = gaussian_points(20, 2, rng);
  const Matrix all = build_centers(pool, 20, 7);
  std::vector<double> a(all.col(0).begin(), all.col(0).end()), b(pool.col(0).begin(), pool.col(0).end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  EXPECT_EQ(a, b);
  EXPECT_EQ(build_centers(pool, 5, 9), build_centers(pool, 5, 9));
  EXPECT_THROW(build_centers(pool, 21, 0), InvalidArgument);
}

TEST(Fit, ConvergesWithMonotoneTrace) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto inst = oracle::random_kernel_instance(rng);
    const auto r = fit_weights(inst.k, inst.kc, inst.y, 1.0 / 3.0, 1e-6, 100, 1e-7);
    EXPECT_LT(r.grad_norm, 1e-7);
    ASSERT_FALSE(r.objective_trace.empty());
    for (std::size_t i = 1; i < r.objective_trace.size(); ++i)
      EXPECT_LE(r.objective_trace[i], r.objective_trace[i - 1] + 1e-12);
    const double at_zero = nplm_objective(Vector::Zero(8), inst.k, inst.y, 1.0 / 3.0, 1e-6, inst.kc).loss;
    EXPECT_LE(nplm_objective(r.weights, inst.k, inst.y, 1.0 / 3.0, 1e-6, inst.kc).loss, at_zero);
  }
}

TEST(Fit, IterationCapRaisesConvergenceFailure) {
  Rng rng(6);
  const Matrix ref = gaussian_points(2000, 2, rng);
  const Matrix obs = gaussian_points(400, 2, rng, 0.5);
  NplmConfig cfg;
  cfg.widths = {1.0};
  cfg.max_iterations = 1;
  try {
    fit(ref, obs, 1.0, cfg, 3);
    FAIL() << "expected ConvergenceFailure";
  } catch (const ConvergenceFailure& e) {
    EXPECT_GT(e.grad_norm(), 1e-7);
  }
}

// With the default ridge the fit chases fluctuations, so this uses lambda = 10.
TEST(Fit, RegularizedNullFitsStaySmall) {
  std::vector<double> max_abs;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(100 + seed);
    const Matrix ref = gaussian_points(2000, 2, rng);
    const Matrix obs = gaussian_points(400, 2, rng);
    NplmConfig cfg;
    cfg.widths = {1.0};
    cfg.w_ref = 400.0 / 2000.0;
    cfg.lambda = 10.0;
    const auto r = fit(ref, obs, 1.0, cfg, seed);
    Matrix pooled(2400, 2);
    pooled << ref, obs;
    max_abs.push_back(r.model.evaluate(pooled).cwiseAbs().maxCoeff());
  }
  std::sort(max_abs.begin(), max_abs.end());
  EXPECT_LT(max_abs[94], 0.5);
}

TEST(Fit, OverdensityGivesPositiveStatistic) {
  Rng rng(7);
  const Matrix ref = gaussian_points(2000, 2, rng);
  Matrix obs(440, 2);
  obs << gaussian_points(400, 2, rng), gaussian_points(40, 2, rng, 0.0) * 0.1;
  NplmConfig cfg;
  cfg.widths = {0.5, 1.0};
  const auto run = run_test(ref, obs, cfg, 1);
  ASSERT_EQ(run.per_width.size(), 2u);
  EXPECT_EQ(run.per_width[0].width, 0.5);
  for (const auto& w : run.per_width) EXPECT_GT(w.t, 10.0);
}

TEST(RunTest, NullStatisticsAreNearlyNonNegativeAndSeedDependent) {
  Rng rng(8);
  const Matrix ref = gaussian_points(3000, 2, rng);
  const Matrix obs = gaussian_points(600, 2, rng);
  NplmConfig cfg;
  cfg.widths = {0.3, 1.0, 3.0};
  const auto a = run_test(ref, obs, cfg, 1);
  const auto b = run_test(ref, obs, cfg, 2);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_GE(a.per_width[i].t, -0.1);
    EXPECT_TRUE(std::isfinite(b.per_width[i].t));
    EXPECT_NE(a.per_width[i].t, b.per_width[i].t);
  }
  const auto rec = a.records();
  ASSERT_EQ(rec.size(), 3u);
  for (const char* key : {"width", "t", "n_ref", "n_data", "w_ref", "lambda", "iterations", "grad_norm", "seed"})
    EXPECT_TRUE(rec[0].contains(key)) << key;
}

TEST(RunTest, TranslationLeavesStatisticUnchanged) {
  Rng rng(9);
  // Coordinates on a dyadic grid so the shifted values are exact.
  const auto grid = [](Matrix m) { return Matrix((m.array() * 1048576.0).round() / 1048576.0); };
  const Matrix ref = grid(gaussian_points(1000, 3, rng));
  const Matrix obs = grid(gaussian_points(200, 3, rng, 0.2));
  NplmConfig cfg;
  cfg.widths = {0.8, 2.0};
  const auto a = run_test(ref, obs, cfg, 4);
  const auto b = run_test(ref.array() + 64.0, obs.array() + 64.0, cfg, 4);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(a.per_width[i].t, b.per_width[i].t);
}

TEST(KernelModelIo, RoundTrip) {
  Rng rng(10);
  KernelModel m{gaussian_points(5, 3, rng), 1.25, Vector::LinSpaced(5, -1, 1)};
  const auto path = std::filesystem::temp_directory_path() / "novelscan_test_model.nvkm";
  save_kernel_model(path, m);
  const auto back = load_kernel_model(path);
  EXPECT_EQ(back.centers, m.centers);
  EXPECT_EQ(back.width, m.width);
  EXPECT_EQ(back.weights, m.weights);
  std::filesystem::remove(path);
}
