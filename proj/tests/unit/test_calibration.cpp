#include "novelscan/calibration.hpp"
#include "novelscan/errors.hpp"
#include "novelscan/random.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

using namespace novelscan;
using oracle::chi2_samples;
using oracle::chi2_tail_by_integration;
using oracle::z_by_bisection;

namespace {

LabeledDataset gaussian_pool(int n_per_class, int n_classes, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> normal;
  LabeledDataset d;
  d.n_classes = n_classes;
  d.points.resize(n_per_class * n_classes, 2);
  for (int c = 0; c < n_classes; ++c)
    for (int i = 0; i < n_per_class; ++i) {
      d.points(c * n_per_class + i, 0) = normal(rng) + 3.0 * c;
      d.points(c * n_per_class + i, 1) = normal(rng);
      d.labels.push_back(c);
    }
  return d;
}

}  // namespace

TEST(EmpiricalP, Counting) {
  const auto e = ToyEnsemble::from_values({4, 1, 3, 2}, 1.0, 0);
  EXPECT_EQ(e.t_values, (std::vector<double>{1, 2, 3, 4}));
  EXPECT_DOUBLE_EQ(empirical_pvalue(2.5, e).p, 0.5);
  EXPECT_DOUBLE_EQ(empirical_pvalue(0.0, e).p, 1.0);
  EXPECT_DOUBLE_EQ(empirical_pvalue(3.0, e).p, 0.25);
  const auto sat = empirical_pvalue(9.0, e);
  EXPECT_TRUE(sat.saturated);
  EXPECT_DOUBLE_EQ(sat.p, 0.2);
}

TEST(EmpiricalP, SaturationCapAt500Toys) {
  std::vector<double> v(500);
  for (int i = 0; i < 500; ++i) v[i] = i;
  const auto e = ToyEnsemble::from_values(v, 1.0, 0);
  const auto p = empirical_pvalue(1e9, e);
  EXPECT_TRUE(p.saturated);
  EXPECT_NEAR(z_score(p.p), 2.878, 1e-3);
}

TEST(EmpiricalP, MonotoneInObserved) {
  const auto e = ToyEnsemble::from_values(chi2_samples(3, 200, 1), 1.0, 0);
  double last = 1.0;
  for (double t = 0.0; t < 20.0; t += 0.1) {
    const double p = empirical_pvalue(t, e).p;
    EXPECT_LE(p, last);
    last = p;
  }
}

TEST(AsymptoticP, AgreesWithNumericIntegration) {
  EXPECT_NEAR(asymptotic_pvalue(3.841, 1.0), 0.05, 1e-4);
  for (double k : {1.0, 2.5, 10.0})
    for (double t : {0.5, 3.0, 12.0}) EXPECT_NEAR(asymptotic_pvalue(t, k), chi2_tail_by_integration(t, k), 1e-6);
  EXPECT_EQ(asymptotic_pvalue(0.0, 3.0), 1.0);
  EXPECT_NEAR(asymptotic_pvalue(2.0 * std::log(20.0), 2.0), 0.05, 1e-15);
}

TEST(ZScore, Values) {
  EXPECT_NEAR(z_score(0.5), 0.0, 1e-15);
  EXPECT_NEAR(z_score(1.0 / 501.0), z_by_bisection(1.0 / 501.0), 1e-8);
  EXPECT_NEAR(z_score(2.8665157187919333e-7), 5.0, 1e-9);
  EXPECT_THROW(z_score(0.0), InvalidArgument);
  EXPECT_THROW(z_score(1.0), InvalidArgument);
}

TEST(CombinePvalues, Mean) {
  const std::vector<double> a(6, 0.1);
  EXPECT_DOUBLE_EQ(combine_pvalues(a), 0.1);
  const std::vector<double> b{0.02, 0.04, 0.06, 0.08, 0.10, 0.30};
  EXPECT_NEAR(combine_pvalues(b), 0.1, 1e-15);
}

TEST(Chi2Fit, RecoversTenDof) {
  const auto e = ToyEnsemble::from_values(chi2_samples(10, 10000, 3), 1.0, 0);
  const auto fit = fit_chi2_dof(e);
  EXPECT_NEAR(fit.dof, 10.0, 0.3);
  EXPECT_NEAR(fit.dof / fit.mean_positive, 1.0, 0.15);
  EXPECT_LT(fit.ks_statistic, 0.02);
}

TEST(Chi2Fit, Failures) {
  EXPECT_THROW(fit_chi2_dof(ToyEnsemble::from_values(std::vector<double>(100, 3.0), 1, 0)), FitFailure);
  std::vector<double> mostly_negative(100, -1.0);
  mostly_negative[0] = 2.0;
  EXPECT_THROW(fit_chi2_dof(ToyEnsemble::from_values(mostly_negative, 1, 0)), FitFailure);
  EXPECT_THROW(fit_chi2_dof(ToyEnsemble::from_values(chi2_samples(2, 20, 1), 1, 0)), InvalidArgument);
}

TEST(Ks, UniformSampleAndPvalue) {
  Rng rng(4);
  std::uniform_real_distribution<double> u;
  std::vector<double> v(2000);
  for (auto& x : v) x = u(rng);
  const double d = ks_uniform_statistic(v);
  EXPECT_LT(d, 0.05);
  EXPECT_GT(ks_pvalue(v.size(), d), 0.01);
  std::vector<double> skewed(2000);
  for (auto& x : skewed) x = std::pow(u(rng), 2.0);
  EXPECT_LT(ks_pvalue(skewed.size(), ks_uniform_statistic(skewed)), 1e-6);
  EXPECT_NEAR(ks_pvalue(100, 0.0), 1.0, 1e-12);
}

TEST(Report, ConsistentZAndCombination) {
  std::vector<ToyEnsemble> ens;
  for (int w = 0; w < 3; ++w) ens.push_back(ToyEnsemble::from_values(chi2_samples(5, 300, 10 + w), 1.0 + w, 0));
  const std::vector<double> t{4.0, 9.0, 1e6};
  const auto r = make_report(t, ens);
  ASSERT_EQ(r.per_width.size(), 3u);
  double mean = 0.0;
  for (const auto& w : r.per_width) {
    EXPECT_GE(w.p_empirical, 0.0);
    EXPECT_LE(w.p_empirical, 1.0);
    if (w.p_empirical < 1.0) EXPECT_NEAR(w.z_empirical, z_score(w.p_empirical), 1e-9);
    EXPECT_GT(w.chi2_dof, 0.0);
    mean += w.p_empirical / 3.0;
  }
  EXPECT_TRUE(r.per_width[2].saturated);
  EXPECT_TRUE(r.any_saturated);
  EXPECT_NEAR(r.p_combined, mean, 1e-15);
  EXPECT_NEAR(r.z_combined, z_score(r.p_combined), 1e-9);
  const auto j = r.to_json();
  EXPECT_TRUE(j.contains("per_width") && j.contains("p_combined") && j.contains("z_combined"));
}

TEST(Report, ReportingZForUnitP) {
  EXPECT_NEAR(reporting_z(1.0, 500), -z_score(1.0 / 501.0), 1e-12);
  EXPECT_TRUE(std::isfinite(reporting_z(0.0, 500)));
}

TEST(Ensemble, JsonRoundTrip) {
  const auto e = ToyEnsemble::from_values({3.5, 1.25, 2.0}, 0.75, 42);
  const auto back = ToyEnsemble::from_json(nlohmann::json::parse(e.to_json().dump()));
  EXPECT_EQ(back.t_values, e.t_values);
  EXPECT_EQ(back.width, e.width);
  EXPECT_EQ(back.master_seed, 42u);
  EXPECT_EQ(back.n_toys(), 3u);
}

TEST(Toys, DeterministicAcrossThreadCounts) {
  const auto pool = gaussian_pool(300, 3, 5);
  const ToySizes sizes{400, 100};
  const ToyStatistic stat = [](const LabeledDataset& r, const Matrix& d, std::uint64_t seed) {
    return std::vector<double>{d.col(0).mean() - r.points.col(0).mean(), static_cast<double>(seed % 1000)};
  };
  const auto one = run_toys(pool, nullptr, 0.0, sizes, 12, stat, 77, {1});
  const auto four = run_toys(pool, nullptr, 0.0, sizes, 12, stat, 77, {4});
  EXPECT_EQ(one, four);
  EXPECT_NE(one, run_toys(pool, nullptr, 0.0, sizes, 12, stat, 78, {1}));
}

TEST(Toys, StratifiedDisjointDrawsAndInjection) {
  const auto pool = gaussian_pool(300, 3, 6);
  Matrix signal = Matrix::Constant(50, 2, 100.0);
  const ToySizes sizes{600, 150};
  const ToyStatistic stat = [&](const LabeledDataset& r, const Matrix& d, std::uint64_t) {
    const auto counts = r.class_counts();
    double n_sig = 0.0;
    for (Eigen::Index i = 0; i < d.rows(); ++i) n_sig += d(i, 0) == 100.0;
    return std::vector<double>{static_cast<double>(counts[0]), static_cast<double>(counts[2]),
                               static_cast<double>(d.rows()), n_sig};
  };
  const auto table = run_toys(pool, &signal, 0.1, sizes, 3, stat, 1);
  for (const auto& row : table) {
    EXPECT_EQ(row[0], 200.0);
    EXPECT_EQ(row[1], 200.0);
    EXPECT_EQ(row[2], 165.0);
    EXPECT_EQ(row[3], 15.0);
  }
  EXPECT_THROW(run_toys(pool, nullptr, 0.0, {900, 100}, 1, stat, 1), InvalidArgument);
}

TEST(Toys, FailureNamesToy) {
  const auto pool = gaussian_pool(100, 2, 7);
  const ToyStatistic stat = [](const LabeledDataset&, const Matrix&, std::uint64_t seed) -> std::vector<double> {
    if (seed == derive_seed(derive_seed(5, 2), 1)) throw NumericalError("boom");
    return {0.0};
  };
  try {
    run_toys(pool, nullptr, 0.0, {100, 50}, 4, stat, 5, {2});
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("toy 2"), std::string::npos) << e.what();
  }
}

TEST(NullToys, EnsemblesAreSortedPerWidth) {
  const auto pool = gaussian_pool(400, 2, 8);
  NplmConfig cfg;
  cfg.widths = {0.5, 2.0};
  const auto ens = run_null_toys(pool, {500, 100}, 6, cfg, 3);
  ASSERT_EQ(ens.size(), 2u);
  for (const auto& e : ens) {
    EXPECT_EQ(e.n_toys(), 6u);
    EXPECT_TRUE(std::is_sorted(e.t_values.begin(), e.t_values.end()));
  }
  EXPECT_EQ(ens[1].width, 2.0);
}
