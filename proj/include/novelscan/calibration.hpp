#pragma once

#include "novelscan/dataset.hpp"
#include "novelscan/nplm.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace novelscan {

/// Sorted null test statistics for one kernel width (or one baseline statistic).
struct ToyEnsemble {
  std::vector<double> t_values;
  double width = 0.0;
  std::uint64_t master_seed = 0;

  std::size_t n_toys() const { return t_values.size(); }
  static ToyEnsemble from_values(std::vector<double> values, double width, std::uint64_t master_seed);
  nlohmann::ordered_json to_json() const;
  static ToyEnsemble from_json(const nlohmann::json& j);
};

struct EmpiricalP {
  double p = 1.0;
  bool saturated = false;
};

/// Fraction of ensemble entries strictly above t_obs. A zero count is reported
/// as 1/(n+1) with saturated set.
EmpiricalP empirical_pvalue(double t_obs, const ToyEnsemble& ensemble);

/// Survival function of chi^2_dof at t.
double asymptotic_pvalue(double t_obs, double dof);

/// Z = Phi^{-1}(1 - p), p in (0, 1).
double z_score(double p);

double combine_pvalues(std::span<const double> p_values);

struct Chi2Fit {
  double dof = 0.0;
  double ks_statistic = 0.0;   // sup |F_emp - F_chi2| over the positive entries
  double mean_positive = 0.0;  // moment cross-check: E[chi^2_k] = k
  std::size_t n_used = 0;
};

/// Maximum-likelihood dof over the positive entries.
Chi2Fit fit_chi2_dof(const ToyEnsemble& ensemble);

/// One-sample KS statistic of values against U(0,1).
double ks_uniform_statistic(std::vector<double> values);

/// Upper-tail probability of the KS statistic d for n samples (Kolmogorov
/// limit with Stephens' finite-n correction).
double ks_pvalue(std::size_t n, double d);

struct WidthReport {
  double width = 0.0;
  double t_obs = 0.0;
  double p_empirical = 1.0;
  bool saturated = false;
  double p_asymptotic = 1.0;
  double z_empirical = 0.0;
  double z_asymptotic = 0.0;
  double chi2_dof = 0.0;
};

struct TestReport {
  std::vector<WidthReport> per_width;
  double p_combined = 1.0;
  double z_combined = 0.0;
  bool any_saturated = false;

  nlohmann::ordered_json to_json() const;
};

/// Z for reporting: p = 1 maps to Z(1 - 1/(n+1)), tiny p to Z(DBL_MIN).
double reporting_z(double p, std::size_t n_toys);

/// Asymptotic null model of one statistic component.
struct AsymptoticNull {
  std::function<double(double)> pvalue;  // NaN when the model could not be fitted
  double chi2_dof = 0.0;                 // 0 unless a chi^2 was fitted
};

/// chi^2 with MLE dof; p is NaN if the fit fails.
AsymptoticNull chi2_null(const ToyEnsemble& ensemble);

/// Normal with the ensemble's mean and standard deviation.
AsymptoticNull gaussian_null(const ToyEnsemble& ensemble);

/// Builds a report from observed per-width statistics and matching null
/// ensembles. Without explicit models each ensemble gets chi2_null.
TestReport make_report(std::span<const double> t_obs, std::span<const ToyEnsemble> ensembles,
                       std::span<const AsymptoticNull> nulls = {});

struct ToySizes {
  std::size_t n_ref = 10000;
  std::size_t n_data = 2000;
};

/// One toy: reference sample (with class labels) against an observed sample.
/// Returns one value per statistic component, e.g. per kernel width.
using ToyStatistic =
    std::function<std::vector<double>(const LabeledDataset& reference, const Matrix& observed, std::uint64_t seed)>;

struct ToyRunOptions {
  int threads = 1;
  const LabeledDataset* fixed_reference = nullptr;  // skip re-sampling R each toy
};

/// Outer index: toy; inner: statistic component.
using ToyTable = std::vector<std::vector<double>>;

/// Toy i: seed derive_seed(master_seed, i). R (n_ref) and D (n_data) are
/// disjoint class-stratified draws from the background pool; D additionally
/// receives round(f_S * n_data) signal rows. Results are stored by toy index.
ToyTable run_toys(const LabeledDataset& background_pool, const Matrix* signal_pool, double f_signal,
                  const ToySizes& sizes, int n_toys, const ToyStatistic& statistic, std::uint64_t master_seed,
                  const ToyRunOptions& options = {});

/// NPLM statistic per configured width with w_ref = n_data / n_ref.
ToyStatistic nplm_statistic(const NplmConfig& config, const ToySizes& sizes);

/// Per-width sorted ensembles from the NPLM null toys.
std::vector<ToyEnsemble> run_null_toys(const LabeledDataset& background_pool, const ToySizes& sizes, int n_toys,
                                       const NplmConfig& config, std::uint64_t master_seed,
                                       const ToyRunOptions& options = {});

/// Per-width lists of t (unsorted, by toy index).
std::vector<std::vector<double>> run_signal_toys(const LabeledDataset& background_pool, const Matrix& signal_pool,
                                                 double f_signal, const ToySizes& sizes, int n_toys,
                                                 const NplmConfig& config, std::uint64_t master_seed,
                                                 const ToyRunOptions& options = {});

/// Transposes a toy table into per-component columns.
std::vector<std::vector<double>> columns(const ToyTable& table);

}  // namespace novelscan
