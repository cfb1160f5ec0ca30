#include "novelscan/calibration.hpp"

#include "novelscan/errors.hpp"
#include "novelscan/random.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <atomic>
#include <cfloat>
#include <cmath>
#include <limits>
#include <mutex>
#include <numeric>
#include <optional>
#include <string>
#include <thread>

namespace novelscan {

ToyEnsemble ToyEnsemble::from_values(std::vector<double> values, double width, std::uint64_t master_seed) {
  std::sort(values.begin(), values.end());
  return {std::move(values), width, master_seed};
}

nlohmann::ordered_json ToyEnsemble::to_json() const {
  nlohmann::ordered_json j;
  j["width"] = width;
  j["master_seed"] = master_seed;
  j["n_toys"] = n_toys();
  j["t_values"] = t_values;
  return j;
}

ToyEnsemble ToyEnsemble::from_json(const nlohmann::json& j) {
  try {
    auto e = from_values(j.at("t_values").get<std::vector<double>>(), j.at("width").get<double>(),
                         j.at("master_seed").get<std::uint64_t>());
    if (e.n_toys() != j.at("n_toys").get<std::size_t>()) throw IoError("ensemble n_toys does not match t_values");
    return e;
  } catch (const nlohmann::json::exception& ex) {
    throw IoError(std::string("malformed ensemble JSON: ") + ex.what());
  }
}

EmpiricalP empirical_pvalue(double t_obs, const ToyEnsemble& ensemble) {
  const auto& t = ensemble.t_values;
  if (t.empty()) throw InvalidArgument("empirical_pvalue: empty ensemble");
  const auto above = static_cast<std::size_t>(t.end() - std::upper_bound(t.begin(), t.end(), t_obs));
  if (above == 0) return {1.0 / static_cast<double>(t.size() + 1), true};
  return {static_cast<double>(above) / static_cast<double>(t.size()), false};
}

double asymptotic_pvalue(double t_obs, double dof) {
  if (!(dof > 0.0)) throw InvalidArgument("asymptotic_pvalue: dof must be positive");
  if (std::isnan(t_obs)) throw InvalidArgument("asymptotic_pvalue: t_obs is NaN");
  if (t_obs <= 0.0) return 1.0;
  if (std::isinf(t_obs)) return 0.0;
  return boost::math::gamma_q(dof / 2.0, t_obs / 2.0);
}

double z_score(double p) {
  if (!(p > 0.0 && p < 1.0)) throw InvalidArgument("z_score: p must lie in (0, 1), got " + std::to_string(p));
  return boost::math::quantile(boost::math::complement(boost::math::normal(), p));
}

double combine_pvalues(std::span<const double> p_values) {
  if (p_values.empty()) throw InvalidArgument("combine_pvalues: no p-values");
  for (double p : p_values)
    if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("combine_pvalues: p outside [0, 1]");
  return std::accumulate(p_values.begin(), p_values.end(), 0.0) / static_cast<double>(p_values.size());
}

Chi2Fit fit_chi2_dof(const ToyEnsemble& ensemble) {
  const auto& t = ensemble.t_values;
  if (t.size() < 50) throw InvalidArgument("fit_chi2_dof: need at least 50 toys, got " + std::to_string(t.size()));
  std::vector<double> pos;
  for (double v : t)
    if (v > 0.0) pos.push_back(v);
  if (2 * pos.size() <= t.size()) {
    throw FitFailure("fit_chi2_dof: " + std::to_string(t.size() - pos.size()) + " of " + std::to_string(t.size()) +
                     " values are non-positive");
  }
  if (pos.front() == pos.back()) throw FitFailure("fit_chi2_dof: ensemble has zero variance");

  double mean_log = 0.0;
  for (double v : pos) mean_log += std::log(v / 2.0);
  mean_log /= static_cast<double>(pos.size());

  // psi(k/2) = mean log(t/2); psi is increasing, so bisect in log k.
  double lo = std::log(1e-8), hi = std::log(1e8);
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (boost::math::digamma(std::exp(mid) / 2.0) < mean_log) lo = mid;
    else hi = mid;
  }
  Chi2Fit fit;
  fit.dof = std::exp(0.5 * (lo + hi));
  fit.n_used = pos.size();
  fit.mean_positive = std::accumulate(pos.begin(), pos.end(), 0.0) / static_cast<double>(pos.size());
  const boost::math::chi_squared dist(fit.dof);
  const double n = static_cast<double>(pos.size());
  for (std::size_t i = 0; i < pos.size(); ++i) {
    const double f = boost::math::cdf(dist, pos[i]);
    fit.ks_statistic = std::max({fit.ks_statistic, f - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - f});
  }
  return fit;
}

double ks_uniform_statistic(std::vector<double> values) {
  if (values.empty()) throw InvalidArgument("ks_uniform_statistic: no values");
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  double d = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double u = std::clamp(values[i], 0.0, 1.0);
    d = std::max({d, u - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - u});
  }
  return d;
}

double ks_pvalue(std::size_t n, double d) {
  if (n == 0) throw InvalidArgument("ks_pvalue: n must be positive");
  const double sn = std::sqrt(static_cast<double>(n));
  const double lambda = (sn + 0.12 + 0.11 / sn) * d;
  if (lambda < 0.2) return 1.0;
  double sum = 0.0;
  for (int j = 1; j <= 100; ++j) {
    const double term = std::exp(-2.0 * j * j * lambda * lambda);
    sum += (j % 2 ? 2.0 : -2.0) * term;
    if (term < 1e-16) break;
  }
  return std::clamp(sum, 0.0, 1.0);
}

double reporting_z(double p, std::size_t n_toys) {
  if (std::isnan(p)) return p;
  if (p >= 1.0) p = 1.0 - 1.0 / static_cast<double>(n_toys + 1);
  return z_score(std::max(p, DBL_MIN));
}

nlohmann::ordered_json TestReport::to_json() const {
  const auto num = [](double v) { return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(); };
  nlohmann::ordered_json j;
  j["per_width"] = nlohmann::ordered_json::array();
  for (const auto& w : per_width) {
    nlohmann::ordered_json r;
    r["width"] = w.width;
    r["t_obs"] = w.t_obs;
    r["p_empirical"] = w.p_empirical;
    r["saturated"] = w.saturated;
    r["p_asymptotic"] = num(w.p_asymptotic);
    r["z_empirical"] = w.z_empirical;
    r["z_asymptotic"] = num(w.z_asymptotic);
    r["chi2_dof"] = w.chi2_dof;
    j["per_width"].push_back(r);
  }
  j["p_combined"] = p_combined;
  j["z_combined"] = z_combined;
  j["any_saturated"] = any_saturated;
  return j;
}

AsymptoticNull chi2_null(const ToyEnsemble& ensemble) {
  constexpr double nan = std::numeric_limits<double>::quiet_NaN();
  if (ensemble.n_toys() < 50) return {[](double) { return nan; }, 0.0};
  try {
    const double dof = fit_chi2_dof(ensemble).dof;
    return {[dof](double t) { return asymptotic_pvalue(t, dof); }, dof};
  } catch (const FitFailure&) {
    return {[](double) { return nan; }, 0.0};
  }
}

AsymptoticNull gaussian_null(const ToyEnsemble& ensemble) {
  constexpr double nan = std::numeric_limits<double>::quiet_NaN();
  const auto& t = ensemble.t_values;
  if (t.size() < 2) return {[](double) { return nan; }, 0.0};
  const double mean = std::accumulate(t.begin(), t.end(), 0.0) / static_cast<double>(t.size());
  double ss = 0.0;
  for (double v : t) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(t.size() - 1));
  if (!(sd > 0.0)) return {[](double) { return nan; }, 0.0};
  return {[mean, sd](double x) {
            return boost::math::cdf(boost::math::complement(boost::math::normal(), (x - mean) / sd));
          },
          0.0};
}

TestReport make_report(std::span<const double> t_obs, std::span<const ToyEnsemble> ensembles,
                       std::span<const AsymptoticNull> nulls) {
  if (t_obs.size() != ensembles.size() || t_obs.empty()) {
    throw InvalidArgument("make_report: need one ensemble per observed statistic");
  }
  if (!nulls.empty() && nulls.size() != ensembles.size()) {
    throw InvalidArgument("make_report: need one asymptotic model per ensemble");
  }
  TestReport report;
  std::vector<double> p_values;
  std::size_t n_min = ensembles.front().n_toys();
  for (std::size_t k = 0; k < t_obs.size(); ++k) {
    const auto& ens = ensembles[k];
    n_min = std::min(n_min, ens.n_toys());
    WidthReport w;
    w.width = ens.width;
    w.t_obs = t_obs[k];
    const auto emp = empirical_pvalue(t_obs[k], ens);
    w.p_empirical = emp.p;
    w.saturated = emp.saturated;
    w.z_empirical = reporting_z(emp.p, ens.n_toys());
    const AsymptoticNull null = nulls.empty() ? chi2_null(ens) : nulls[k];
    w.chi2_dof = null.chi2_dof;
    w.p_asymptotic = null.pvalue(t_obs[k]);
    w.z_asymptotic = reporting_z(w.p_asymptotic, ens.n_toys());
    report.any_saturated = report.any_saturated || emp.saturated;
    p_values.push_back(emp.p);
    report.per_width.push_back(w);
  }
  report.p_combined = combine_pvalues(p_values);
  report.z_combined = reporting_z(report.p_combined, n_min);
  return report;
}

namespace {

struct ToyRows {
  std::vector<std::size_t> reference;
  std::vector<std::size_t> observed;
};

// Largest-remainder apportionment of `total` over classes proportional to counts.
std::vector<std::size_t> apportion(const std::vector<std::size_t>& counts, std::size_t pool, std::size_t total) {
  std::vector<std::size_t> out(counts.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    const double quota = static_cast<double>(total) * static_cast<double>(counts[c]) / static_cast<double>(pool);
    out[c] = static_cast<std::size_t>(std::floor(quota));
    assigned += out[c];
    remainders.emplace_back(quota - std::floor(quota), c);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < total; ++k, ++assigned) ++out[remainders[k % remainders.size()].second];
  return out;
}

class ToySampler {
 public:
  ToySampler(const LabeledDataset& pool, const ToySizes& sizes, bool fixed_reference) : sizes_(sizes) {
    const std::size_t need = (fixed_reference ? 0 : sizes.n_ref) + sizes.n_data;
    if (pool.size() < need) {
      throw InvalidArgument("toy pool has " + std::to_string(pool.size()) + " rows, need " + std::to_string(need));
    }
    if (sizes.n_data == 0 || (!fixed_reference && sizes.n_ref == 0)) throw InvalidArgument("toy sizes must be positive");
    by_class_.resize(static_cast<std::size_t>(pool.n_classes));
    for (std::size_t r = 0; r < pool.size(); ++r) by_class_[static_cast<std::size_t>(pool.labels[r])].push_back(r);
    std::vector<std::size_t> counts;
    for (const auto& rows : by_class_) counts.push_back(rows.size());
    ref_counts_ = fixed_reference ? std::vector<std::size_t>(counts.size(), 0) : apportion(counts, pool.size(), sizes.n_ref);
    const auto total = apportion(counts, pool.size(), need);
    data_counts_.resize(counts.size());
    for (std::size_t c = 0; c < counts.size(); ++c) {
      if (total[c] < ref_counts_[c]) throw InvalidArgument("toy pool class " + std::to_string(c) + " is too small");
      data_counts_[c] = total[c] - ref_counts_[c];
    }
  }

  ToyRows draw(Rng& rng) const {
    ToyRows rows;
    for (std::size_t c = 0; c < by_class_.size(); ++c) {
      const auto picked = sample_without_replacement(by_class_[c].size(), ref_counts_[c] + data_counts_[c], rng);
      for (std::size_t k = 0; k < picked.size(); ++k) {
        (k < ref_counts_[c] ? rows.reference : rows.observed).push_back(by_class_[c][picked[k]]);
      }
    }
    return rows;
  }

 private:
  ToySizes sizes_;
  std::vector<std::vector<std::size_t>> by_class_;
  std::vector<std::size_t> ref_counts_;
  std::vector<std::size_t> data_counts_;
};

}  // namespace

ToyTable run_toys(const LabeledDataset& background_pool, const Matrix* signal_pool, double f_signal,
                  const ToySizes& sizes, int n_toys, const ToyStatistic& statistic, std::uint64_t master_seed,
                  const ToyRunOptions& options) {
  if (n_toys < 1) throw InvalidArgument("run_toys: n_toys must be >= 1");
  if (!(f_signal >= 0.0 && f_signal < 1.0)) throw InvalidArgument("run_toys: f_S must lie in [0, 1)");
  const auto n_signal = static_cast<std::size_t>(std::llround(f_signal * static_cast<double>(sizes.n_data)));
  if (n_signal > 0 && (signal_pool == nullptr || static_cast<std::size_t>(signal_pool->rows()) < n_signal)) {
    throw InvalidArgument("run_toys: signal pool smaller than " + std::to_string(n_signal));
  }
  if (options.fixed_reference && options.fixed_reference->dim() != background_pool.dim()) {
    throw InvalidArgument("run_toys: fixed reference dimension mismatch");
  }
  const ToySampler sampler(background_pool, sizes, options.fixed_reference != nullptr);

  ToyTable table(static_cast<std::size_t>(n_toys));
  std::atomic<int> next{0};
  std::atomic<bool> failed{false};
  std::mutex failure_mutex;
  std::optional<std::pair<int, std::exception_ptr>> failure;

  const auto run_one = [&](int i) {
    const std::uint64_t toy_seed = derive_seed(master_seed, static_cast<std::uint64_t>(i));
    Rng rng(derive_seed(toy_seed, 0));
    const ToyRows rows = sampler.draw(rng);
    const LabeledDataset reference =
        options.fixed_reference ? *options.fixed_reference : background_pool.select(rows.reference);
    Matrix observed(static_cast<Eigen::Index>(rows.observed.size() + n_signal), background_pool.dim());
    for (std::size_t k = 0; k < rows.observed.size(); ++k) {
      observed.row(static_cast<Eigen::Index>(k)) = background_pool.points.row(static_cast<Eigen::Index>(rows.observed[k]));
    }
    if (n_signal > 0) {
      const auto sig = sample_without_replacement(static_cast<std::size_t>(signal_pool->rows()), n_signal, rng);
      for (std::size_t k = 0; k < sig.size(); ++k) {
        observed.row(static_cast<Eigen::Index>(rows.observed.size() + k)) =
            signal_pool->row(static_cast<Eigen::Index>(sig[k]));
      }
    }
    table[static_cast<std::size_t>(i)] = statistic(reference, observed, derive_seed(toy_seed, 1));
  };

  const auto worker = [&] {
    for (int i = next++; i < n_toys && !failed; i = next++) {
      try {
        run_one(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure || i < failure->first) failure.emplace(i, std::current_exception());
        failed = true;
      }
    }
  };

  const int threads = std::clamp(options.threads, 1, n_toys);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  }

  if (failure) {
    try {
      std::rethrow_exception(failure->second);
    } catch (const Error& e) {
      rethrow_with_context(e, "toy " + std::to_string(failure->first));
    }
  }
  return table;
}

ToyStatistic nplm_statistic(const NplmConfig& config, const ToySizes& sizes) {
  config.validate();
  NplmConfig cfg = config;
  if (cfg.w_ref == 0.0) cfg.w_ref = static_cast<double>(sizes.n_data) / static_cast<double>(sizes.n_ref);
  return [cfg](const LabeledDataset& reference, const Matrix& observed, std::uint64_t seed) {
    const TestRun run = run_test(reference.points, observed, cfg, seed);
    std::vector<double> t;
    for (const auto& w : run.per_width) t.push_back(w.t);
    return t;
  };
}

std::vector<std::vector<double>> columns(const ToyTable& table) {
  std::vector<std::vector<double>> out;
  if (table.empty()) return out;
  out.resize(table.front().size());
  for (const auto& row : table) {
    if (row.size() != out.size()) throw InvalidArgument("columns: ragged toy table");
    for (std::size_t k = 0; k < row.size(); ++k) out[k].push_back(row[k]);
  }
  return out;
}

std::vector<ToyEnsemble> run_null_toys(const LabeledDataset& background_pool, const ToySizes& sizes, int n_toys,
                                       const NplmConfig& config, std::uint64_t master_seed,
                                       const ToyRunOptions& options) {
  auto cols = columns(
      run_toys(background_pool, nullptr, 0.0, sizes, n_toys, nplm_statistic(config, sizes), master_seed, options));
  std::vector<ToyEnsemble> out;
  for (std::size_t k = 0; k < cols.size(); ++k) {
    out.push_back(ToyEnsemble::from_values(std::move(cols[k]), config.widths[k], master_seed));
  }
  return out;
}

std::vector<std::vector<double>> run_signal_toys(const LabeledDataset& background_pool, const Matrix& signal_pool,
                                                 double f_signal, const ToySizes& sizes, int n_toys,
                                                 const NplmConfig& config, std::uint64_t master_seed,
                                                 const ToyRunOptions& options) {
  return columns(run_toys(background_pool, &signal_pool, f_signal, sizes, n_toys, nplm_statistic(config, sizes),
                          master_seed, options));
}

}  // namespace novelscan
