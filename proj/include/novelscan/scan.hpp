#pragma once

#include "novelscan/baselines.hpp"
#include "novelscan/calibration.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace novelscan {

/// Raw toy statistics of one method: null toys and one table per f_S.
struct MethodScan {
  Method method = Method::nplm;
  std::vector<double> components;  // kernel widths, or {0}
  ToyTable null_toys;
  std::vector<double> f_signal;
  std::vector<ToyTable> signal_toys;

  std::vector<ToyEnsemble> ensembles(std::uint64_t master_seed = 0) const;
};

/// Null toys use derive_seed(master, 0); the k-th f_S uses derive_seed(master, k + 1).
/// Every method scanned with the same master seed sees the same R and D draws.
MethodScan run_method_scan(Method method, const MethodContext& context, const LabeledDataset& background_pool,
                           const Matrix& signal_pool, const ToySizes& sizes, std::span<const double> f_grid,
                           int n_null, int n_signal, std::uint64_t master_seed, const ToyRunOptions& options);

struct ToyOutcome {
  int toy = 0;
  TestReport report;
};

struct ScanPoint {
  double f_signal = 0.0;
  std::vector<ToyOutcome> toys;
};

/// Per-toy reports of every signal toy against the method's null ensembles.
/// z_asymptotic follows asymptotic_model(method).
std::vector<ScanPoint> evaluate_scan(const MethodScan& scan);

/// Linear-interpolation quantile (type 7) of unsorted values.
double quantile(std::vector<double> values, double q);

/// `kind,f_S,width,toy,t`; null toys are written with f_S = 0.
void write_toy_csv(const std::filesystem::path& path, std::span<const MethodScan> scans);
std::vector<MethodScan> read_toy_csv(const std::filesystem::path& path);

/// `method,f_S,width,z_empirical,z_asymptotic,z_combined,saturated`: medians
/// over toys, one row per (method, f_S, width).
std::string summary_csv(std::span<const MethodScan> scans);

/// `kind,f_S,z_empirical_median,z_low,z_high` of the combined Z (16th/84th percentiles).
std::string z_summary_csv(std::span<const MethodScan> scans);

/// `method,f_S` then one median empirical Z column per width, for multi-width methods.
std::string per_width_csv(std::span<const MethodScan> scans);

/// All per-toy reports of a scan, for the JSON report files.
nlohmann::ordered_json reports_json(const MethodScan& scan);

/// Shortest round-trip decimal form.
std::string format_double(double v);

}  // namespace novelscan
