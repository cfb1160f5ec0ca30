#pragma once

#include "novelscan/dataset.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace novelscan {

/// Nystrom Gaussian kernel model f(x) = sum_i w_i exp(-|x - c_i|^2 / (2 width^2)).
struct KernelModel {
  Matrix centers;
  double width = 1.0;
  Vector weights;

  Vector evaluate(const Matrix& points) const;
};

struct NplmConfig {
  int n_centers = 0;       // 0: round(sqrt(n_ref + n_data))
  double lambda = 1e-6;    // ridge on w^T K_c w
  std::vector<double> widths;
  double w_ref = 0.0;      // 0: n_data / n_ref
  int max_iterations = 100;
  double grad_tolerance = 1e-7;

  void validate() const;
};

/// {q1, q25, q50, q75, q99, 2*q99} of the nonzero pairwise Euclidean distances
/// among min(subsample, n) uniformly drawn rows.
std::vector<double> select_kernel_widths(const Matrix& reference, int subsample = 2000, std::uint64_t seed = 0);

int default_n_centers(std::size_t n_ref, std::size_t n_data);

/// n_centers rows drawn without replacement from the pool.
Matrix build_centers(const Matrix& pool, int n_centers, std::uint64_t seed);

/// Squared Euclidean distances, (n x M).
Matrix squared_distances(const Matrix& points, const Matrix& centers);

/// Gaussian kernel matrix, (n x M).
Matrix kernel_matrix(const Matrix& points, const Matrix& centers, double width);

struct ObjectiveValue {
  double loss = 0.0;
  Vector grad;
};

/// Weighted logistic loss plus lambda * w^T K_c w. Rows with y == 0 are the
/// reference sample (weight w_ref), rows with y == 1 the observed sample.
ObjectiveValue nplm_objective(const Vector& w, const Matrix& kernel, std::span<const int> y, double w_ref,
                              double lambda, const Matrix& center_kernel);

struct FitResult {
  Vector weights;
  int iterations = 0;
  double grad_norm = 0.0;
  std::vector<double> objective_trace;  // one entry per accepted iterate, starting at w = 0
};

/// Damped Newton with backtracking line search from w = 0, in whitened
/// coordinates beta = K_c^{1/2} w. grad_norm is measured in those coordinates.
FitResult fit_weights(const Matrix& kernel, const Matrix& center_kernel, std::span<const int> y, double w_ref,
                      double lambda, int max_iterations, double grad_tolerance);

struct ModelFit {
  KernelModel model;
  FitResult fit;
};

/// Fits the kernel model separating observed (y=1) from reference (y=0),
/// with centers drawn from the pooled sample.
ModelFit fit(const Matrix& reference, const Matrix& observed, double width, const NplmConfig& config,
             std::uint64_t seed);

/// t = -2 [ sum_R w_ref (exp f - 1) - sum_D f ].
double test_statistic(const KernelModel& model, const Matrix& reference, const Matrix& observed, double w_ref);

/// Same, from model outputs already evaluated on R and D.
double test_statistic_from_outputs(const Vector& f_reference, const Vector& f_observed, double w_ref);

struct WidthResult {
  double width = 0.0;
  double t = 0.0;
  int iterations = 0;
  double grad_norm = 0.0;
};

struct TestRun {
  std::vector<WidthResult> per_width;
  std::size_t n_ref = 0;
  std::size_t n_data = 0;
  double w_ref = 0.0;
  double lambda = 0.0;
  std::uint64_t seed = 0;

  /// One record per width: {width, t, n_ref, n_data, w_ref, lambda, iterations, grad_norm, seed}.
  nlohmann::ordered_json records() const;
};

/// Fits one model per configured width (centers shared across widths) and
/// returns t for each, in width order.
TestRun run_test(const Matrix& reference, const Matrix& observed, const NplmConfig& config, std::uint64_t seed);

// "NVKM", u32 M, u32 d, f64 width, centers row-major, weights.
void save_kernel_model(const std::filesystem::path& path, const KernelModel& model);
KernelModel load_kernel_model(const std::filesystem::path& path);

}  // namespace novelscan
