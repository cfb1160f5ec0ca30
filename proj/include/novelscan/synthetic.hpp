#pragma once

#include "novelscan/dataset.hpp"

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

namespace novelscan {

/// Axis-aligned Gaussian clusters in the meaningful (pre-noise) coordinates.
struct ClusterParams {
  std::vector<Vector> means;
  std::vector<Vector> sigmas;

  int n_clusters() const { return static_cast<int>(means.size()); }
  int dim() const { return means.empty() ? 0 : static_cast<int>(means.front().size()); }
};

struct SyntheticSpec {
  ClusterParams clusters;
  int n_noise_dims = 0;
  int n_per_class = 10000;
  Matrix rotation;  // (D+M) x (D+M), orthogonal
  std::uint64_t seed = 0;

  int total_dim() const { return clusters.dim() + n_noise_dims; }
};

/// Means ~ U(0,1), sigmas ~ U(0.02, 0.5) per coordinate.
ClusterParams sample_cluster_params(int n_clusters, int dim, std::uint64_t seed);

/// Threshold-optimized expected significance max_c s(c)/sqrt(b(c)) of injecting
/// f_inj * n_bkg points of cluster `signal` into n_bkg points of cluster
/// `background`, with both Gaussians projected on the axis between their means.
double pairwise_injection_significance(const ClusterParams& params, int background, int signal,
                                       int n_bkg = 10000, double f_inj = 0.01);

/// Minimum over ordered pairs of pairwise_injection_significance.
double min_pairwise_significance(const ClusterParams& params, int n_bkg = 10000, double f_inj = 0.01);

struct CalibrationResult {
  ClusterParams params;
  double scale = 1.0;
  double min_significance = 0.0;
};

/// Rescales the means about their centroid by one common factor so that the
/// minimum pairwise significance equals target_z. Sigmas are untouched.
CalibrationResult calibrate_separation(const ClusterParams& params, double target_z = 3.5,
                                       int n_bkg = 10000, double f_inj = 0.01);

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix, diag(R) > 0).
Matrix random_rotation(int dim, std::uint64_t seed);

struct GeneratedData {
  LabeledDataset background;
  LabeledDataset signal;
};

/// Samples n_per_class points per cluster, appends U(0,1) noise coordinates and
/// rotates the full vector. The held-out class, if any, is returned as signal.
GeneratedData generate_dataset(const SyntheticSpec& spec, std::optional<int> held_out_class);

/// Convenience: sample, calibrate and rotate in one go.
SyntheticSpec make_synthetic_spec(int n_clusters, int dim, int n_noise_dims, int n_per_class,
                                  std::uint64_t seed, double target_z = 3.5);

}  // namespace novelscan
