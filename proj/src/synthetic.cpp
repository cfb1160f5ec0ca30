#include "novelscan/synthetic.hpp"

#include "novelscan/errors.hpp"
#include "novelscan/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace novelscan {

namespace {

constexpr double kMinBackground = 1e-9;

double survival(double x, double mean, double sigma) {
  return 0.5 * std::erfc((x - mean) / (sigma * std::sqrt(2.0)));
}

struct Projected {
  double mean_bkg, sigma_bkg, mean_sig, sigma_sig;
};

Projected project_pair(const ClusterParams& params, int background, int signal) {
  const Vector& mb = params.means[static_cast<std::size_t>(background)];
  const Vector& ms = params.means[static_cast<std::size_t>(signal)];
  Vector axis = ms - mb;
  const double norm = axis.norm();
  if (norm > 0.0) {
    axis /= norm;
  } else {
    // Coincident means: every axis is equivalent up to the sigmas; take the first.
    axis = Vector::Unit(mb.size(), 0);
  }
  const auto project_sigma = [&](const Vector& s) {
    return std::sqrt((axis.array().square() * s.array().square()).sum());
  };
  return {axis.dot(mb), project_sigma(params.sigmas[static_cast<std::size_t>(background)]), axis.dot(ms),
          project_sigma(params.sigmas[static_cast<std::size_t>(signal)])};
}

void check_params(const ClusterParams& params) {
  if (params.means.size() != params.sigmas.size() || params.means.empty()) {
    throw InvalidArgument("cluster params: means and sigmas must be non-empty and of equal count");
  }
  const auto d = params.means.front().size();
  for (std::size_t i = 0; i < params.means.size(); ++i) {
    if (params.means[i].size() != d || params.sigmas[i].size() != d) {
      throw InvalidArgument("cluster params: inconsistent dimensions");
    }
    if ((params.sigmas[i].array() <= 0.0).any()) throw InvalidArgument("cluster params: sigmas must be positive");
  }
}

ClusterParams scale_means(const ClusterParams& params, double factor) {
  Vector centroid = Vector::Zero(params.dim());
  for (const auto& m : params.means) centroid += m;
  centroid /= static_cast<double>(params.means.size());
  ClusterParams out = params;
  for (auto& m : out.means) m = centroid + factor * (m - centroid);
  return out;
}

}  // namespace

ClusterParams sample_cluster_params(int n_clusters, int dim, std::uint64_t seed) {
  if (n_clusters < 2) throw InvalidArgument("sample_cluster_params: need at least 2 clusters");
  if (dim < 1) throw InvalidArgument("sample_cluster_params: dim must be >= 1");
  Rng rng(seed);
  std::uniform_real_distribution<double> mean_dist(0.0, 1.0);
  std::uniform_real_distribution<double> sigma_dist(0.02, 0.5);
  ClusterParams params;
  for (int i = 0; i < n_clusters; ++i) {
    Vector mu(dim), sigma(dim);
    for (int k = 0; k < dim; ++k) mu(k) = mean_dist(rng);
    for (int k = 0; k < dim; ++k) sigma(k) = sigma_dist(rng);
    params.means.push_back(std::move(mu));
    params.sigmas.push_back(std::move(sigma));
  }
  return params;
}

double pairwise_injection_significance(const ClusterParams& params, int background, int signal, int n_bkg,
                                       double f_inj) {
  check_params(params);
  if (background == signal) throw InvalidArgument("pairwise_injection_significance: classes must differ");
  if (background < 0 || signal < 0 || background >= params.n_clusters() || signal >= params.n_clusters()) {
    throw InvalidArgument("pairwise_injection_significance: class index out of range");
  }
  if (n_bkg <= 0 || !(f_inj > 0.0 && f_inj < 1.0)) {
    throw InvalidArgument("pairwise_injection_significance: need n_bkg > 0 and 0 < f_inj < 1");
  }

  const Projected p = project_pair(params, background, signal);
  const double n = static_cast<double>(n_bkg);
  const auto objective = [&](double c) {
    const double s = f_inj * n * survival(c, p.mean_sig, p.sigma_sig);
    const double b = std::max(n * survival(c, p.mean_bkg, p.sigma_bkg), kMinBackground);
    return s / std::sqrt(b);
  };

  const double width = std::max(p.sigma_bkg, p.sigma_sig);
  const double lo = std::min(p.mean_bkg, p.mean_sig) - 12.0 * width;
  const double hi = std::max(p.mean_bkg, p.mean_sig) + 12.0 * width;
  constexpr int kGrid = 4000;
  const double step = (hi - lo) / kGrid;
  int best = 0;
  double best_value = -1.0;
  for (int k = 0; k <= kGrid; ++k) {
    const double v = objective(lo + step * k);
    if (v > best_value) {
      best_value = v;
      best = k;
    }
  }

  // Golden-section refinement inside the neighbouring grid cells.
  double a = lo + step * std::max(best - 1, 0);
  double b = lo + step * std::min(best + 1, kGrid);
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = b - inv_phi * (b - a), x2 = a + inv_phi * (b - a);
  double f1 = objective(x1), f2 = objective(x2);
  for (int it = 0; it < 100 && (b - a) > 1e-12 * (1.0 + std::abs(a)); ++it) {
    if (f1 < f2) {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + inv_phi * (b - a);
      f2 = objective(x2);
    } else {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - inv_phi * (b - a);
      f1 = objective(x1);
    }
  }
  return std::max({best_value, f1, f2});
}

double min_pairwise_significance(const ClusterParams& params, int n_bkg, double f_inj) {
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < params.n_clusters(); ++i) {
    for (int j = 0; j < params.n_clusters(); ++j) {
      if (i != j) best = std::min(best, pairwise_injection_significance(params, i, j, n_bkg, f_inj));
    }
  }
  return best;
}

CalibrationResult calibrate_separation(const ClusterParams& params, double target_z, int n_bkg, double f_inj) {
  check_params(params);
  if (params.n_clusters() < 2) throw InvalidArgument("calibrate_separation: need at least 2 clusters");
  const auto significance_at = [&](double log_scale) {
    return min_pairwise_significance(scale_means(params, std::exp(log_scale)), n_bkg, f_inj);
  };

  double lo = std::log(1e-3), hi = std::log(1e3);
  const double z_lo = significance_at(lo);
  const double z_hi = significance_at(hi);
  if (!(z_lo < target_z && target_z < z_hi)) {
    throw CalibrationFailure("calibrate_separation: target " + std::to_string(target_z) +
                             " not bracketed by scale range [1e-3, 1e3] (z in [" + std::to_string(z_lo) + ", " +
                             std::to_string(z_hi) + "])");
  }
  double mid = 0.0, z_mid = 0.0;
  for (int it = 0; it < 200; ++it) {
    mid = 0.5 * (lo + hi);
    z_mid = significance_at(mid);
    if (std::abs(z_mid - target_z) < 1e-7) break;
    (z_mid < target_z ? lo : hi) = mid;
  }
  CalibrationResult result;
  result.scale = std::exp(mid);
  result.params = scale_means(params, result.scale);
  result.min_significance = z_mid;
  return result;
}

Matrix random_rotation(int dim, std::uint64_t seed) {
  if (dim < 1) throw InvalidArgument("random_rotation: dim must be >= 1");
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd g(dim, dim);
  for (int r = 0; r < dim; ++r)
    for (int c = 0; c < dim; ++c) g(r, c) = normal(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ();
  const Eigen::MatrixXd& r = qr.matrixQR();
  for (int k = 0; k < dim; ++k) {
    if (r(k, k) < 0.0) q.col(k) = -q.col(k);
  }
  return q;
}

GeneratedData generate_dataset(const SyntheticSpec& spec, std::optional<int> held_out_class) {
  const ClusterParams& cp = spec.clusters;
  check_params(cp);
  const int d = cp.dim();
  const int total = spec.total_dim();
  if (spec.n_noise_dims < 0 || spec.n_per_class < 1) throw InvalidArgument("generate_dataset: bad sizes");
  if (spec.rotation.rows() != total || spec.rotation.cols() != total) {
    throw InvalidArgument("generate_dataset: rotation must be " + std::to_string(total) + "x" + std::to_string(total));
  }
  if (held_out_class && (*held_out_class < 0 || *held_out_class >= cp.n_clusters())) {
    throw InvalidArgument("generate_dataset: held-out class out of range");
  }

  Rng rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  const int n_classes = cp.n_clusters();
  const int n_signal_classes = held_out_class ? 1 : 0;
  GeneratedData out;
  out.background.n_classes = n_classes;
  out.signal.n_classes = n_classes;
  out.background.points.resize(static_cast<Eigen::Index>(n_classes - n_signal_classes) * spec.n_per_class, total);
  out.signal.points.resize(static_cast<Eigen::Index>(n_signal_classes) * spec.n_per_class, total);

  Eigen::Index bkg_row = 0, sig_row = 0;
  Vector x(total);
  for (int c = 0; c < n_classes; ++c) {
    const bool is_signal = held_out_class && *held_out_class == c;
    const Vector& mu = cp.means[static_cast<std::size_t>(c)];
    const Vector& sigma = cp.sigmas[static_cast<std::size_t>(c)];
    for (int i = 0; i < spec.n_per_class; ++i) {
      for (int k = 0; k < d; ++k) x(k) = mu(k) + sigma(k) * normal(rng);
      for (int k = d; k < total; ++k) x(k) = uniform(rng);
      if (is_signal) {
        out.signal.points.row(sig_row++) = (spec.rotation * x).transpose();
        out.signal.labels.push_back(c);
      } else {
        out.background.points.row(bkg_row++) = (spec.rotation * x).transpose();
        out.background.labels.push_back(c);
      }
    }
  }
  return out;
}

SyntheticSpec make_synthetic_spec(int n_clusters, int dim, int n_noise_dims, int n_per_class, std::uint64_t seed,
                                  double target_z) {
  SyntheticSpec spec;
  spec.clusters = calibrate_separation(sample_cluster_params(n_clusters, dim, derive_seed(seed, 1)), target_z).params;
  spec.n_noise_dims = n_noise_dims;
  spec.n_per_class = n_per_class;
  spec.rotation = random_rotation(dim + n_noise_dims, derive_seed(seed, 2));
  spec.seed = derive_seed(seed, 3);
  return spec;
}

}  // namespace novelscan
