#pragma once

// Independent reference implementations shared by the unit and acceptance tests.

#include "novelscan/dataset.hpp"
#include "novelscan/nplm.hpp"
#include "novelscan/random.hpp"
#include "novelscan/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <utility>
#include <vector>

namespace novelscan::oracle {

inline Matrix gaussian_points(Eigen::Index n, Eigen::Index d, Rng& rng, double shift = 0.0) {
  std::normal_distribution<double> normal;
  Matrix m(n, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng) + shift;
  return m;
}

// Empirical max of s/sqrt(b) over thresholds, from samples of both clusters
// projected on the inter-mean axis.
inline double monte_carlo_significance(const ClusterParams& p, int bkg, int sig, int n_samples,
                                       std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> normal;
  const Vector& mb = p.means[static_cast<std::size_t>(bkg)];
  const Vector& ms = p.means[static_cast<std::size_t>(sig)];
  const Vector axis = (ms - mb).normalized();
  const auto draw = [&](int k) {
    std::vector<double> out(static_cast<std::size_t>(n_samples));
    const Vector& mu = p.means[static_cast<std::size_t>(k)];
    const Vector& sd = p.sigmas[static_cast<std::size_t>(k)];
    for (auto& v : out) {
      double proj = 0.0;
      for (Eigen::Index j = 0; j < mu.size(); ++j) proj += axis(j) * (mu(j) + sd(j) * normal(rng));
      v = proj;
    }
    return out;
  };
  std::vector<std::pair<double, int>> all;
  for (double v : draw(bkg)) all.emplace_back(v, 0);
  for (double v : draw(sig)) all.emplace_back(v, 1);
  std::sort(all.begin(), all.end(), std::greater<>());
  const double n = static_cast<double>(n_samples);
  double n_b = 0.0, n_s = 0.0, best = 0.0;
  for (const auto& [v, k] : all) {
    (k == 0 ? n_b : n_s) += 1.0;
    if (n_b < 100.0) continue;  // keep the background estimate out of the sparse tail
    const double s = 0.01 * 10000.0 * n_s / n;
    const double b = 10000.0 * n_b / n;
    best = std::max(best, s / std::sqrt(b));
  }
  return best;
}

// Asymptotic Kolmogorov survival function.
inline double kolmogorov_tail(double lambda) {
  double p = 0.0;
  for (int k = 1; k <= 100; ++k) p += 2.0 * ((k % 2) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
  return std::clamp(p, 0.0, 1.0);
}

inline double cosine(const Matrix& z, Eigen::Index a, Eigen::Index b) {
  return z.row(a).dot(z.row(b)) / (z.row(a).norm() * z.row(b).norm());
}

// Direct evaluation, summed over anchors.
inline double supcon(const Matrix& z, const std::vector<int>& y, double tau) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    double denom = 0.0;
    for (Eigen::Index a = 0; a < z.rows(); ++a)
      if (a != i) denom += std::exp(cosine(z, i, a) / tau);
    double sum = 0.0;
    int n_pos = 0;
    for (Eigen::Index p = 0; p < z.rows(); ++p) {
      if (p == i || y[p] != y[i]) continue;
      sum += std::log(std::exp(cosine(z, i, p) / tau) / denom);
      ++n_pos;
    }
    if (n_pos > 0) total += -sum / n_pos;
  }
  return total;
}

inline double simclr(const Matrix& z, double tau) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); i += 2) {
    double denom = 0.0;
    for (Eigen::Index a = 0; a < z.rows(); ++a)
      if (a != i) denom += std::exp(cosine(z, i, a) / tau);
    total += -std::log(std::exp(cosine(z, i, i + 1) / tau) / denom);
  }
  return total;
}

inline double cross_entropy(const Matrix& logits, const std::vector<int>& y) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    double denom = 0.0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) denom += std::exp(logits(i, c));
    total += -std::log(std::exp(logits(i, y[i])) / denom);
  }
  return total / static_cast<double>(logits.rows());
}

// Largest relative deviation of central differences from an analytic gradient.
template <class F>
double max_rel_fd_error(const Matrix& x, const Matrix& analytic, F loss, double step) {
  double worst = 0.0;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    Matrix a = x, b = x;
    a.data()[k] += step;
    b.data()[k] -= step;
    const double fd = (loss(a) - loss(b)) / (2.0 * step);
    const double g = analytic.data()[k];
    worst = std::max(worst, std::abs(fd - g) / std::max(std::abs(fd), 1e-6));
  }
  return worst;
}

struct KernelInstance {
  Matrix k, kc;
  std::vector<int> y;
};

// n points in 2-d, the first m as centers, random width; the last quarter are data.
inline KernelInstance random_kernel_instance(Rng& rng, int n = 40, int m = 8) {
  KernelInstance inst;
  const Matrix pts = gaussian_points(n, 2, rng);
  const Matrix centers = pts.topRows(m);
  std::uniform_real_distribution<double> width_dist(0.5, 2.0);
  const double width = width_dist(rng);
  inst.k = kernel_matrix(pts, centers, width);
  inst.kc = kernel_matrix(centers, centers, width);
  inst.y.assign(static_cast<std::size_t>(n), 0);
  for (int i = 3 * n / 4; i < n; ++i) inst.y[static_cast<std::size_t>(i)] = 1;
  return inst;
}

// Straightforward evaluation of the weighted logistic objective.
inline double nplm_objective(const Vector& w, const KernelInstance& inst, double w_ref, double lambda) {
  double loss = 0.0;
  for (Eigen::Index a = 0; a < inst.k.rows(); ++a) {
    const double f = inst.k.row(a).dot(w);
    loss += inst.y[a] ? std::log(1.0 + std::exp(-f)) : w_ref * std::log(1.0 + std::exp(f));
  }
  return loss + lambda * w.dot(inst.kc * w);
}

// Composite Simpson integral of the chi^2_k density from t to a far cutoff.
inline double chi2_tail_by_integration(double t, double k) {
  const auto pdf = [k](double x) {
    if (x <= 0.0) return 0.0;
    return std::exp((k / 2.0 - 1.0) * std::log(x) - x / 2.0 - (k / 2.0) * std::log(2.0) - std::lgamma(k / 2.0));
  };
  const double hi = t + 200.0;
  const int n = 200000;
  const double h = (hi - t) / n;
  double s = pdf(t) + pdf(hi);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * pdf(t + i * h);
  return s * h / 3.0;
}

// Standard normal upper tail by Simpson integration, and its inverse by bisection.
inline double normal_tail(double z) {
  const int n = 200000;
  const double hi = z + 40.0, h = (hi - z) / n;
  const auto pdf = [](double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); };
  double s = pdf(z) + pdf(hi);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * pdf(z + i * h);
  return s * h / 3.0;
}

inline double z_by_bisection(double p) {
  double lo = -10.0, hi = 10.0;
  for (int i = 0; i < 100; ++i) {
    const double mid = 0.5 * (lo + hi);
    (normal_tail(mid) > p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// chi^2_k samples as sums of squared normals.
inline std::vector<double> chi2_samples(int k, int n, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> normal;
  std::vector<double> out(static_cast<std::size_t>(n));
  for (auto& v : out) {
    v = 0.0;
    for (int j = 0; j < k; ++j) {
      const double x = normal(rng);
      v += x * x;
    }
  }
  return out;
}

}  // namespace novelscan::oracle
