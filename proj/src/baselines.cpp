#include "novelscan/baselines.hpp"

#include "novelscan/errors.hpp"
#include "novelscan/nplm.hpp"
#include "novelscan/random.hpp"

#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>

namespace novelscan {

namespace {

Matrix sample_covariance(const Matrix& x, const Vector& mean) {
  const Matrix centered = x.rowwise() - mean.transpose();
  Matrix cov = (centered.transpose() * centered) / static_cast<double>(x.rows() - 1);
  return 0.5 * (cov + cov.transpose());
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

ClassMoments ClassMoments::fit(const LabeledDataset& reference) {
  reference.validate();
  const Eigen::Index d = reference.dim();
  ClassMoments m;
  std::vector<std::vector<std::size_t>> rows(static_cast<std::size_t>(reference.n_classes));
  for (std::size_t r = 0; r < reference.size(); ++r) rows[static_cast<std::size_t>(reference.labels[r])].push_back(r);
  for (std::size_t c = 0; c < rows.size(); ++c) {
    if (rows[c].size() < 2) continue;
    const Matrix x = reference.select(rows[c]).points;
    Vector mean = x.colwise().mean().transpose();
    Matrix cov = sample_covariance(x, mean);
    if (static_cast<Eigen::Index>(rows[c].size()) < 5 * d) {
      cov.diagonal().array() += 1e-6 * cov.trace() / static_cast<double>(d);
      m.ridged = true;
    }
    m.means.push_back(std::move(mean));
    m.covariances.push_back(std::move(cov));
    m.classes.push_back(static_cast<int>(c));
  }
  if (m.means.empty()) throw DegenerateData("class moments: no class has two or more rows");
  return m;
}

double mahalanobis_statistic(const ClassMoments& moments, const Matrix& observed) {
  if (moments.means.empty()) throw InvalidArgument("mahalanobis_statistic: no class moments");
  if (observed.cols() != moments.means.front().size()) throw InvalidArgument("mahalanobis_statistic: dimension mismatch");
  Vector best = Vector::Constant(observed.rows(), std::numeric_limits<double>::infinity());
  for (std::size_t c = 0; c < moments.means.size(); ++c) {
    const Eigen::LLT<Eigen::MatrixXd> llt(moments.covariances[c]);
    if (llt.info() != Eigen::Success) {
      throw NumericalError("mahalanobis_statistic: covariance of class " + std::to_string(moments.classes[c]) +
                           " is not positive definite");
    }
    Eigen::MatrixXd diff = (observed.rowwise() - moments.means[c].transpose()).transpose();
    llt.matrixL().solveInPlace(diff);
    best = best.cwiseMin(diff.colwise().squaredNorm().transpose());
  }
  return best.sum();
}

Vector ScoreClassifier::score(const Matrix& points) const {
  const Matrix out = net.forward(standardizer.apply(points));
  Vector s(out.rows());
  for (Eigen::Index i = 0; i < out.rows(); ++i) s(i) = sigmoid(out(i, 0));
  return s;
}

ScoreClassifier train_score_classifier(const Matrix& background, const Matrix& signal, std::uint64_t seed,
                                       const ScoreClassifierConfig& config) {
  if (background.rows() == 0 || signal.rows() == 0) {
    throw InvalidArgument("train_score_classifier: both background and signal rows are required");
  }
  if (background.cols() != signal.cols()) throw InvalidArgument("train_score_classifier: dimension mismatch");
  if (config.hidden < 1 || config.epochs < 1 || config.batch_size < 1 || !(config.learning_rate > 0.0)) {
    throw InvalidArgument("train_score_classifier: invalid configuration");
  }
  const Eigen::Index nb = background.rows(), ns = signal.rows(), n = nb + ns;
  Matrix x(n, background.cols());
  x << background, signal;
  ScoreClassifier clf;
  clf.standardizer = Standardizer::fit(x);
  x = clf.standardizer.apply(x);

  Rng rng(seed);
  const std::array<int, 4> widths{static_cast<int>(x.cols()), config.hidden, config.hidden, 1};
  clf.net = Mlp::he_uniform(widths, rng);
  Optimizer opt(Optimizer::Kind::adam);
  // Balanced: each class carries half of the total weight.
  const double w_bkg = static_cast<double>(n) / (2.0 * static_cast<double>(nb));
  const double w_sig = static_cast<double>(n) / (2.0 * static_cast<double>(ns));

  std::vector<std::size_t> order(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle(order, rng);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      Matrix batch(static_cast<Eigen::Index>(end - start), x.cols());
      std::vector<char> is_signal(end - start);
      for (std::size_t k = start; k < end; ++k) {
        batch.row(static_cast<Eigen::Index>(k - start)) = x.row(static_cast<Eigen::Index>(order[k]));
        is_signal[k - start] = static_cast<Eigen::Index>(order[k]) >= nb;
      }
      Mlp::Tape tape;
      const Matrix logits = clf.net.forward(batch, tape);
      Matrix grad(logits.rows(), 1);
      const double scale = 1.0 / static_cast<double>(logits.rows());
      for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const bool sig = is_signal[static_cast<std::size_t>(i)] != 0;
        grad(i, 0) = scale * (sig ? w_sig : w_bkg) * (sigmoid(logits(i, 0)) - (sig ? 1.0 : 0.0));
      }
      auto grads = clf.net.zero_like();
      clf.net.backward(tape, grad, grads);
      opt.step(clf.net, grads, config.learning_rate, 0);
    }
    if (!clf.net.all_finite()) {
      throw NumericalError("train_score_classifier: non-finite weights after epoch " + std::to_string(epoch));
    }
  }
  return clf;
}

double auroc(std::span<const double> background_scores, std::span<const double> signal_scores) {
  if (background_scores.empty() || signal_scores.empty()) throw InvalidArgument("auroc: empty score set");
  std::vector<double> bkg(background_scores.begin(), background_scores.end());
  std::sort(bkg.begin(), bkg.end());
  double wins = 0.0;
  for (double s : signal_scores) {
    const auto lo = std::lower_bound(bkg.begin(), bkg.end(), s);
    const auto hi = std::upper_bound(lo, bkg.end(), s);
    wins += static_cast<double>(lo - bkg.begin()) + 0.5 * static_cast<double>(hi - lo);
  }
  return wins / (static_cast<double>(bkg.size()) * static_cast<double>(signal_scores.size()));
}

std::vector<double> histogram(std::span<const double> scores, int n_bins) {
  if (n_bins < 1) throw InvalidArgument("histogram: n_bins must be positive");
  std::vector<double> counts(static_cast<std::size_t>(n_bins), 0.0);
  for (double s : scores) {
    if (!(s >= 0.0 && s <= 1.0)) throw InvalidArgument("histogram: score outside [0, 1]");
    const auto b = std::min(static_cast<std::size_t>(s * n_bins), counts.size() - 1);
    counts[b] += 1.0;
  }
  return counts;
}

ScoreTemplates build_templates(std::span<const double> scores_ref, std::span<const double> scores_sig, int n_bins) {
  if (n_bins < 2) throw InvalidArgument("build_templates: n_bins must be >= 2");
  if (scores_ref.empty()) throw InvalidArgument("build_templates: no reference scores");
  if (scores_sig.empty()) throw InvalidArgument("build_templates: no signal scores");
  ScoreTemplates t;
  for (int b = 0; b <= n_bins; ++b) t.bin_edges.push_back(static_cast<double>(b) / n_bins);
  t.f_ref = histogram(scores_ref, n_bins);
  t.f_sig = histogram(scores_sig, n_bins);
  const auto normalize = [](std::vector<double>& v) {
    double total = 0.0;
    for (double x : v) total += x;
    for (double& x : v) x /= total;
  };
  normalize(t.f_ref);
  for (double& x : t.f_ref) x = std::max(x, 1e-6);
  normalize(t.f_ref);
  normalize(t.f_sig);
  return t;
}

BinnedFit binned_delta_chi2(std::span<const double> observed_scores, const ScoreTemplates& templates) {
  const std::size_t nb = templates.n_bins();
  if (nb < 2 || templates.f_sig.size() != nb) throw InvalidArgument("binned_delta_chi2: malformed templates");
  const std::vector<double> counts = histogram(observed_scores, static_cast<int>(nb));
  const double total = static_cast<double>(observed_scores.size());

  // Profiling the total amplitude gives a1 + a2 = N; the remaining fit is the
  // signal fraction phi in [0, 1] maximizing sum_b n_b log(1 + phi (r_b - 1)),
  // r_b = f_sig / f_ref. The objective is concave in phi.
  std::vector<double> ratio(nb);
  for (std::size_t b = 0; b < nb; ++b) ratio[b] = templates.f_sig[b] / templates.f_ref[b];
  const auto gain = [&](double phi) {
    double s = 0.0;
    for (std::size_t b = 0; b < nb; ++b)
      if (counts[b] > 0.0) s += counts[b] * std::log1p(phi * (ratio[b] - 1.0));
    return s;
  };
  const auto slope = [&](double phi) {
    double s = 0.0;
    for (std::size_t b = 0; b < nb; ++b)
      if (counts[b] > 0.0) s += counts[b] * (ratio[b] - 1.0) / (1.0 + phi * (ratio[b] - 1.0));
    return s;
  };

  double phi = 0.0;
  if (total > 0.0 && slope(0.0) > 0.0) {
    const double d1 = slope(1.0);
    if (std::isnan(d1) || d1 < 0.0) {
      double lo = 0.0, hi = 1.0;
      for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
        const double mid = 0.5 * (lo + hi);
        (slope(mid) > 0.0 ? lo : hi) = mid;
      }
      phi = 0.5 * (lo + hi);
    } else {
      phi = 1.0;
    }
  }
  double g = phi > 0.0 ? gain(phi) : 0.0;
  if (!std::isfinite(g)) {
    std::string diag;
    for (std::size_t b = 0; b < nb; ++b) {
      diag += " [" + std::to_string(b) + ": n=" + std::to_string(counts[b]) + " f_ref=" +
              std::to_string(templates.f_ref[b]) + " f_sig=" + std::to_string(templates.f_sig[b]) + "]";
    }
    throw FitFailure("binned_delta_chi2: non-finite likelihood at phi=" + std::to_string(phi) + ";" + diag);
  }
  if (g < 0.0) {
    phi = 0.0;
    g = 0.0;
  }
  BinnedFit fit;
  fit.delta_chi2 = 2.0 * g;
  fit.a_sig = phi * total;
  fit.a_ref = total - fit.a_sig;
  fit.a_ref_h0 = total;
  return fit;
}

double delta_chi2_pvalue(double delta_chi2) {
  if (std::isnan(delta_chi2)) throw InvalidArgument("delta_chi2_pvalue: NaN");
  if (delta_chi2 <= 0.0) return 1.0;
  return 0.5 * boost::math::gamma_q(0.5, delta_chi2 / 2.0);
}

double nystrom_mmd(const Matrix& reference, const Matrix& observed, double width, const Matrix& centers) {
  if (!(width > 0.0)) throw InvalidArgument("nystrom_mmd: width must be positive");
  if (centers.rows() < 1) throw InvalidArgument("nystrom_mmd: need at least one center");
  if (reference.rows() == 0 || observed.rows() == 0) throw InvalidArgument("nystrom_mmd: empty sample");
  const Vector diff = kernel_matrix(reference, centers, width).colwise().mean().transpose() -
                      kernel_matrix(observed, centers, width).colwise().mean().transpose();
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(kernel_matrix(centers, centers, width));
  if (eig.info() != Eigen::Success) throw NumericalError("nystrom_mmd: eigendecomposition failed");
  const Vector projected = eig.eigenvectors().transpose() * diff;
  double mmd = 0.0;
  int rank = 0;
  for (Eigen::Index i = 0; i < projected.size(); ++i) {
    const double lambda = eig.eigenvalues()(i);
    if (lambda > 1e-10) {
      mmd += projected(i) * projected(i) / lambda;
      ++rank;
    }
  }
  if (rank == 0) throw DegenerateData("nystrom_mmd: center kernel matrix is numerically rank 0");
  return mmd;
}

namespace {

void check_symmetric(const Matrix& s, const char* name) {
  if (s.rows() != s.cols()) throw InvalidArgument(std::string("frechet_distance: ") + name + " is not square");
  if ((s - s.transpose()).cwiseAbs().maxCoeff() > 1e-9) {
    throw InvalidArgument(std::string("frechet_distance: ") + name + " is not symmetric");
  }
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& s) {
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s);
  if (eig.info() != Eigen::Success) throw NumericalError("frechet_distance: eigendecomposition failed");
  const Vector root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const Vector& mu1, const Matrix& s1, const Vector& mu2, const Matrix& s2) {
  check_symmetric(s1, "S1");
  check_symmetric(s2, "S2");
  if (mu1.size() != mu2.size() || s1.rows() != mu1.size() || s2.rows() != mu1.size()) {
    throw InvalidArgument("frechet_distance: dimension mismatch");
  }
  const Eigen::MatrixXd a = 0.5 * (s1 + s1.transpose());
  const Eigen::MatrixXd b = 0.5 * (s2 + s2.transpose());
  const Eigen::MatrixXd root_a = psd_sqrt(a);
  Eigen::MatrixXd inner = root_a * b * root_a;
  inner = 0.5 * (inner + inner.transpose());
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(inner, Eigen::EigenvaluesOnly);
  if (eig.info() != Eigen::Success) throw NumericalError("frechet_distance: eigendecomposition failed");
  const double cross = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  return (mu1 - mu2).squaredNorm() + a.trace() + b.trace() - 2.0 * cross;
}

double frechet_statistic(const Matrix& reference, const Matrix& observed) {
  if (reference.rows() < 2 || observed.rows() < 2) throw InvalidArgument("frechet_statistic: need two rows per sample");
  const Vector mu_r = reference.colwise().mean().transpose();
  const Vector mu_d = observed.colwise().mean().transpose();
  return frechet_distance(mu_r, sample_covariance(reference, mu_r), mu_d, sample_covariance(observed, mu_d));
}

std::string method_name(Method m) {
  switch (m) {
    case Method::nplm: return "nplm";
    case Method::mahalanobis: return "mahalanobis";
    case Method::mmd: return "mmd";
    case Method::frechet: return "frechet";
    case Method::supervised: return "supervised";
    case Method::ideal_supervised: return "ideal_supervised";
  }
  return "unknown";
}

Method parse_method(const std::string& name) {
  for (Method m : {Method::nplm, Method::mahalanobis, Method::mmd, Method::frechet, Method::supervised,
                   Method::ideal_supervised}) {
    if (method_name(m) == name) return m;
  }
  throw ConfigError("unknown method '" + name + "'");
}

std::vector<double> method_components(Method m, const MethodContext& context) {
  if (m == Method::nplm || m == Method::mmd) return context.nplm.widths;
  return {0.0};
}

AsymptoticModel asymptotic_model(Method m) {
  switch (m) {
    case Method::nplm: return AsymptoticModel::chi2_fit;
    case Method::supervised:
    case Method::ideal_supervised: return AsymptoticModel::half_chi2_1;
    default: return AsymptoticModel::gaussian;
  }
}

ToyStatistic method_statistic(Method m, const MethodContext& context, const ToySizes& sizes) {
  switch (m) {
    case Method::nplm:
      return nplm_statistic(context.nplm, sizes);
    case Method::mahalanobis:
      return [](const LabeledDataset& reference, const Matrix& observed, std::uint64_t) {
        return std::vector<double>{mahalanobis_statistic(ClassMoments::fit(reference), observed)};
      };
    case Method::frechet:
      return [](const LabeledDataset& reference, const Matrix& observed, std::uint64_t) {
        return std::vector<double>{frechet_statistic(reference.points, observed)};
      };
    case Method::mmd: {
      context.nplm.validate();
      const NplmConfig cfg = context.nplm;
      return [cfg](const LabeledDataset& reference, const Matrix& observed, std::uint64_t seed) {
        // Same pool, center count and seed as the NPLM fit of this toy.
        Matrix pool(reference.points.rows() + observed.rows(), observed.cols());
        pool << reference.points, observed;
        const int n_centers = cfg.n_centers > 0 ? cfg.n_centers
                                                : default_n_centers(reference.size(),
                                                                    static_cast<std::size_t>(observed.rows()));
        const Matrix centers = build_centers(pool, n_centers, seed);
        std::vector<double> out;
        for (double w : cfg.widths) out.push_back(nystrom_mmd(reference.points, observed, w, centers));
        return out;
      };
    }
    case Method::supervised:
    case Method::ideal_supervised: {
      if (context.classifier == nullptr) throw InvalidArgument(method_name(m) + " needs a trained score classifier");
      if (context.signal_scores.empty()) throw InvalidArgument(method_name(m) + " needs signal template scores");
      const ScoreClassifier* clf = context.classifier;
      const std::vector<double> sig = context.signal_scores;
      const int n_bins = context.n_bins;
      return [clf, sig, n_bins](const LabeledDataset& reference, const Matrix& observed, std::uint64_t) {
        const Vector s_ref = clf->score(reference.points);
        const Vector s_obs = clf->score(observed);
        const auto templates = build_templates(std::span<const double>(s_ref.data(), static_cast<std::size_t>(s_ref.size())),
                                               sig, n_bins);
        return std::vector<double>{
            binned_delta_chi2(std::span<const double>(s_obs.data(), static_cast<std::size_t>(s_obs.size())), templates)
                .delta_chi2};
      };
    }
  }
  (void)sizes;
  throw InvalidArgument("unknown method");
}

}  // namespace novelscan
