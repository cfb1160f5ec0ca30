#pragma once

#include "novelscan/calibration.hpp"
#include "novelscan/dataset.hpp"
#include "novelscan/mlp.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace novelscan {

/// Per-class Gaussian moments of a labeled reference sample.
struct ClassMoments {
  std::vector<Vector> means;
  std::vector<Matrix> covariances;
  std::vector<int> classes;  // label of each entry
  bool ridged = false;       // some class had fewer than 5*d rows

  /// Classes with fewer than two rows are skipped.
  static ClassMoments fit(const LabeledDataset& reference);
};

/// Sum over observed rows of the minimum squared Mahalanobis distance to any class.
double mahalanobis_statistic(const ClassMoments& moments, const Matrix& observed);

struct ScoreClassifierConfig {
  int hidden = 32;
  int epochs = 30;
  int batch_size = 256;
  double learning_rate = 1e-3;
};

/// MLP d -> hidden -> hidden -> 1 on standardized inputs; score = logistic(output).
struct ScoreClassifier {
  Standardizer standardizer;
  Mlp net;

  Vector score(const Matrix& points) const;
};

/// Class-balanced binary cross-entropy training, signal labeled 1.
ScoreClassifier train_score_classifier(const Matrix& background, const Matrix& signal, std::uint64_t seed,
                                       const ScoreClassifierConfig& config = {});

/// Area under the ROC curve with signal as the positive class (ties count 1/2).
double auroc(std::span<const double> background_scores, std::span<const double> signal_scores);

struct ScoreTemplates {
  std::vector<double> bin_edges;
  std::vector<double> f_ref;
  std::vector<double> f_sig;

  std::size_t n_bins() const { return f_ref.size(); }
};

/// Counts per uniform bin on [0, 1]; a score of exactly 1 falls in the last bin.
std::vector<double> histogram(std::span<const double> scores, int n_bins);

/// Normalized score histograms. Empty reference bins get mass 1e-6 before
/// renormalization.
ScoreTemplates build_templates(std::span<const double> scores_ref, std::span<const double> scores_sig,
                               int n_bins = 20);

struct BinnedFit {
  double delta_chi2 = 0.0;
  double a_ref = 0.0;     // H1 background amplitude
  double a_sig = 0.0;     // H1 signal amplitude, >= 0
  double a_ref_h0 = 0.0;  // H0 amplitude
};

/// Extended Poisson binned likelihood: H0 = a1 f_ref, H1 = a1 f_ref + a2 f_sig
/// with a1, a2 >= 0. delta_chi2 = 2 (log L_H1 - log L_H0).
BinnedFit binned_delta_chi2(std::span<const double> observed_scores, const ScoreTemplates& templates);

/// One-sided p for a boundary-constrained amplitude: 0.5 * P(chi2_1 > delta), 1 at delta = 0.
double delta_chi2_pvalue(double delta_chi2);

/// |K_c^{-1/2} (mean_R k(x, centers) - mean_D k(x, centers))|^2, pseudo-inverse
/// square root with eigenvalues <= 1e-10 dropped.
double nystrom_mmd(const Matrix& reference, const Matrix& observed, double width, const Matrix& centers);

/// Squared Frechet distance between N(mu1, s1) and N(mu2, s2).
double frechet_distance(const Vector& mu1, const Matrix& s1, const Vector& mu2, const Matrix& s2);

/// Frechet distance between the Gaussian moments of two samples.
double frechet_statistic(const Matrix& reference, const Matrix& observed);

enum class Method { nplm, mahalanobis, mmd, frechet, supervised, ideal_supervised };

std::string method_name(Method m);
Method parse_method(const std::string& name);

/// Inputs a method's toy statistic may need beyond the samples themselves.
struct MethodContext {
  NplmConfig nplm;                       // widths and center count, shared with mmd
  const ScoreClassifier* classifier = nullptr;  // supervised kinds
  std::vector<double> signal_scores;     // scores of held-out signal rows for f_sig
  int n_bins = 20;
};

/// Toy statistic of a method; components are kernel widths for nplm and mmd,
/// a single value otherwise.
ToyStatistic method_statistic(Method m, const MethodContext& context, const ToySizes& sizes);

/// Component labels matching method_statistic: widths, or {0}.
std::vector<double> method_components(Method m, const MethodContext& context);

enum class AsymptoticModel { chi2_fit, half_chi2_1, gaussian };

AsymptoticModel asymptotic_model(Method m);

}  // namespace novelscan
