#include "novelscan/nplm.hpp"

#include "novelscan/errors.hpp"
#include "novelscan/random.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

namespace novelscan {

namespace {

// Eigenvalues of the center kernel below this fraction of the largest are
// treated as null directions.
constexpr double kEigenFloor = 1e-10;
constexpr double kLocalDecrement = 1e-9;

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void check_labels(std::span<const int> y, Eigen::Index rows) {
  if (static_cast<Eigen::Index>(y.size()) != rows) throw InvalidArgument("nplm: label count does not match kernel rows");
  for (int v : y)
    if (v != 0 && v != 1) throw InvalidArgument("nplm: labels must be 0 (reference) or 1 (observed)");
}

void check_finite_outputs(const Vector& f) {
  for (Eigen::Index a = 0; a < f.size(); ++a) {
    if (!std::isfinite(f(a))) throw NumericalError("nplm: non-finite model output at row " + std::to_string(a));
  }
}

double data_loss(const Vector& f, std::span<const int> y, double w_ref) {
  double loss = 0.0;
  for (Eigen::Index a = 0; a < f.size(); ++a) {
    loss += y[static_cast<std::size_t>(a)] ? softplus(-f(a)) : w_ref * softplus(f(a));
  }
  return loss;
}

// Cholesky solve of (H + shift I) d = -g; the shift starts at zero and grows
// until the factorization succeeds and d is a descent direction.
Vector newton_step(const Matrix& hessian, const Vector& grad) {
  const double scale = std::max(hessian.diagonal().maxCoeff(), 1e-300);
  double shift = 0.0;
  for (int attempt = 0; attempt < 40; ++attempt) {
    Matrix shifted = hessian;
    shifted.diagonal().array() += shift;
    const Eigen::LLT<Matrix> llt(shifted);
    if (llt.info() == Eigen::Success) {
      Vector step = llt.solve(-grad);
      if (step.allFinite() && grad.dot(step) < 0.0) return step;
    }
    shift = shift == 0.0 ? 1e-14 * scale : shift * 10.0;
  }
  throw NumericalError("nplm fit: Hessian could not be regularized into a descent direction");
}

}  // namespace

Vector KernelModel::evaluate(const Matrix& points) const { return kernel_matrix(points, centers, width) * weights; }

void NplmConfig::validate() const {
  if (n_centers < 0) throw InvalidArgument("nplm config: n_centers must be >= 0");
  if (!(lambda > 0.0)) throw InvalidArgument("nplm config: lambda must be positive");
  if (widths.empty()) throw InvalidArgument("nplm config: widths must be non-empty");
  for (double w : widths)
    if (!(w > 0.0)) throw InvalidArgument("nplm config: widths must be positive");
  if (w_ref < 0.0) throw InvalidArgument("nplm config: w_ref must be >= 0");
  if (max_iterations < 1) throw InvalidArgument("nplm config: max_iterations must be >= 1");
  if (!(grad_tolerance > 0.0)) throw InvalidArgument("nplm config: grad_tolerance must be positive");
}

std::vector<double> select_kernel_widths(const Matrix& reference, int subsample, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(reference.rows());
  if (n < 2) throw InvalidArgument("select_kernel_widths: need at least 2 points");
  if (subsample < 2) throw InvalidArgument("select_kernel_widths: subsample must be >= 2");
  Rng rng(seed);
  const auto rows = sample_without_replacement(n, std::min(n, static_cast<std::size_t>(subsample)), rng);
  std::vector<double> distances;
  distances.reserve(rows.size() * (rows.size() - 1) / 2);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = i + 1; j < rows.size(); ++j) {
      const double d = (reference.row(static_cast<Eigen::Index>(rows[i])) -
                        reference.row(static_cast<Eigen::Index>(rows[j])))
                           .norm();
      if (d > 0.0) distances.push_back(d);
    }
  }
  if (distances.empty()) throw DegenerateData("select_kernel_widths: all sampled points coincide");
  std::sort(distances.begin(), distances.end());
  const auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(distances.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, distances.size() - 1);
    return distances[lo] + (pos - static_cast<double>(lo)) * (distances[hi] - distances[lo]);
  };
  const double q99 = quantile(0.99);
  return {quantile(0.01), quantile(0.25), quantile(0.50), quantile(0.75), q99, 2.0 * q99};
}

int default_n_centers(std::size_t n_ref, std::size_t n_data) {
  return static_cast<int>(std::lround(std::sqrt(static_cast<double>(n_ref + n_data))));
}

Matrix build_centers(const Matrix& pool, int n_centers, std::uint64_t seed) {
  if (n_centers < 1) throw InvalidArgument("build_centers: need at least one center");
  if (static_cast<Eigen::Index>(n_centers) > pool.rows()) {
    throw InvalidArgument("build_centers: " + std::to_string(n_centers) + " centers requested from a pool of " +
                          std::to_string(pool.rows()));
  }
  Rng rng(seed);
  const auto rows = sample_without_replacement(static_cast<std::size_t>(pool.rows()),
                                               static_cast<std::size_t>(n_centers), rng);
  Matrix centers(n_centers, pool.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    centers.row(static_cast<Eigen::Index>(i)) = pool.row(static_cast<Eigen::Index>(rows[i]));
  }
  return centers;
}

Matrix squared_distances(const Matrix& points, const Matrix& centers) {
  if (points.cols() != centers.cols()) throw InvalidArgument("squared_distances: dimension mismatch");
  Matrix d2(points.rows(), centers.rows());
  for (Eigen::Index a = 0; a < points.rows(); ++a) {
    for (Eigen::Index i = 0; i < centers.rows(); ++i) {
      double s = 0.0;
      for (Eigen::Index k = 0; k < points.cols(); ++k) {
        const double diff = points(a, k) - centers(i, k);
        s += diff * diff;
      }
      d2(a, i) = s;
    }
  }
  return d2;
}

namespace {

Matrix gaussian_from_squared(const Matrix& d2, double width) {
  if (!(width > 0.0)) throw InvalidArgument("kernel width must be positive");
  return (-d2.array() / (2.0 * width * width)).exp().matrix();
}

}  // namespace

Matrix kernel_matrix(const Matrix& points, const Matrix& centers, double width) {
  return gaussian_from_squared(squared_distances(points, centers), width);
}

ObjectiveValue nplm_objective(const Vector& w, const Matrix& kernel, std::span<const int> y, double w_ref,
                              double lambda, const Matrix& center_kernel) {
  check_labels(y, kernel.rows());
  if (w.size() != kernel.cols() || center_kernel.rows() != w.size() || center_kernel.cols() != w.size()) {
    throw InvalidArgument("nplm_objective: shape mismatch");
  }
  const Vector f = kernel * w;
  check_finite_outputs(f);
  Vector residual(f.size());
  for (Eigen::Index a = 0; a < f.size(); ++a) {
    residual(a) = y[static_cast<std::size_t>(a)] ? -sigmoid(-f(a)) : w_ref * sigmoid(f(a));
  }
  const Vector kc_w = center_kernel * w;
  ObjectiveValue out;
  out.loss = data_loss(f, y, w_ref) + lambda * w.dot(kc_w);
  out.grad = kernel.transpose() * residual + 2.0 * lambda * kc_w;
  return out;
}

FitResult fit_weights(const Matrix& kernel, const Matrix& center_kernel, std::span<const int> y, double w_ref,
                      double lambda, int max_iterations, double grad_tolerance) {
  check_labels(y, kernel.rows());
  if (center_kernel.rows() != kernel.cols() || center_kernel.cols() != kernel.cols()) {
    throw InvalidArgument("nplm fit: center kernel shape mismatch");
  }
  // Whitened coordinates beta = K_c^{1/2} w, restricted to the numerically
  // non-null eigenspace of K_c: f = Phi beta and w^T K_c w = |beta|^2.
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(center_kernel);
  if (eig.info() != Eigen::Success) throw NumericalError("nplm fit: center kernel eigendecomposition failed");
  const double top = eig.eigenvalues().maxCoeff();
  if (!(top > 0.0)) throw DegenerateData("nplm fit: center kernel is zero");
  std::vector<Eigen::Index> kept;
  for (Eigen::Index i = 0; i < eig.eigenvalues().size(); ++i)
    if (eig.eigenvalues()(i) > kEigenFloor * top) kept.push_back(i);
  const auto r = static_cast<Eigen::Index>(kept.size());
  Matrix whiten(kernel.cols(), r);
  for (Eigen::Index k = 0; k < r; ++k) {
    whiten.col(k) = eig.eigenvectors().col(kept[static_cast<std::size_t>(k)]) /
                    std::sqrt(eig.eigenvalues()(kept[static_cast<std::size_t>(k)]));
  }
  const Matrix features = kernel * whiten;

  const Eigen::Index n = kernel.rows();
  FitResult out;
  Vector beta = Vector::Zero(r);
  Vector f = Vector::Zero(n);
  Vector residual(n), curvature(n);

  double loss = data_loss(f, y, w_ref);
  for (int it = 0;; ++it) {
    for (Eigen::Index a = 0; a < n; ++a) {
      const double s = sigmoid(f(a));
      const bool observed = y[static_cast<std::size_t>(a)] != 0;
      residual(a) = observed ? s - 1.0 : w_ref * s;
      curvature(a) = (observed ? 1.0 : w_ref) * s * (1.0 - s);
    }
    const Vector grad = features.transpose() * residual + 2.0 * lambda * beta;
    out.objective_trace.push_back(loss);
    out.grad_norm = grad.norm();
    out.iterations = it;
    if (out.grad_norm < grad_tolerance) break;
    if (it >= max_iterations) {
      throw ConvergenceFailure("nplm fit: no convergence after " + std::to_string(max_iterations) +
                                   " iterations (grad norm " + std::to_string(out.grad_norm) + ")",
                               out.grad_norm);
    }

    const Matrix scaled = features.array().colwise() * curvature.array().sqrt();
    Matrix hessian = Matrix::Identity(r, r) * (2.0 * lambda);
    hessian.selfadjointView<Eigen::Lower>().rankUpdate(scaled.transpose());
    hessian.triangularView<Eigen::StrictlyUpper>() = hessian.transpose();

    const Vector step = newton_step(hessian, grad);
    const Vector f_step = features * step;
    const double slope = grad.dot(step);
    const double b_b = beta.squaredNorm(), b_d = beta.dot(step), d_d = step.squaredNorm();

    double alpha = 1.0;
    double trial = 0.0;
    Vector f_trial;
    bool accepted = false;
    // A Newton decrement below the rounding noise of the summed loss means the
    // full step is inside the quadratic-convergence region; Armijo on the loss
    // cannot resolve it there.
    const bool local = -slope < kLocalDecrement * std::max(1.0, std::abs(loss));
    for (int ls = 0; ls < 60; ++ls, alpha *= 0.5) {
      f_trial = f + alpha * f_step;
      trial = data_loss(f_trial, y, w_ref) + lambda * (b_b + 2.0 * alpha * b_d + alpha * alpha * d_d);
      if (std::isfinite(trial) && (local || trial <= loss + 1e-4 * alpha * slope)) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      throw ConvergenceFailure("nplm fit: line search failed (grad norm " + std::to_string(out.grad_norm) + ")",
                               out.grad_norm);
    }
    beta += alpha * step;
    f = std::move(f_trial);
    check_finite_outputs(f);
    loss = trial;
  }
  out.weights = whiten * beta;
  return out;
}

ModelFit fit(const Matrix& reference, const Matrix& observed, double width, const NplmConfig& config,
             std::uint64_t seed) {
  if (reference.cols() != observed.cols()) throw InvalidArgument("nplm fit: dimension mismatch");
  if (reference.rows() == 0 || observed.rows() == 0) throw InvalidArgument("nplm fit: empty sample");
  Matrix pool(reference.rows() + observed.rows(), reference.cols());
  pool << reference, observed;
  const int m = config.n_centers > 0 ? config.n_centers
                                     : default_n_centers(static_cast<std::size_t>(reference.rows()),
                                                         static_cast<std::size_t>(observed.rows()));
  ModelFit out;
  out.model.centers = build_centers(pool, m, seed);
  out.model.width = width;
  std::vector<int> y(static_cast<std::size_t>(pool.rows()), 0);
  std::fill(y.begin() + reference.rows(), y.end(), 1);
  const double w_ref = config.w_ref > 0.0 ? config.w_ref
                                          : static_cast<double>(observed.rows()) / static_cast<double>(reference.rows());
  out.fit = fit_weights(kernel_matrix(pool, out.model.centers, width),
                        kernel_matrix(out.model.centers, out.model.centers, width), y, w_ref, config.lambda,
                        config.max_iterations, config.grad_tolerance);
  out.model.weights = out.fit.weights;
  return out;
}

double test_statistic_from_outputs(const Vector& f_reference, const Vector& f_observed, double w_ref) {
  double ref_term = 0.0;
  for (Eigen::Index a = 0; a < f_reference.size(); ++a) {
    const double e = std::exp(f_reference(a));
    if (!std::isfinite(e)) throw NumericalError("test_statistic: exp(f) overflows at reference row " + std::to_string(a));
    ref_term += w_ref * (e - 1.0);
  }
  return 2.0 * (f_observed.sum() - ref_term);
}

double test_statistic(const KernelModel& model, const Matrix& reference, const Matrix& observed, double w_ref) {
  return test_statistic_from_outputs(model.evaluate(reference), model.evaluate(observed), w_ref);
}

nlohmann::ordered_json TestRun::records() const {
  nlohmann::ordered_json out = nlohmann::ordered_json::array();
  for (const auto& r : per_width) {
    nlohmann::ordered_json j;
    j["width"] = r.width;
    j["t"] = r.t;
    j["n_ref"] = n_ref;
    j["n_data"] = n_data;
    j["w_ref"] = w_ref;
    j["lambda"] = lambda;
    j["iterations"] = r.iterations;
    j["grad_norm"] = r.grad_norm;
    j["seed"] = seed;
    out.push_back(j);
  }
  return out;
}

TestRun run_test(const Matrix& reference, const Matrix& observed, const NplmConfig& config, std::uint64_t seed) {
  config.validate();
  if (reference.cols() != observed.cols()) throw InvalidArgument("run_test: dimension mismatch");
  if (reference.rows() == 0 || observed.rows() == 0) throw InvalidArgument("run_test: empty sample");

  TestRun run;
  run.n_ref = static_cast<std::size_t>(reference.rows());
  run.n_data = static_cast<std::size_t>(observed.rows());
  run.w_ref = config.w_ref > 0.0 ? config.w_ref : static_cast<double>(run.n_data) / static_cast<double>(run.n_ref);
  run.lambda = config.lambda;
  run.seed = seed;

  Matrix pool(reference.rows() + observed.rows(), reference.cols());
  pool << reference, observed;
  const int m = config.n_centers > 0 ? config.n_centers : default_n_centers(run.n_ref, run.n_data);
  const Matrix centers = build_centers(pool, m, seed);
  const Matrix d2 = squared_distances(pool, centers);
  const Matrix d2_centers = squared_distances(centers, centers);
  std::vector<int> y(static_cast<std::size_t>(pool.rows()), 0);
  std::fill(y.begin() + reference.rows(), y.end(), 1);

  for (double width : config.widths) {
    try {
      const Matrix kernel = gaussian_from_squared(d2, width);
      const FitResult fr = fit_weights(kernel, gaussian_from_squared(d2_centers, width), y, run.w_ref, config.lambda,
                                       config.max_iterations, config.grad_tolerance);
      const Vector f = kernel * fr.weights;
      const double t = test_statistic_from_outputs(f.head(reference.rows()), f.tail(observed.rows()), run.w_ref);
      run.per_width.push_back({width, t, fr.iterations, fr.grad_norm});
    } catch (const Error& e) {
      rethrow_with_context(e, "width " + std::to_string(width));
    }
  }
  return run;
}

void save_kernel_model(const std::filesystem::path& path, const KernelModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write("NVKM", 4);
  const auto m = static_cast<std::uint32_t>(model.centers.rows());
  const auto d = static_cast<std::uint32_t>(model.centers.cols());
  out.write(reinterpret_cast<const char*>(&m), sizeof(m));
  out.write(reinterpret_cast<const char*>(&d), sizeof(d));
  out.write(reinterpret_cast<const char*>(&model.width), sizeof(double));
  out.write(reinterpret_cast<const char*>(model.centers.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(model.centers.size())));
  out.write(reinterpret_cast<const char*>(model.weights.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(model.weights.size())));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

KernelModel load_kernel_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  char magic[4];
  std::uint32_t m = 0, d = 0;
  KernelModel model;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&m), sizeof(m));
  in.read(reinterpret_cast<char*>(&d), sizeof(d));
  in.read(reinterpret_cast<char*>(&model.width), sizeof(double));
  if (!in || std::string(magic, 4) != "NVKM") throw IoError("'" + path.string() + "' is not an NVKM file");
  model.centers.resize(m, d);
  model.weights.resize(m);
  in.read(reinterpret_cast<char*>(model.centers.data()), static_cast<std::streamsize>(sizeof(double) * m * d));
  in.read(reinterpret_cast<char*>(model.weights.data()), static_cast<std::streamsize>(sizeof(double) * m));
  if (!in) throw IoError("truncated NVKM file '" + path.string() + "'");
  return model;
}

}  // namespace novelscan
