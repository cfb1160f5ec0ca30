#include "novelscan/baselines.hpp"
#include "novelscan/calibration.hpp"
#include "novelscan/config.hpp"
#include "novelscan/embedding.hpp"
#include "novelscan/errors.hpp"
#include "novelscan/nplm.hpp"
#include "novelscan/pipeline.hpp"
#include "novelscan/synthetic.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace novelscan;

namespace {

LabeledDataset labeled(const Matrix& points, const std::vector<int>& labels, int n_classes) {
  LabeledDataset d{points, labels, n_classes};
  if (d.n_classes == 0)
    for (int l : labels) d.n_classes = std::max(d.n_classes, l + 1);
  d.validate();
  return d;
}

py::dict dataset_dict(const LabeledDataset& d) {
  py::dict out;
  out["points"] = d.points;
  out["labels"] = d.labels;
  out["n_classes"] = d.n_classes;
  return out;
}

}  // namespace

PYBIND11_MODULE(_novelscan, m) {
  m.doc() = "Embedding-space two-sample tests for anomaly detection";

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);

  // synthetic data
  m.def(
      "generate",
      [](int n_clusters, int dim, int noise_dims, int n_per_class, std::uint64_t seed, double target_z,
         int held_out_class) {
        const auto spec = make_synthetic_spec(n_clusters, dim, noise_dims, n_per_class, seed, target_z);
        std::optional<int> held;
        if (held_out_class >= 0) held = held_out_class;
        const auto data = generate_dataset(spec, held);
        return py::make_tuple(dataset_dict(data.background), dataset_dict(data.signal));
      },
      py::arg("n_clusters") = 5, py::arg("dim") = 4, py::arg("noise_dims") = 0, py::arg("n_per_class") = 10000,
      py::arg("seed") = 0, py::arg("target_z") = 3.5, py::arg("held_out_class") = -1,
      "Calibrated Gaussian clusters; returns (background, signal) dicts.");
  m.def(
      "min_pairwise_significance",
      [](int n_clusters, int dim, std::uint64_t seed, double target_z) {
        return min_pairwise_significance(make_synthetic_spec(n_clusters, dim, 0, 1, seed, target_z).clusters);
      },
      py::arg("n_clusters"), py::arg("dim"), py::arg("seed"), py::arg("target_z") = 3.5);

  // NPLM
  m.def("select_kernel_widths", &select_kernel_widths, py::arg("reference"), py::arg("subsample") = 2000,
        py::arg("seed") = 0);
  m.def("kernel_matrix", &kernel_matrix, py::arg("points"), py::arg("centers"), py::arg("width"));
  m.def(
      "nplm_test",
      [](const Matrix& reference, const Matrix& observed, std::vector<double> widths, double lambda, int n_centers,
         std::uint64_t seed) {
        NplmConfig cfg;
        cfg.widths = std::move(widths);
        cfg.lambda = lambda;
        cfg.n_centers = n_centers;
        const auto run = run_test(reference, observed, cfg, seed);
        std::vector<double> t;
        for (const auto& w : run.per_width) t.push_back(w.t);
        return t;
      },
      py::arg("reference"), py::arg("observed"), py::arg("widths"), py::arg("lambda_") = 1e-6,
      py::arg("n_centers") = 0, py::arg("seed") = 0, "Test statistic per kernel width.");

  // calibration
  m.def(
      "empirical_pvalue",
      [](double t_obs, std::vector<double> null) {
        const auto p = empirical_pvalue(t_obs, ToyEnsemble::from_values(std::move(null), 0.0, 0));
        return py::make_tuple(p.p, p.saturated);
      },
      py::arg("t_obs"), py::arg("null"));
  m.def("asymptotic_pvalue", &asymptotic_pvalue, py::arg("t_obs"), py::arg("dof"));
  m.def("z_score", &z_score, py::arg("p"));
  m.def(
      "combine_pvalues", [](const std::vector<double>& p) { return combine_pvalues(p); }, py::arg("p_values"));
  m.def(
      "fit_chi2_dof",
      [](std::vector<double> values) { return fit_chi2_dof(ToyEnsemble::from_values(std::move(values), 0.0, 0)).dof; },
      py::arg("values"));

  // baselines
  m.def(
      "mahalanobis_statistic",
      [](const Matrix& reference, const std::vector<int>& labels, const Matrix& observed) {
        return mahalanobis_statistic(ClassMoments::fit(labeled(reference, labels, 0)), observed);
      },
      py::arg("reference"), py::arg("labels"), py::arg("observed"));
  m.def("frechet_statistic", &frechet_statistic, py::arg("reference"), py::arg("observed"));
  m.def("nystrom_mmd", &nystrom_mmd, py::arg("reference"), py::arg("observed"), py::arg("width"),
        py::arg("centers"));

  // embedding
  m.def(
      "supcon_loss",
      [](const Matrix& z, const std::vector<int>& labels, double temperature) {
        const auto r = supcon_loss(z, labels, temperature);
        return py::make_tuple(r.loss, r.grad);
      },
      py::arg("projections"), py::arg("labels"), py::arg("temperature"));
  m.def(
      "embed",
      [](const std::filesystem::path& encoder, const Matrix& points) {
        return forward(load_encoder(encoder), points).embeddings;
      },
      py::arg("encoder_path"), py::arg("points"));

  // pipeline
  m.def(
      "run_pipeline",
      [](const std::string& config_text, const std::filesystem::path& out) {
        run_pipeline(ExperimentConfig::parse(config_text), out);
      },
      py::arg("config_text"), py::arg("out_dir"), py::call_guard<py::gil_scoped_release>(),
      "generate -> train -> scan -> report; config in the same text format as the CLI.");
  m.def("default_config_text", [] { return ExperimentConfig{}.to_text(); });
}
