#pragma once

#include "novelscan/baselines.hpp"
#include "novelscan/calibration.hpp"
#include "novelscan/embedding.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace novelscan {

struct ExperimentConfig {
  // [synthetic]
  int n_clusters = 5;
  int dim = 4;
  int noise_dims = 0;
  int n_per_class = 10000;
  int held_out_class = 4;  // -1: none
  double target_z = 3.5;

  // [embedding]
  ContrastiveConfig contrastive;
  EncoderArchitecture architecture;
  double label_noise = 0.0;

  // [scan]
  ToySizes sizes;
  std::vector<double> f_signal{0.005, 0.01, 0.02, 0.05, 0.10};
  int n_toys = 500;
  int n_signal_toys = 0;  // 0: n_toys
  std::vector<Method> methods{Method::nplm,   Method::mahalanobis, Method::mmd,
                              Method::frechet, Method::supervised,  Method::ideal_supervised};
  double lambda = 1e-6;
  int n_centers = 0;
  int width_subsample = 2000;
  bool fixed_reference = false;
  int n_bins = 20;
  ScoreClassifierConfig classifier;

  // [run]
  std::uint64_t seed = 0;
  int threads = 1;
  std::string data_format = "bin";

  int signal_toys() const { return n_signal_toys > 0 ? n_signal_toys : n_toys; }

  /// Throws ConfigError.
  void validate() const;

  /// Resolved configuration in the input format; parse(to_text()) round-trips.
  std::string to_text() const;
  nlohmann::ordered_json to_json() const;

  /// Flat TOML-style text: [section] headers, `key = value` lines, `#` comments,
  /// lists as [a, b]. Unknown keys are errors; missing keys keep defaults.
  static ExperimentConfig parse(const std::string& text);
  static ExperimentConfig load(const std::filesystem::path& path);
};

}  // namespace novelscan
