#pragma once

#include "novelscan/baselines.hpp"
#include "novelscan/config.hpp"
#include "novelscan/embedding.hpp"
#include "novelscan/scan.hpp"
#include "novelscan/synthetic.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace novelscan {

/// Seed streams derived from the run seed.
enum class SeedStream : std::uint64_t { synthetic = 1, splits = 2, training = 3, scan = 4, classifier = 5,
                                        ideal_training = 6, widths = 7, label_noise = 8, reference = 9 };
std::uint64_t stream_seed(const ExperimentConfig& config, SeedStream stream);

/// Git blob hash: SHA-1 of "blob <size>\0" followed by the content, as hex.
std::string content_hash(const std::string& content);
std::string file_hash(const std::filesystem::path& path);

/// Background: train 50% / val 10% / test 40%. Signal: train 40% / template 20% / test 40%.
struct DataSplits {
  LabeledDataset background_train, background_val, background_test;
  LabeledDataset signal_train, signal_template, signal_test;
};

DataSplits split_data(const GeneratedData& data, std::uint64_t seed);

GeneratedData generate(const ExperimentConfig& config);

/// Writes background.<fmt>, signal.<fmt> and provenance.json. Returns the provenance.
nlohmann::ordered_json write_generated(const std::filesystem::path& dir, const GeneratedData& data,
                                       const ExperimentConfig& config);
GeneratedData load_generated(const std::filesystem::path& dir);

/// Trains on the background training split (plus signal_train when ideal),
/// after label noise on the training labels.
TrainResult train_encoder(const ExperimentConfig& config, const DataSplits& splits, bool ideal);

/// Embedded and standardized (by the background test pool) toy pools.
struct EmbeddedPools {
  Standardizer standardizer;
  LabeledDataset background;  // embedded background_test
  Matrix signal;              // embedded signal_test
};

EmbeddedPools embed_pools(const MlpEncoder& encoder, const DataSplits& splits);

/// Embedded, standardized rows of any split.
Matrix embed_points(const MlpEncoder& encoder, const Standardizer& standardizer, const LabeledDataset& data);

struct ScanOutputs {
  std::vector<MethodScan> scans;
  std::vector<double> widths;
  std::string summary;    // summary.csv content
  std::string z_summary;  // z_summary.csv content
};

/// Null and signal toys for every configured method. ideal_encoder is trained
/// on demand when ideal_supervised is requested and none is supplied.
ScanOutputs run_scan(const ExperimentConfig& config, const DataSplits& splits, const MlpEncoder& encoder,
                     const std::optional<MlpEncoder>& ideal_encoder = std::nullopt);

/// toys.csv, summary.csv, z_summary.csv, reports/<method>.json, provenance.json.
void write_scan(const std::filesystem::path& dir, const ScanOutputs& outputs, const ExperimentConfig& config);

/// Reads toys.csv from dir and writes z_curves.csv and per_width.csv.
void write_report(const std::filesystem::path& dir);

/// generate -> train -> scan -> report into dir.
void run_pipeline(const ExperimentConfig& config, const std::filesystem::path& dir);

}  // namespace novelscan
