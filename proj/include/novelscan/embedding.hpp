#pragma once

#include "novelscan/dataset.hpp"
#include "novelscan/mlp.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace novelscan {

/// Encoder f (input -> embedding), projection head g (embedding -> projection)
/// and an auxiliary classifier head (embedding -> class logits).
struct MlpEncoder {
  Mlp encoder;
  Mlp projector;
  Mlp classifier;

  int input_dim() const { return encoder.input_dim(); }
  int embed_dim() const { return encoder.output_dim(); }
  int n_classes() const { return classifier.output_dim(); }
  std::size_t parameter_count() const {
    return encoder.parameter_count() + projector.parameter_count() + classifier.parameter_count();
  }
};

struct EncoderArchitecture {
  std::vector<int> hidden{48, 48, 48, 48};
  int embed_dim = 4;
  int projector_hidden = 32;
  int projection_dim = 4;
  int classifier_hidden = 32;
};

MlpEncoder make_encoder(int input_dim, int n_classes, const EncoderArchitecture& arch, std::uint64_t seed);

struct ForwardResult {
  Matrix embeddings;
  Matrix projections;
  Matrix logits;
};

ForwardResult forward(const MlpEncoder& model, const Matrix& batch);

enum class Reduction { sum, mean };

struct LossResult {
  double loss = 0.0;
  Matrix grad;
  int n_anchors = 0;
};

/// Supervised contrastive loss over cosine similarities. Anchors with no
/// same-class partner are skipped; a batch where every anchor is skipped is
/// rejected. Reduction::mean divides by the number of contributing anchors.
LossResult supcon_loss(const Matrix& projections, std::span<const int> labels, double temperature,
                       Reduction reduction = Reduction::sum);

/// SimCLR loss. Rows 2k and 2k+1 are a positive pair; row 2k is the anchor of
/// pair k and the denominator runs over every other row of the batch.
LossResult simclr_loss(const Matrix& projections, double temperature, Reduction reduction = Reduction::sum);

/// Mean softmax cross-entropy.
LossResult ce_loss(const Matrix& logits, std::span<const int> labels);

enum class ContrastiveKind { supcon, simclr };

struct ContrastiveConfig {
  ContrastiveKind loss = ContrastiveKind::supcon;
  double temperature = 0.01;
  double lambda_ce = 0.5;
  double learning_rate = 0.001;
  double lr_floor = 0.0;
  int batch_size = 1000;
  int epochs = 50;
  double momentum = 0.9;
  Optimizer::Kind optimizer = Optimizer::Kind::sgd_momentum;
  Reduction contrastive_reduction = Reduction::mean;
  std::uint64_t seed = 0;

  void validate() const;
};

struct CombinedLossResult {
  double loss = 0.0;
  double contrastive = 0.0;
  double ce = 0.0;
  Matrix grad_projections;
  Matrix grad_logits;
};

/// L = L_contrastive + lambda_ce * L_CE. For SimCLR the rows must already be
/// arranged in positive pairs.
CombinedLossResult combined_loss(const Matrix& projections, const Matrix& logits, std::span<const int> labels,
                                 const ContrastiveConfig& config);

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double contrastive = 0.0;
  double ce = 0.0;
};

struct TrainResult {
  MlpEncoder model;
  std::vector<EpochLog> log;
};

/// Mini-batch training on the combined loss with a cosine-annealed learning
/// rate. Deterministic given config.seed.
TrainResult train(MlpEncoder model, const LabeledDataset& train_set, const LabeledDataset& val_set,
                  const ContrastiveConfig& config);

/// Combined loss averaged over batches of config.batch_size, in row order.
double evaluate_loss(const MlpEncoder& model, const LabeledDataset& data, const ContrastiveConfig& config);

/// Encoder output only; labels pass through.
LabeledDataset embed_dataset(const MlpEncoder& model, const LabeledDataset& data);

/// Relabels round(fraction * n) rows, chosen uniformly, to a uniformly random
/// different class among those present in the data.
LabeledDataset apply_label_noise(const LabeledDataset& data, double fraction, std::uint64_t seed);

// "NVEN", u32 version, then encoder/projector/classifier sections, each
// u32 layer count + per layer {u32 rows, u32 cols, f64 weights, f64 biases}.
void save_encoder(const std::filesystem::path& path, const MlpEncoder& model);
MlpEncoder load_encoder(const std::filesystem::path& path);

/// One JSON object per line: epoch, lr, train_loss, val_loss, supcon, ce.
std::string training_log_jsonl(const std::vector<EpochLog>& log);

}  // namespace novelscan
