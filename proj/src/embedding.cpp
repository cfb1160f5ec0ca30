#include "novelscan/embedding.hpp"

#include "novelscan/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

namespace novelscan {

namespace {

constexpr double kNormEps = 1e-12;

struct Normalized {
  Matrix unit;
  Vector norms;
};

Normalized normalize_rows(const Matrix& z) {
  Normalized out{z, Vector(z.rows())};
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double n = std::max(z.row(i).norm(), kNormEps);
    out.norms(i) = n;
    out.unit.row(i) /= n;
  }
  return out;
}

// Backpropagates dL/dS (S = U U^T / tau) through the row normalization.
Matrix similarity_grad_to_projections(const Normalized& nz, const Matrix& weights, double tau) {
  const Matrix sym = weights + weights.transpose();
  Matrix grad_u = (sym * nz.unit) / tau;
  Matrix grad(nz.unit.rows(), nz.unit.cols());
  for (Eigen::Index k = 0; k < grad.rows(); ++k) {
    const auto u = nz.unit.row(k);
    const auto g = grad_u.row(k);
    if (nz.norms(k) > kNormEps) {
      grad.row(k) = (g - u.dot(g) * u) / nz.norms(k);
    } else {
      grad.row(k) = g / kNormEps;
    }
  }
  return grad;
}

// Log-sum-exp over row i of S excluding the diagonal; writes softmax weights
// into `weights` row i and returns the LSE.
double anchor_softmax(const Matrix& s, Eigen::Index i, Matrix& weights) {
  const Eigen::Index n = s.cols();
  double m = -std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < n; ++j)
    if (j != i) m = std::max(m, s(i, j));
  double denom = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    if (j == i) continue;
    const double e = std::exp(s(i, j) - m);
    weights(i, j) = e;
    denom += e;
  }
  for (Eigen::Index j = 0; j < n; ++j)
    if (j != i) weights(i, j) /= denom;
  return m + std::log(denom);
}

void check_temperature(double tau) {
  if (!(tau > 0.0)) throw InvalidArgument("temperature must be positive");
}

}  // namespace

MlpEncoder make_encoder(int input_dim, int n_classes, const EncoderArchitecture& arch, std::uint64_t seed) {
  if (n_classes < 1) throw InvalidArgument("make_encoder: n_classes must be positive");
  Rng rng(seed);
  std::vector<int> enc{input_dim};
  enc.insert(enc.end(), arch.hidden.begin(), arch.hidden.end());
  enc.push_back(arch.embed_dim);
  const std::vector<int> proj{arch.embed_dim, arch.projector_hidden, arch.projection_dim};
  const std::vector<int> cls{arch.embed_dim, arch.classifier_hidden, n_classes};
  MlpEncoder model;
  model.encoder = Mlp::he_uniform(enc, rng);
  model.projector = Mlp::he_uniform(proj, rng);
  model.classifier = Mlp::he_uniform(cls, rng);
  return model;
}

ForwardResult forward(const MlpEncoder& model, const Matrix& batch) {
  ForwardResult out;
  out.embeddings = model.encoder.forward(batch);
  out.projections = model.projector.forward(out.embeddings);
  out.logits = model.classifier.forward(out.embeddings);
  return out;
}

LossResult supcon_loss(const Matrix& projections, std::span<const int> labels, double temperature,
                       Reduction reduction) {
  check_temperature(temperature);
  const Eigen::Index n = projections.rows();
  if (n < 2) throw InvalidArgument("supcon_loss: batch needs at least 2 rows");
  if (static_cast<std::size_t>(n) != labels.size()) throw InvalidArgument("supcon_loss: label count mismatch");

  const Normalized nz = normalize_rows(projections);
  const Matrix s = (nz.unit * nz.unit.transpose()) / temperature;
  Matrix weights = Matrix::Zero(n, n);

  LossResult out;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int li = labels[static_cast<std::size_t>(i)];
    int n_pos = 0;
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i && labels[static_cast<std::size_t>(j)] == li) ++n_pos;
    if (n_pos == 0) continue;
    const double lse = anchor_softmax(s, i, weights);
    double pos_mean = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != i && labels[static_cast<std::size_t>(j)] == li) {
        pos_mean += s(i, j);
        weights(i, j) -= 1.0 / n_pos;
      }
    }
    out.loss += lse - pos_mean / n_pos;
    ++out.n_anchors;
  }
  if (out.n_anchors == 0) throw DegenerateData("supcon_loss: no anchor has a same-class partner");

  const double scale = reduction == Reduction::mean ? 1.0 / out.n_anchors : 1.0;
  out.loss *= scale;
  weights *= scale;
  out.grad = similarity_grad_to_projections(nz, weights, temperature);
  return out;
}

LossResult simclr_loss(const Matrix& projections, double temperature, Reduction reduction) {
  check_temperature(temperature);
  const Eigen::Index n = projections.rows();
  if (n % 2 != 0) throw InvalidArgument("simclr_loss: rows must come in pairs");
  if (n < 4) throw InvalidArgument("simclr_loss: need at least 2 pairs");

  const Normalized nz = normalize_rows(projections);
  const Matrix s = (nz.unit * nz.unit.transpose()) / temperature;
  Matrix weights = Matrix::Zero(n, n);
  LossResult out;
  for (Eigen::Index i = 0; i < n; i += 2) {
    const double lse = anchor_softmax(s, i, weights);
    out.loss += lse - s(i, i + 1);
    weights(i, i + 1) -= 1.0;
    ++out.n_anchors;
  }
  const double scale = reduction == Reduction::mean ? 1.0 / out.n_anchors : 1.0;
  out.loss *= scale;
  weights *= scale;
  out.grad = similarity_grad_to_projections(nz, weights, temperature);
  return out;
}

LossResult ce_loss(const Matrix& logits, std::span<const int> labels) {
  const Eigen::Index n = logits.rows();
  const Eigen::Index c = logits.cols();
  if (static_cast<std::size_t>(n) != labels.size()) throw InvalidArgument("ce_loss: label count mismatch");
  if (n == 0) throw InvalidArgument("ce_loss: empty batch");
  LossResult out;
  out.grad.resize(n, c);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= c) throw InvalidArgument("ce_loss: label out of range");
    const double m = logits.row(i).maxCoeff();
    const auto e = (logits.row(i).array() - m).exp();
    const double denom = e.sum();
    out.loss += m + std::log(denom) - logits(i, y);
    out.grad.row(i) = e / denom;
    out.grad(i, y) -= 1.0;
  }
  out.loss /= static_cast<double>(n);
  out.grad /= static_cast<double>(n);
  out.n_anchors = static_cast<int>(n);
  return out;
}

void ContrastiveConfig::validate() const {
  if (!(temperature > 0.0)) throw InvalidArgument("contrastive config: temperature must be positive");
  if (lambda_ce < 0.0) throw InvalidArgument("contrastive config: lambda_ce must be non-negative");
  if (!(learning_rate > 0.0)) throw InvalidArgument("contrastive config: learning rate must be positive");
  if (lr_floor < 0.0 || lr_floor > learning_rate) throw InvalidArgument("contrastive config: bad lr floor");
  if (batch_size < 2) throw InvalidArgument("contrastive config: batch size must be >= 2");
  if (epochs < 0) throw InvalidArgument("contrastive config: epochs must be >= 0");
}

CombinedLossResult combined_loss(const Matrix& projections, const Matrix& logits, std::span<const int> labels,
                                 const ContrastiveConfig& config) {
  LossResult contrastive = config.loss == ContrastiveKind::supcon
                               ? supcon_loss(projections, labels, config.temperature, config.contrastive_reduction)
                               : simclr_loss(projections, config.temperature, config.contrastive_reduction);
  LossResult ce = ce_loss(logits, labels);
  CombinedLossResult out;
  out.contrastive = contrastive.loss;
  out.ce = ce.loss;
  out.loss = contrastive.loss + config.lambda_ce * ce.loss;
  out.grad_projections = std::move(contrastive.grad);
  out.grad_logits = config.lambda_ce * ce.grad;
  return out;
}

namespace {

struct BatchBuilder {
  const LabeledDataset& data;
  ContrastiveKind kind;
  std::vector<std::vector<std::size_t>> members;

  BatchBuilder(const LabeledDataset& d, ContrastiveKind k) : data(d), kind(k) {
    if (kind == ContrastiveKind::simclr) {
      members.resize(static_cast<std::size_t>(d.n_classes));
      for (std::size_t i = 0; i < d.size(); ++i) members[static_cast<std::size_t>(d.labels[i])].push_back(i);
    }
  }

  // For SimCLR each anchor is paired with a random same-class partner, which
  // plays the role of the augmented view.
  std::vector<std::size_t> rows(std::span<const std::size_t> anchors, Rng& rng) const {
    if (kind == ContrastiveKind::supcon) return {anchors.begin(), anchors.end()};
    std::vector<std::size_t> out;
    out.reserve(anchors.size() * 2);
    for (std::size_t a : anchors) {
      const auto& pool = members[static_cast<std::size_t>(data.labels[a])];
      std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
      std::size_t partner = pool[pick(rng)];
      if (partner == a && pool.size() > 1) partner = pool[(pick(rng) + 1) % pool.size()];
      out.push_back(a);
      out.push_back(partner);
    }
    return out;
  }
};

struct StepResult {
  double loss, contrastive, ce;
};

StepResult loss_and_gradients(const MlpEncoder& model, const LabeledDataset& batch, const ContrastiveConfig& config,
                              std::vector<std::vector<DenseLayer>>* grads) {
  Mlp::Tape te, tp, tc;
  const Matrix h = model.encoder.forward(batch.points, te);
  const Matrix z = model.projector.forward(h, tp);
  const Matrix logits = model.classifier.forward(h, tc);
  const CombinedLossResult loss = combined_loss(z, logits, batch.labels, config);
  if (grads) {
    auto& g = *grads;
    Matrix dh = model.projector.backward(tp, loss.grad_projections, g[1]);
    dh += model.classifier.backward(tc, loss.grad_logits, g[2]);
    model.encoder.backward(te, dh, g[0]);
  }
  return {loss.loss, loss.contrastive, loss.ce};
}

}  // namespace

double evaluate_loss(const MlpEncoder& model, const LabeledDataset& data, const ContrastiveConfig& config) {
  if (data.empty()) throw InvalidArgument("evaluate_loss: empty dataset");
  BatchBuilder builder(data, config.loss);
  Rng rng(derive_seed(config.seed, 0xe7a1));
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const auto bs = static_cast<std::size_t>(config.batch_size);
  double total = 0.0;
  int batches = 0;
  for (std::size_t start = 0; start < order.size(); start += bs) {
    const std::size_t end = std::min(order.size(), start + bs);
    if (end - start < 2) break;
    const auto rows = builder.rows(std::span(order).subspan(start, end - start), rng);
    total += loss_and_gradients(model, data.select(rows), config, nullptr).loss;
    ++batches;
  }
  if (batches == 0) throw InvalidArgument("evaluate_loss: need at least 2 rows");
  return total / batches;
}

TrainResult train(MlpEncoder model, const LabeledDataset& train_set, const LabeledDataset& val_set,
                  const ContrastiveConfig& config) {
  config.validate();
  train_set.validate();
  if (train_set.size() < 2) throw InvalidArgument("train: training set needs at least 2 rows");
  if (train_set.dim() != model.input_dim()) throw InvalidArgument("train: input dimension mismatch");
  if (!val_set.empty() && val_set.dim() != model.input_dim()) throw InvalidArgument("train: validation dimension mismatch");
  if (train_set.n_classes > model.n_classes()) throw InvalidArgument("train: more classes than classifier outputs");

  TrainResult result{std::move(model), {}};
  MlpEncoder& m = result.model;
  Rng rng(config.seed);
  Optimizer optimizer(config.optimizer, config.momentum);
  BatchBuilder builder(train_set, config.loss);
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const auto bs = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = config.lr_floor + 0.5 * (config.learning_rate - config.lr_floor) *
                                            (1.0 + std::cos(std::numbers::pi * epoch / config.epochs));
    shuffle(order, rng);
    EpochLog entry;
    entry.epoch = epoch + 1;
    entry.lr = lr;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t end = std::min(order.size(), start + bs);
      if (end - start < 2) break;
      const auto rows = builder.rows(std::span(order).subspan(start, end - start), rng);
      const LabeledDataset batch = train_set.select(rows);
      std::vector<std::vector<DenseLayer>> grads{m.encoder.zero_like(), m.projector.zero_like(),
                                                 m.classifier.zero_like()};
      const StepResult step = loss_and_gradients(m, batch, config, &grads);
      if (!std::isfinite(step.loss)) {
        throw NumericalError("train: non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                             std::to_string(batches));
      }
      optimizer.step(m.encoder, grads[0], lr, 0);
      optimizer.step(m.projector, grads[1], lr, 1);
      optimizer.step(m.classifier, grads[2], lr, 2);
      entry.train_loss += step.loss;
      entry.contrastive += step.contrastive;
      entry.ce += step.ce;
      ++batches;
    }
    if (batches > 0) {
      entry.train_loss /= batches;
      entry.contrastive /= batches;
      entry.ce /= batches;
    }
    entry.val_loss = val_set.size() >= 2 ? evaluate_loss(m, val_set, config) : std::nan("");
    result.log.push_back(entry);
  }
  if (!m.encoder.all_finite() || !m.projector.all_finite() || !m.classifier.all_finite()) {
    throw NumericalError("train: non-finite weights after training");
  }
  return result;
}

LabeledDataset embed_dataset(const MlpEncoder& model, const LabeledDataset& data) {
  LabeledDataset out;
  out.points = model.encoder.forward(data.points);
  out.labels = data.labels;
  out.n_classes = data.n_classes;
  return out;
}

LabeledDataset apply_label_noise(const LabeledDataset& data, double fraction, std::uint64_t seed) {
  if (fraction < 0.0 || fraction > 1.0) throw InvalidArgument("label noise fraction must be in [0, 1]");
  LabeledDataset out = data;
  if (fraction == 0.0 || data.empty()) return out;
  const std::set<int> present(data.labels.begin(), data.labels.end());
  if (present.size() < 2) throw InvalidArgument("label noise needs at least two classes");
  const std::vector<int> classes(present.begin(), present.end());
  Rng rng(seed);
  const auto n_flip = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(data.size())));
  std::uniform_int_distribution<std::size_t> other(0, classes.size() - 2);
  for (std::size_t row : sample_without_replacement(data.size(), n_flip, rng)) {
    const auto current = static_cast<std::size_t>(
        std::lower_bound(classes.begin(), classes.end(), out.labels[row]) - classes.begin());
    std::size_t k = other(rng);
    if (k >= current) ++k;
    out.labels[row] = classes[k];
  }
  return out;
}

void save_encoder(const std::filesystem::path& path, const MlpEncoder& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write("NVEN", 4);
  const std::uint32_t version = 1;
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  model.encoder.write(out);
  model.projector.write(out);
  model.classifier.write(out);
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

MlpEncoder load_encoder(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  char magic[4];
  std::uint32_t version = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (!in || std::string(magic, 4) != "NVEN") throw IoError("'" + path.string() + "' is not an NVEN checkpoint");
  if (version != 1) throw IoError("unsupported NVEN version " + std::to_string(version));
  MlpEncoder model;
  model.encoder = Mlp::read(in);
  model.projector = Mlp::read(in);
  model.classifier = Mlp::read(in);
  if (model.projector.input_dim() != model.embed_dim() || model.classifier.input_dim() != model.embed_dim()) {
    throw IoError("checkpoint heads do not match the embedding dimension");
  }
  return model;
}

std::string training_log_jsonl(const std::vector<EpochLog>& log) {
  std::ostringstream out;
  for (const auto& e : log) {
    nlohmann::ordered_json j;
    j["epoch"] = e.epoch;
    j["lr"] = e.lr;
    j["train_loss"] = e.train_loss;
    j["val_loss"] = std::isfinite(e.val_loss) ? nlohmann::ordered_json(e.val_loss) : nlohmann::ordered_json(nullptr);
    j["supcon"] = e.contrastive;
    j["ce"] = e.ce;
    out << j.dump() << '\n';
  }
  return out.str();
}

}  // namespace novelscan
