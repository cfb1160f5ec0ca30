#include "novelscan/mlp.hpp"

#include "novelscan/errors.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <string>

namespace novelscan {

Mlp::Mlp(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (layers_[l].bias.size() != layers_[l].weight.rows()) {
      throw InvalidArgument("mlp layer " + std::to_string(l) + ": bias length does not match output width");
    }
    if (l > 0 && layers_[l].weight.cols() != layers_[l - 1].weight.rows()) {
      throw InvalidArgument("mlp layer " + std::to_string(l) + ": input width does not chain");
    }
  }
}

Mlp Mlp::he_uniform(std::span<const int> widths, Rng& rng) {
  if (widths.size() < 2) throw InvalidArgument("mlp needs at least input and output widths");
  std::vector<DenseLayer> layers;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const int in = widths[l], out = widths[l + 1];
    if (in < 1 || out < 1) throw InvalidArgument("mlp widths must be positive");
    const double limit = std::sqrt(6.0 / in);
    std::uniform_real_distribution<double> dist(-limit, limit);
    DenseLayer layer{Matrix(out, in), Vector::Zero(out)};
    for (Eigen::Index r = 0; r < out; ++r)
      for (Eigen::Index c = 0; c < in; ++c) layer.weight(r, c) = dist(rng);
    layers.push_back(std::move(layer));
  }
  return Mlp(std::move(layers));
}

Matrix Mlp::forward(const Matrix& x) const {
  Tape tape;
  return forward(x, tape);
}

Matrix Mlp::forward(const Matrix& x, Tape& tape) const {
  if (layers_.empty()) throw InvalidArgument("mlp has no layers");
  if (x.cols() != layers_.front().weight.cols()) {
    throw InvalidArgument("mlp input has " + std::to_string(x.cols()) + " columns, expected " +
                          std::to_string(layers_.front().weight.cols()));
  }
  tape.inputs.clear();
  tape.inputs.reserve(layers_.size());
  Matrix a = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Matrix z = a * layers_[l].weight.transpose();
    z.rowwise() += layers_[l].bias.transpose();
    tape.inputs.push_back(std::move(a));
    if (l + 1 < layers_.size()) z = z.cwiseMax(0.0);
    a = std::move(z);
  }
  return a;
}

Matrix Mlp::backward(const Tape& tape, const Matrix& grad_output, std::vector<DenseLayer>& grads) const {
  Matrix delta = grad_output;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    if (l + 1 < layers_.size()) {
      // ReLU mask from the next layer's input (post-activation > 0).
      delta = (tape.inputs[l + 1].array() > 0.0).select(delta, 0.0);
    }
    grads[l].weight.noalias() += delta.transpose() * tape.inputs[l];
    grads[l].bias += delta.colwise().sum().transpose();
    delta = delta * layers_[l].weight;
  }
  return delta;
}

std::vector<DenseLayer> Mlp::zero_like() const {
  std::vector<DenseLayer> z;
  z.reserve(layers_.size());
  for (const auto& l : layers_) {
    z.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
  }
  return z;
}

int Mlp::input_dim() const { return layers_.empty() ? 0 : static_cast<int>(layers_.front().weight.cols()); }
int Mlp::output_dim() const { return layers_.empty() ? 0 : static_cast<int>(layers_.back().weight.rows()); }

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

bool Mlp::all_finite() const {
  for (const auto& l : layers_) {
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  }
  return true;
}

namespace {

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("truncated network section");
  return v;
}

}  // namespace

void Mlp::write(std::ostream& out) const {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(layers_.size()));
  for (const auto& l : layers_) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(l.weight.rows()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(l.weight.cols()));
    out.write(reinterpret_cast<const char*>(l.weight.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(l.weight.size())));
    out.write(reinterpret_cast<const char*>(l.bias.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(l.bias.size())));
  }
}

Mlp Mlp::read(std::istream& in) {
  const auto n_layers = get<std::uint32_t>(in);
  if (n_layers == 0 || n_layers > 1024) throw IoError("implausible layer count " + std::to_string(n_layers));
  std::vector<DenseLayer> layers;
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    const auto rows = get<std::uint32_t>(in);
    const auto cols = get<std::uint32_t>(in);
    DenseLayer l{Matrix(rows, cols), Vector(rows)};
    in.read(reinterpret_cast<char*>(l.weight.data()), static_cast<std::streamsize>(sizeof(double) * rows * cols));
    in.read(reinterpret_cast<char*>(l.bias.data()), static_cast<std::streamsize>(sizeof(double) * rows));
    if (!in) throw IoError("truncated layer " + std::to_string(i));
    layers.push_back(std::move(l));
  }
  try {
    return Mlp(std::move(layers));
  } catch (const InvalidArgument& e) {
    throw IoError(std::string("inconsistent network: ") + e.what());
  }
}

Optimizer::Optimizer(Kind kind, double momentum) : kind_(kind), momentum_(momentum) {}

void Optimizer::step(Mlp& net, const std::vector<DenseLayer>& grads, double lr, std::size_t slot) {
  if (states_.size() <= slot) states_.resize(slot + 1);
  State& s = states_[slot];
  if (s.first.empty()) {
    s.first = net.zero_like();
    if (kind_ == Kind::adam) s.second = net.zero_like();
  }
  auto& layers = net.layers();
  if (kind_ == Kind::sgd_momentum) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      s.first[l].weight = momentum_ * s.first[l].weight + grads[l].weight;
      s.first[l].bias = momentum_ * s.first[l].bias + grads[l].bias;
      layers[l].weight -= lr * s.first[l].weight;
      layers[l].bias -= lr * s.first[l].bias;
    }
    return;
  }
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  ++s.steps;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(s.steps));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(s.steps));
  const auto update = [&](auto& p, auto& m, auto& v, const auto& g) {
    m = beta1 * m + (1.0 - beta1) * g;
    v = beta2 * v + (1.0 - beta2) * g.cwiseProduct(g);
    p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  };
  for (std::size_t l = 0; l < layers.size(); ++l) {
    update(layers[l].weight, s.first[l].weight, s.second[l].weight, grads[l].weight);
    update(layers[l].bias, s.first[l].bias, s.second[l].bias, grads[l].bias);
  }
}

}  // namespace novelscan
