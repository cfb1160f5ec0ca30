#pragma once

#include "novelscan/dataset.hpp"
#include "novelscan/random.hpp"

#include <iosfwd>
#include <span>
#include <vector>

namespace novelscan {

/// Fully connected layer, y = x W^T + b. weight is (out x in).
struct DenseLayer {
  Matrix weight;
  Vector bias;
};

/// Multilayer perceptron with ReLU on hidden layers and a linear output.
class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(std::vector<DenseLayer> layers);

  /// He-uniform weights, zero biases. widths = {in, hidden..., out}.
  static Mlp he_uniform(std::span<const int> widths, Rng& rng);

  /// Layer inputs recorded during a forward pass, consumed by backward().
  struct Tape {
    std::vector<Matrix> inputs;
  };

  Matrix forward(const Matrix& x) const;
  Matrix forward(const Matrix& x, Tape& tape) const;

  /// Accumulates parameter gradients into `grads` (same shapes as layers())
  /// and returns the gradient with respect to the input batch.
  Matrix backward(const Tape& tape, const Matrix& grad_output, std::vector<DenseLayer>& grads) const;

  std::vector<DenseLayer> zero_like() const;

  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }
  int input_dim() const;
  int output_dim() const;
  std::size_t parameter_count() const;
  bool all_finite() const;

  void write(std::ostream& out) const;
  static Mlp read(std::istream& in);

 private:
  std::vector<DenseLayer> layers_;
};

/// SGD with momentum (PyTorch convention: v <- mu*v + g, p <- p - lr*v) or Adam.
class Optimizer {
 public:
  enum class Kind { sgd_momentum, adam };

  Optimizer(Kind kind, double momentum = 0.9);

  void step(Mlp& net, const std::vector<DenseLayer>& grads, double lr, std::size_t slot);

 private:
  struct State {
    std::vector<DenseLayer> first;
    std::vector<DenseLayer> second;
    long steps = 0;
  };
  Kind kind_;
  double momentum_;
  std::vector<State> states_;
};

}  // namespace novelscan
