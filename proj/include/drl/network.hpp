#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "drl/matrix.hpp"

namespace drl {

// One affine layer. weights is (fan_out × fan_in).
struct DenseLayer {
  Matrix weights;
  Vector bias;
  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

// Feed-forward network: affine layers with ReLU between them and raw logits
// at the output.
class MLPNetwork {
 public:
  MLPNetwork() = default;
  // Zero-initialized network with the given layer widths (input first).
  explicit MLPNetwork(std::span<const std::size_t> layer_dims);
  explicit MLPNetwork(std::vector<DenseLayer> layers);

  // Weights uniform in ±sqrt(6 / (fan_in + fan_out)), biases zero.
  static MLPNetwork glorot_uniform(std::span<const std::size_t> layer_dims, std::uint64_t seed);

  std::vector<std::size_t> layer_dims() const;
  std::size_t input_dim() const;
  std::size_t output_dim() const;
  std::size_t num_layers() const { return layers_.size(); }
  std::size_t parameter_count() const;

  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }

  friend bool operator==(const MLPNetwork&, const MLPNetwork&) = default;

 private:
  std::vector<DenseLayer> layers_;
};

// Everything needed to backpropagate one batched forward pass.
struct ForwardTrace {
  // inputs[l] is the (n × fan_in) input of layer l; inputs[0] is the batch
  // itself and inputs[1..] are post-ReLU hidden activations.
  std::vector<Matrix> inputs;
  Matrix logits;

  // Hidden activation of hidden layer h (0-based), i.e. inputs[h + 1].
  const Matrix& hidden(std::size_t h) const { return inputs.at(h + 1); }
  std::size_t num_hidden() const { return inputs.empty() ? 0 : inputs.size() - 1; }
};

ForwardTrace forward_trace(const MLPNetwork& net, const Matrix& batch);
Matrix forward(const MLPNetwork& net, const Matrix& batch);
Vector forward(const MLPNetwork& net, std::span<const double> x);

// Logits obtained by feeding `penultimate` (post-ReLU activations of the
// last hidden layer) through the output layer only.
Matrix apply_output_layer(const MLPNetwork& net, const Matrix& penultimate);

struct Gradients {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
  // d(loss)/d(input batch).
  Matrix input;
};

// Records a forward pass and the cotangent of a scalar loss with respect to
// its logits. backward() is a pure function of the tape, so replaying it
// yields identical gradients.
class GradientTape {
 public:
  void record(ForwardTrace trace);
  void set_loss(double value, Matrix logit_grad);

  bool has_forward() const { return has_forward_; }
  bool has_loss() const { return has_loss_; }
  const ForwardTrace& trace() const { return trace_; }
  const Matrix& logit_grad() const { return logit_grad_; }
  double loss() const { return loss_; }

 private:
  ForwardTrace trace_;
  Matrix logit_grad_;
  double loss_ = 0.0;
  bool has_forward_ = false;
  bool has_loss_ = false;
};

// Reverse-mode pass. Throws std::logic_error on a tape without a recorded
// forward pass or loss.
Gradients backward(const MLPNetwork& net, const GradientTape& tape);

// p <- p - learning_rate * grad for every parameter. A gradient containing
// NaN/Inf is rejected with NumericError and the network is left untouched.
void sgd_step(MLPNetwork& net, const Gradients& grads, double learning_rate);

// Parameters in a fixed order: per layer, weights row-major then bias.
Vector flatten_parameters(const MLPNetwork& net);
void assign_parameters(MLPNetwork& net, std::span<const double> flat);
Vector flatten_gradients(const Gradients& grads);

}  // namespace drl
