#include "drl/network.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "drl/error.hpp"

namespace drl {

namespace {

void check_dims(std::span<const std::size_t> dims) {
  if (dims.size() < 2) throw std::invalid_argument("MLPNetwork: need at least input and output widths");
  for (std::size_t d : dims)
    if (d == 0) throw std::invalid_argument("MLPNetwork: zero layer width");
}

// out = x * Wᵀ + b, optionally followed by ReLU.
Matrix affine(const Matrix& x, const DenseLayer& layer, bool relu) {
  const Matrix& w = layer.weights;
  Matrix out(x.rows(), w.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto xi = x.row(i);
    auto oi = out.row(i);
    for (std::size_t o = 0; o < w.rows(); ++o) {
      double v = layer.bias[o] + dot(w.row(o), xi);
      oi[o] = relu && v < 0.0 ? 0.0 : v;
    }
  }
  return out;
}

}  // namespace

MLPNetwork::MLPNetwork(std::span<const std::size_t> layer_dims) {
  check_dims(layer_dims);
  for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
    layers_.push_back({Matrix(layer_dims[l + 1], layer_dims[l]), Vector(layer_dims[l + 1], 0.0)});
  }
}

MLPNetwork::MLPNetwork(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw std::invalid_argument("MLPNetwork: no layers");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    if (layer.bias.size() != layer.weights.rows())
      throw std::invalid_argument("MLPNetwork: bias length mismatch in layer " + std::to_string(l));
    if (l > 0 && layer.weights.cols() != layers_[l - 1].weights.rows())
      throw std::invalid_argument("MLPNetwork: inconsistent widths at layer " + std::to_string(l));
  }
}

MLPNetwork MLPNetwork::glorot_uniform(std::span<const std::size_t> layer_dims, std::uint64_t seed) {
  MLPNetwork net(layer_dims);
  std::mt19937_64 rng(seed);
  for (auto& layer : net.layers_) {
    const double limit = std::sqrt(6.0 / static_cast<double>(layer.weights.rows() + layer.weights.cols()));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (double& w : layer.weights.data()) w = dist(rng);
  }
  return net;
}

std::vector<std::size_t> MLPNetwork::layer_dims() const {
  std::vector<std::size_t> dims;
  if (layers_.empty()) return dims;
  dims.push_back(layers_.front().weights.cols());
  for (const auto& layer : layers_) dims.push_back(layer.weights.rows());
  return dims;
}

std::size_t MLPNetwork::input_dim() const { return layers_.empty() ? 0 : layers_.front().weights.cols(); }
std::size_t MLPNetwork::output_dim() const { return layers_.empty() ? 0 : layers_.back().weights.rows(); }

std::size_t MLPNetwork::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers_) n += layer.weights.size() + layer.bias.size();
  return n;
}

ForwardTrace forward_trace(const MLPNetwork& net, const Matrix& batch) {
  if (net.num_layers() == 0) throw std::invalid_argument("forward: empty network");
  if (batch.cols() != net.input_dim()) {
    throw std::invalid_argument("forward: input width " + std::to_string(batch.cols()) + " but network expects " +
                                std::to_string(net.input_dim()));
  }
  ForwardTrace trace;
  trace.inputs.reserve(net.num_layers());
  trace.inputs.push_back(batch);
  const auto& layers = net.layers();
  for (std::size_t l = 0; l + 1 < layers.size(); ++l) trace.inputs.push_back(affine(trace.inputs.back(), layers[l], true));
  trace.logits = affine(trace.inputs.back(), layers.back(), false);
  return trace;
}

Matrix forward(const MLPNetwork& net, const Matrix& batch) { return forward_trace(net, batch).logits; }

Vector forward(const MLPNetwork& net, std::span<const double> x) {
  Matrix batch(1, x.size(), Vector(x.begin(), x.end()));
  return forward(net, batch).row_vector(0);
}

Matrix apply_output_layer(const MLPNetwork& net, const Matrix& penultimate) {
  const auto& last = net.layers().back();
  if (penultimate.cols() != last.weights.cols()) throw std::invalid_argument("apply_output_layer: width mismatch");
  return affine(penultimate, last, false);
}

void GradientTape::record(ForwardTrace trace) {
  trace_ = std::move(trace);
  has_forward_ = true;
  has_loss_ = false;
}

void GradientTape::set_loss(double value, Matrix logit_grad) {
  if (!has_forward_) throw std::logic_error("GradientTape: loss set before a forward pass was recorded");
  if (logit_grad.rows() != trace_.logits.rows() || logit_grad.cols() != trace_.logits.cols())
    throw std::invalid_argument("GradientTape: logit gradient shape mismatch");
  loss_ = value;
  logit_grad_ = std::move(logit_grad);
  has_loss_ = true;
}

Gradients backward(const MLPNetwork& net, const GradientTape& tape) {
  if (!tape.has_forward() || !tape.has_loss()) throw std::logic_error("backward: tape holds no recorded loss");
  const auto& trace = tape.trace();
  const auto& layers = net.layers();
  if (trace.inputs.size() != layers.size()) throw std::invalid_argument("backward: tape does not match network depth");

  Gradients grads;
  grads.weights.resize(layers.size());
  grads.biases.resize(layers.size());

  Matrix upstream = tape.logit_grad();  // d loss / d pre-activation of the current layer
  for (std::size_t l = layers.size(); l-- > 0;) {
    const Matrix& x = trace.inputs[l];
    const Matrix& w = layers[l].weights;
    Matrix dw(w.rows(), w.cols());
    Vector db(w.rows(), 0.0);
    Matrix dx(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
      auto gi = upstream.row(i);
      auto xi = x.row(i);
      auto dxi = dx.row(i);
      for (std::size_t o = 0; o < w.rows(); ++o) {
        const double g = gi[o];
        if (g == 0.0) continue;
        db[o] += g;
        auto dwo = dw.row(o);
        auto wo = w.row(o);
        for (std::size_t j = 0; j < xi.size(); ++j) {
          dwo[j] += g * xi[j];
          dxi[j] += g * wo[j];
        }
      }
    }
    if (l > 0) {
      // x is a post-ReLU activation; its pre-activation was positive iff x > 0.
      for (std::size_t k = 0; k < dx.size(); ++k)
        if (!(x.data()[k] > 0.0)) dx.data()[k] = 0.0;
    }
    grads.weights[l] = std::move(dw);
    grads.biases[l] = std::move(db);
    upstream = std::move(dx);
  }
  grads.input = std::move(upstream);
  return grads;
}

void sgd_step(MLPNetwork& net, const Gradients& grads, double learning_rate) {
  auto& layers = net.layers();
  if (grads.weights.size() != layers.size() || grads.biases.size() != layers.size())
    throw std::invalid_argument("sgd_step: gradient layer count mismatch");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (grads.weights[l].rows() != layers[l].weights.rows() || grads.weights[l].cols() != layers[l].weights.cols() ||
        grads.biases[l].size() != layers[l].bias.size())
      throw std::invalid_argument("sgd_step: gradient shape mismatch in layer " + std::to_string(l));
    if (!grads.weights[l].all_finite() || !all_finite(grads.biases[l]))
      throw NumericError("sgd_step: non-finite gradient in layer " + std::to_string(l) + ", step rejected");
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto w = layers[l].weights.data();
    auto gw = grads.weights[l].data();
    for (std::size_t k = 0; k < w.size(); ++k) w[k] -= learning_rate * gw[k];
    for (std::size_t k = 0; k < layers[l].bias.size(); ++k) layers[l].bias[k] -= learning_rate * grads.biases[l][k];
  }
}

Vector flatten_parameters(const MLPNetwork& net) {
  Vector flat;
  flat.reserve(net.parameter_count());
  for (const auto& layer : net.layers()) {
    flat.insert(flat.end(), layer.weights.data().begin(), layer.weights.data().end());
    flat.insert(flat.end(), layer.bias.begin(), layer.bias.end());
  }
  return flat;
}

void assign_parameters(MLPNetwork& net, std::span<const double> flat) {
  if (flat.size() != net.parameter_count()) throw std::invalid_argument("assign_parameters: length mismatch");
  std::size_t k = 0;
  for (auto& layer : net.layers()) {
    for (double& w : layer.weights.data()) w = flat[k++];
    for (double& b : layer.bias) b = flat[k++];
  }
}

Vector flatten_gradients(const Gradients& grads) {
  Vector flat;
  for (std::size_t l = 0; l < grads.weights.size(); ++l) {
    flat.insert(flat.end(), grads.weights[l].data().begin(), grads.weights[l].data().end());
    flat.insert(flat.end(), grads.biases[l].begin(), grads.biases[l].end());
  }
  return flat;
}

}  // namespace drl
