#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "drl/checkpoint.hpp"
#include "drl/error.hpp"
#include "drl/gradcheck.hpp"
#include "drl/loss.hpp"
#include "drl/matrix.hpp"
#include "drl/network.hpp"
#include "oracles.hpp"

using namespace drl;

namespace {

MLPNetwork random_net(oracle::Gen& gen, std::vector<std::size_t> dims) {
  MLPNetwork net = MLPNetwork::glorot_uniform(dims, gen.bits());
  for (auto& layer : net.layers())
    for (double& b : layer.bias) b = gen.normal(0.1);
  return net;
}

// Forward pass written out with explicit loops.
Vector hand_forward(const MLPNetwork& net, Vector x) {
  const auto& layers = net.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Vector y(layers[l].bias);
    for (std::size_t o = 0; o < y.size(); ++o)
      for (std::size_t i = 0; i < x.size(); ++i) y[o] += layers[l].weights(o, i) * x[i];
    if (l + 1 < layers.size())
      for (double& v : y) v = v > 0.0 ? v : 0.0;
    x = y;
  }
  return x;
}

double batch_ce(const MLPNetwork& net, const Matrix& x, const std::vector<std::size_t>& labels) {
  double total = 0.0;
  for (std::size_t r = 0; r < x.rows(); ++r)
    total -= oracle::naive_log_softmax(forward(net, x.row(r)), labels[r]);
  return total / static_cast<double>(x.rows());
}

Gradients ce_gradients(const MLPNetwork& net, const Matrix& x, std::span<const std::size_t> labels) {
  GradientTape tape;
  tape.record(forward_trace(net, x));
  BatchLoss loss = softmax_cross_entropy(tape.trace().logits, labels);
  tape.set_loss(loss.value, loss.logit_grad);
  return backward(net, tape);
}

}  // namespace

TEST(Matrix, ConstructionChecksLength) {
  EXPECT_THROW(Matrix(2, 2, Vector{1.0, 2.0, 3.0}), std::invalid_argument);
  Matrix m(2, 3, 1.5);
  EXPECT_EQ(m.data().size(), 6u);
  EXPECT_EQ(m(1, 2), 1.5);
}

TEST(Matrix, CholeskySolve) {
  const Matrix a{{4.0, 2.0}, {2.0, 3.0}};
  const Matrix l = cholesky(a);
  const Vector x = cholesky_solve(l, Vector{2.0, 1.0});
  const Vector back = matvec(a, x);
  EXPECT_NEAR(back[0], 2.0, 1e-14);
  EXPECT_NEAR(back[1], 1.0, 1e-14);
  EXPECT_THROW(cholesky(Matrix{{1.0, 2.0}, {2.0, 1.0}}), NumericError);
}

TEST(Matrix, ArgmaxPrefersLowestIndex) {
  EXPECT_EQ(argmax(Vector{0.2, 0.5, 0.5}), 1u);
  EXPECT_EQ(argmax(Vector{1.0, 1.0}), 0u);
}

TEST(Softmax, HandCases) {
  const Vector a = softmax(Vector{0.0, 0.0});
  EXPECT_EQ(a[0], 0.5);
  EXPECT_EQ(a[1], 0.5);
  const Vector b = softmax(Vector{std::log(2.0), 0.0});
  EXPECT_NEAR(b[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(b[1], 1.0 / 3.0, 1e-15);
  const Vector c = softmax(Vector{1000.0, 0.0});
  EXPECT_NEAR(c[0], 1.0, 1e-12);
  EXPECT_NEAR(c[1], 0.0, 1e-12);
}

TEST(Softmax, RejectsNonFinite) {
  EXPECT_THROW(softmax(Vector{0.0, NAN}), NumericError);
  EXPECT_THROW(softmax(Vector{INFINITY, 0.0}), NumericError);
}

TEST(Softmax, ShiftInvarianceProperty) {
  oracle::Gen gen(1);
  for (int t = 0; t < 500; ++t) {
    const auto v = gen.normals(gen.index(1, 10), 20.0);
    const double shift = gen.normal(100.0);
    auto w = v;
    for (double& x : w) x += shift;
    const Vector p = softmax(v), q = softmax(w);
    double sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      EXPECT_NEAR(p[i], q[i], 1e-12);
      EXPECT_GE(p[i], 0.0);
      sum += p[i];
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(CrossEntropy, HandCases) {
  EXPECT_EQ(cross_entropy(Vector{1.0, 0.0}, 0), 0.0);
  EXPECT_NEAR(cross_entropy(Vector{0.5, 0.5}, 0), 0.693147, 1e-6);
  EXPECT_NEAR(cross_entropy(Vector{0.25, 0.25, 0.25, 0.25}, 2), 1.386294, 1e-6);
}

TEST(CrossEntropy, ZeroProbabilityIsClampedAndFlagged) {
  bool clamped = false;
  const double v = cross_entropy(Vector{1.0, 0.0}, 1, &clamped);
  EXPECT_TRUE(clamped);
  EXPECT_NEAR(v, -std::log(kProbabilityFloor), 1e-9);
  EXPECT_TRUE(std::isfinite(v));
}

TEST(Forward, ZeroNetGivesZeroLogits) {
  const std::vector<std::size_t> dims = {3, 4, 2};
  const MLPNetwork net(dims);
  const Vector y = forward(net, Vector{1.0, -2.0, 3.0});
  EXPECT_EQ(y, (Vector{0.0, 0.0}));
}

TEST(Forward, IdentityLayer) {
  const MLPNetwork net({DenseLayer{Matrix::identity(2), Vector{0.0, 0.0}}});
  EXPECT_EQ(forward(net, Vector{1.0, 2.0}), (Vector{1.0, 2.0}));
}

TEST(Forward, TwoLayerHandValue) {
  // h = relu([[0.5, -1], [0.25, 0.5]] x + [0.1, -0.2]); y = [[1, -2]] h + 0.3
  const MLPNetwork net({DenseLayer{Matrix{{0.5, -1.0}, {0.25, 0.5}}, {0.1, -0.2}},
                        DenseLayer{Matrix{{1.0, -2.0}}, {0.3}}});
  // x = [2, 0.5]: pre = [1 - 0.5 + 0.1, 0.5 + 0.25 - 0.2] = [0.6, 0.55]
  const Vector y = forward(net, Vector{2.0, 0.5});
  EXPECT_NEAR(y[0], 0.6 - 1.1 + 0.3, 1e-15);
  // x = [0, 1]: pre = [-0.9, 0.3], relu kills the first unit
  EXPECT_NEAR(forward(net, Vector{0.0, 1.0})[0], -0.6 + 0.3, 1e-15);
}

TEST(Forward, MatchesHandRolledOracle) {
  oracle::Gen gen(2);
  for (int t = 0; t < 50; ++t) {
    const MLPNetwork net = random_net(gen, {4, 6, 5, 3});
    const auto x = gen.normals(4);
    const Vector got = forward(net, x), want = hand_forward(net, x);
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-13);
  }
}

TEST(Forward, DimensionMismatchThrows) {
  const std::vector<std::size_t> dims = {3, 2};
  const MLPNetwork net(dims);
  EXPECT_THROW(forward(net, Vector{1.0, 2.0}), std::invalid_argument);
}

TEST(Backward, EmptyTapeThrows) {
  const std::vector<std::size_t> dims = {2, 2};
  EXPECT_THROW(backward(MLPNetwork(dims), GradientTape{}), std::logic_error);
}

TEST(Backward, ConstantLossGivesZeroGradients) {
  oracle::Gen gen(3);
  const MLPNetwork net = random_net(gen, {3, 4, 2});
  GradientTape tape;
  tape.record(forward_trace(net, gen.normal_matrix(5, 3)));
  tape.set_loss(7.0, Matrix(5, 2, 0.0));
  for (double g : flatten_gradients(backward(net, tape))) EXPECT_EQ(g, 0.0);
}

TEST(Backward, SingleLayerSoftmaxGradientIsOuterProduct) {
  oracle::Gen gen(4);
  const MLPNetwork net = random_net(gen, {3, 4});
  const Matrix x = gen.normal_matrix(1, 3);
  const std::vector<std::size_t> label = {2};
  const Gradients g = ce_gradients(net, x, label);
  const Vector p = softmax(forward(net, x.row(0)));
  for (std::size_t k = 0; k < 4; ++k) {
    const double delta = p[k] - (k == 2 ? 1.0 : 0.0);
    EXPECT_EQ(g.biases[0][k], delta);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(g.weights[0](k, i), delta * x(0, i), 1e-15);
  }
}

TEST(Backward, MatchesFiniteDifferencesOnRandomNets) {
  oracle::Gen gen(5);
  for (int t = 0; t < 20; ++t) {
    std::vector<std::size_t> dims = {gen.index(1, 8)};
    for (std::size_t l = 0, n = gen.index(1, 3); l < n; ++l) dims.push_back(gen.index(1, 8));
    dims.push_back(gen.index(2, 8));
    const MLPNetwork net = random_net(gen, dims);
    const Matrix x = gen.normal_matrix(gen.index(1, 4), dims.front());
    std::vector<std::size_t> labels(x.rows());
    for (auto& l : labels) l = gen.index(0, dims.back() - 1);

    const Vector analytic = flatten_gradients(ce_gradients(net, x, labels));
    MLPNetwork probe = net;
    const auto report = check_gradient(
        [&](std::span<const double> p) {
          assign_parameters(probe, p);
          return batch_ce(probe, x, labels);
        },
        flatten_parameters(net), analytic);
    EXPECT_TRUE(report.passed()) << report.summary();
  }
}

TEST(Backward, ReplayingTapeIsDeterministic) {
  oracle::Gen gen(6);
  const MLPNetwork net = random_net(gen, {3, 5, 3});
  const Matrix x = gen.normal_matrix(4, 3);
  GradientTape tape;
  tape.record(forward_trace(net, x));
  BatchLoss loss = softmax_cross_entropy(tape.trace().logits, std::vector<std::size_t>{0, 1, 2, 0});
  tape.set_loss(loss.value, loss.logit_grad);
  EXPECT_EQ(flatten_gradients(backward(net, tape)), flatten_gradients(backward(net, tape)));
  const Gradients g = backward(net, tape);
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    EXPECT_EQ(g.weights[l].rows(), net.layers()[l].weights.rows());
    EXPECT_EQ(g.weights[l].cols(), net.layers()[l].weights.cols());
    EXPECT_EQ(g.biases[l].size(), net.layers()[l].bias.size());
  }
}

TEST(SgdStep, HandArithmetic) {
  MLPNetwork net({DenseLayer{Matrix{{1.0}}, {0.0}}});
  Gradients g{{Matrix{{2.0}}}, {Vector{0.0}}, {}};
  sgd_step(net, g, 0.1);
  EXPECT_NEAR(net.layers()[0].weights(0, 0), 0.8, 1e-15);
  const MLPNetwork before = net;
  sgd_step(net, g, 0.0);
  EXPECT_EQ(net, before);
}

TEST(SgdStep, NonFiniteGradientRejected) {
  MLPNetwork net({DenseLayer{Matrix{{1.0, 2.0}}, {0.5}}});
  const MLPNetwork before = net;
  Gradients g{{Matrix{{0.1, NAN}}}, {Vector{0.0}}, {}};
  EXPECT_THROW(sgd_step(net, g, 0.1), NumericError);
  EXPECT_EQ(net, before);
}

TEST(SgdStep, ConvexLossIsMonotone) {
  // Least squares on a single linear unit is convex in its parameters.
  oracle::Gen gen(7);
  MLPNetwork net = random_net(gen, {3, 1});
  const Matrix x = gen.normal_matrix(20, 3);
  Vector target(20);
  for (double& v : target) v = gen.normal();
  auto loss_and_grad = [&](Gradients* out) {
    GradientTape tape;
    tape.record(forward_trace(net, x));
    Matrix cot(20, 1);
    double loss = 0.0;
    for (std::size_t r = 0; r < 20; ++r) {
      const double e = tape.trace().logits(r, 0) - target[r];
      loss += 0.5 * e * e / 20.0;
      cot(r, 0) = e / 20.0;
    }
    tape.set_loss(loss, cot);
    if (out) *out = backward(net, tape);
    return loss;
  };
  double prev = loss_and_grad(nullptr);
  for (int s = 0; s < 100; ++s) {
    Gradients g;
    loss_and_grad(&g);
    sgd_step(net, g, 0.05);
    const double now = loss_and_grad(nullptr);
    EXPECT_LE(now, prev + 1e-15);
    prev = now;
  }
}

TEST(Parameters, FlattenAssignRoundTrip) {
  oracle::Gen gen(8);
  const MLPNetwork net = random_net(gen, {2, 3, 2});
  MLPNetwork other = MLPNetwork::glorot_uniform(net.layer_dims(), 99);
  assign_parameters(other, flatten_parameters(net));
  EXPECT_EQ(other, net);
  EXPECT_EQ(flatten_parameters(net).size(), net.parameter_count());
}

TEST(Glorot, SeededAndBounded) {
  const std::vector<std::size_t> dims = {4, 6, 3};
  const MLPNetwork a = MLPNetwork::glorot_uniform(dims, 11), b = MLPNetwork::glorot_uniform(dims, 11);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, MLPNetwork::glorot_uniform(dims, 12));
  const double bound = std::sqrt(6.0 / 10.0);
  for (double w : a.layers()[0].weights.data()) EXPECT_LE(std::abs(w), bound);
}

TEST(Checkpoint, BitExactRoundTrip) {
  oracle::Gen gen(9);
  const MLPNetwork net = random_net(gen, {3, 5, 2});
  const std::string bytes = encode_checkpoint(net);
  EXPECT_EQ(bytes.substr(0, 8), "DRLCKPT1");
  EXPECT_EQ(bytes.size(), 8u + 8u + 2 * 16u + 8u * net.parameter_count());
  EXPECT_EQ(decode_checkpoint(bytes), net);

  const auto path = std::filesystem::temp_directory_path() / "drl_numerics_ckpt.bin";
  save_checkpoint(net, path);
  EXPECT_EQ(load_checkpoint(path), net);
  std::filesystem::remove(path);
}

TEST(Checkpoint, LayoutIsLittleEndian) {
  const MLPNetwork net({DenseLayer{Matrix{{1.0}}, {-2.0}}});
  const std::string bytes = encode_checkpoint(net);
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 1u);  // layer count
  EXPECT_EQ(static_cast<unsigned char>(bytes[16]), 1u);  // rows
  EXPECT_EQ(static_cast<unsigned char>(bytes[24]), 1u);  // cols
  // 1.0 = 0x3FF0000000000000, most significant byte last
  EXPECT_EQ(static_cast<unsigned char>(bytes[39]), 0x3Fu);
  EXPECT_EQ(static_cast<unsigned char>(bytes[38]), 0xF0u);
}

TEST(Checkpoint, CorruptInputRejected) {
  EXPECT_THROW(decode_checkpoint("NOTACKPT"), ParseError);
  const MLPNetwork net({DenseLayer{Matrix{{1.0}}, {0.0}}});
  const std::string bytes = encode_checkpoint(net);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), ParseError);
}

TEST(GradCheck, DetectsWrongGradient) {
  const Vector point = {1.0, 2.0};
  auto f = [](std::span<const double> p) { return p[0] * p[0] + 3.0 * p[1]; };
  EXPECT_TRUE(check_gradient(f, point, Vector{2.0, 3.0}).passed());
  const auto bad = check_gradient(f, point, Vector{2.0, 3.1});
  EXPECT_FALSE(bad.passed());
  EXPECT_EQ(bad.failures, 1u);
  EXPECT_EQ(bad.worst_index, 1u);
}
