#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "drl/datagen.hpp"
#include "drl/matrix.hpp"
#include "drl/network.hpp"
#include "drl/pretrain.hpp"

namespace drl {

// Covariance of the component representations z ~ N(mu_Z, Sigma_Z).
enum class SigmaKind {
  Pretrained,  // Sigma_D, covariance of the pretrained logits
  Identity,
  Gaussian,    // symmetrized standard-normal matrix
  Uniform,     // symmetrized uniform[0, 1) matrix
};

std::string_view to_string(SigmaKind kind);
SigmaKind sigma_kind_from_string(std::string_view s);

struct CovarianceSpec {
  SigmaKind kind = SigmaKind::Pretrained;
  std::uint64_t seed = 0;  // used by the random kinds only
  Matrix matrix;
};

// (A + Aᵀ)/2 with A i.i.d. N(0, 1), then scaled so the mean |diagonal| is 1.
Matrix gaussian_random_sigma(std::size_t k, std::uint64_t seed);
// Same construction with A i.i.d. uniform[0, 1).
Matrix uniform_random_sigma(std::size_t k, std::uint64_t seed);

CovarianceSpec resolve_covariance(SigmaKind kind, const PretrainedModel& pretrained, std::uint64_t seed);

// c = mu - eps * (Sigma d + (muᵀ d) mu): the expectation of (1 - eps zᵀd) z
// for z ~ N(mu, Sigma), in closed form.
Vector construct_c(std::span<const double> mu, std::span<const double> d, const Matrix& sigma, double epsilon);

// Row-wise construct_c for batches of mu and d.
Matrix construct_c(const Matrix& mu, const Matrix& d, const Matrix& sigma, double epsilon);

// Sample mean of (1 - eps zᵀd) z over n i.i.d. draws z ~ N(mu, Sigma).
// Sigma must be positive semidefinite; a 1e-10 ridge is added when the plain
// Cholesky factorization fails.
Vector monte_carlo_c(std::span<const double> mu, std::span<const double> d, const Matrix& sigma, double epsilon,
                     std::size_t n_samples, std::uint64_t seed);

struct AuxConfig {
  double epsilon = 0.001;
  SigmaKind sigma = SigmaKind::Pretrained;
  // Hidden widths of the auxiliary network; empty means copy the pretrained.
  std::vector<std::size_t> hidden;
  // Schedule and seed; the seed drives initialization, batch order and the
  // random covariance kinds.
  TrainConfig train;
};

// Frozen g_phi plus the trained component network z_theta.
class DRLModel {
 public:
  DRLModel(PretrainedModel pretrained, MLPNetwork aux_net, double epsilon, CovarianceSpec sigma_z,
           std::vector<double> loss_history = {});

  const PretrainedModel& pretrained() const { return pretrained_; }
  const MLPNetwork& aux_net() const { return aux_net_; }
  double epsilon() const { return epsilon_; }
  const CovarianceSpec& sigma_z() const { return sigma_z_; }
  std::size_t num_classes() const { return pretrained_.num_classes(); }
  const std::vector<double>& loss_history() const { return loss_history_; }

 private:
  PretrainedModel pretrained_;
  MLPNetwork aux_net_;
  double epsilon_;
  CovarianceSpec sigma_z_;
  std::vector<double> loss_history_;
};

// mu_Z = z_theta(x).
Vector component_expectation(const DRLModel& model, std::span<const double> x);
Matrix component_expectation(const DRLModel& model, const Matrix& batch);

// Label- and distribution-discriminative representations of a batch.
struct DualRepresentation {
  Matrix d;
  Matrix c;
};
DualRepresentation represent(const DRLModel& model, const Matrix& batch);

struct AuxLoss {
  double value = 0.0;
  // Forward pass of the auxiliary network with d(loss)/d(mu_Z) as cotangent.
  GradientTape tape;
};

// Mean cross-entropy of softmax(c) where c = construct_c(z_theta(x), d, ...).
// The cotangent is pulled back through both occurrences of z_theta(x); d and
// Sigma are constants.
AuxLoss aux_loss(const MLPNetwork& aux_net, const Matrix& batch, const Matrix& d, std::span<const std::size_t> labels,
                 const Matrix& sigma, double epsilon);
AuxLoss aux_loss(const DRLModel& model, const Matrix& batch, std::span<const std::size_t> labels);

// Algorithm: fixed-budget mini-batch SGD on the constrained loss with g_phi
// frozen.
DRLModel train_auxiliary(const PretrainedModel& pretrained, const LabeledDataset& ds, const AuxConfig& config);

// Directory layout: pretrained.ckpt (+ .meta), aux.ckpt, drl.manifest.
void save_drl(const DRLModel& model, const std::filesystem::path& dir);
DRLModel load_drl(const std::filesystem::path& dir);

}  // namespace drl
