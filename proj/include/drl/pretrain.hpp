#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "drl/datagen.hpp"
#include "drl/matrix.hpp"
#include "drl/network.hpp"

namespace drl {

// Mini-batch SGD settings shared by the pretrained and auxiliary networks.
struct TrainConfig {
  std::vector<std::size_t> hidden = {64, 64};
  std::size_t epochs = 60;
  double learning_rate = 0.1;
  // The learning rate is divided by 10 at the start of each milestone epoch.
  std::vector<std::size_t> milestones = {30, 45};
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

double learning_rate_at(const TrainConfig& config, std::size_t epoch);

// Loss and parameter gradients for the rows of one mini-batch.
using BatchStep = std::function<std::pair<double, Gradients>(std::span<const std::size_t> rows)>;

// Loss over the whole training set with the current parameters.
using FullLoss = std::function<double()>;

// Runs config.epochs passes of shuffled mini-batch SGD over n_samples rows,
// returning full_loss() after each epoch. Throws NumericError if a loss or a
// gradient goes non-finite.
std::vector<double> run_sgd(MLPNetwork& net, std::size_t n_samples, const TrainConfig& config,
                            std::uint64_t shuffle_seed, const BatchStep& step, const FullLoss& full_loss);

// Copies the given rows of a matrix.
Matrix gather_rows(const Matrix& m, std::span<const std::size_t> rows);

// Unbiased (n - 1) covariance of the rows of `samples`.
Matrix covariance(const Matrix& samples);

// The frozen label-discriminative network g_phi with the covariance of its
// logits over the ID training set.
class PretrainedModel {
 public:
  PretrainedModel(MLPNetwork net, Matrix sigma_d, TrainConfig config, std::vector<double> loss_history = {});

  const MLPNetwork& net() const { return net_; }
  std::size_t num_classes() const { return net_.output_dim(); }
  std::size_t input_dim() const { return net_.input_dim(); }
  const Matrix& sigma_d() const { return sigma_d_; }
  const TrainConfig& config() const { return config_; }
  const std::vector<double>& loss_history() const { return loss_history_; }

 private:
  MLPNetwork net_;
  Matrix sigma_d_;
  TrainConfig config_;
  std::vector<double> loss_history_;
};

// Trains the classifier with mean cross-entropy and populates sigma_D.
PretrainedModel train_pretrained(const LabeledDataset& ds, const TrainConfig& config);

// d = g_phi(x), the raw logit vector.
Vector extract_rep(const PretrainedModel& model, std::span<const double> x);
Matrix extract_rep(const PretrainedModel& model, const Matrix& batch);

Matrix estimate_sigma_d(const MLPNetwork& net, const LabeledDataset& ds);

// Checkpoint at `path` plus a binary sidecar `path + ".meta"`:
//   "DRLMETA1" | K | dim | seed | K*K sigma_D entries (u64/f64 little-endian).
void save_pretrained(const PretrainedModel& model, const std::filesystem::path& path);
PretrainedModel load_pretrained(const std::filesystem::path& path);

}  // namespace drl
