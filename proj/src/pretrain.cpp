#include "drl/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

#include "drl/checkpoint.hpp"
#include "drl/error.hpp"
#include "drl/loss.hpp"
#include "drl/seed.hpp"

namespace drl {

namespace {
constexpr std::string_view kMetaMagic = "DRLMETA1";
}

double learning_rate_at(const TrainConfig& config, std::size_t epoch) {
  double lr = config.learning_rate;
  for (std::size_t m : config.milestones)
    if (epoch >= m) lr /= 10.0;
  return lr;
}

std::vector<double> run_sgd(MLPNetwork& net, std::size_t n_samples, const TrainConfig& config,
                            std::uint64_t shuffle_seed, const BatchStep& step, const FullLoss& full_loss) {
  if (n_samples == 0) throw ConfigError("training set is empty");
  if (config.batch_size == 0) throw ConfigError("batch size must be positive");
  if (!(config.learning_rate >= 0.0)) throw ConfigError("learning rate must be nonnegative");

  std::mt19937_64 rng(shuffle_seed);
  std::vector<std::size_t> order(n_samples);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> history;
  history.reserve(config.epochs);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = learning_rate_at(config, epoch);
    for (std::size_t start = 0; start < n_samples; start += config.batch_size) {
      const std::size_t stop = std::min(n_samples, start + config.batch_size);
      std::span<const std::size_t> rows(order.data() + start, stop - start);
      auto [loss, grads] = step(rows);
      if (!std::isfinite(loss)) {
        throw NumericError("training diverged: non-finite loss in epoch " + std::to_string(epoch) + " (lr " +
                           std::to_string(lr) + ")");
      }
      sgd_step(net, grads, lr);
    }
    const double epoch_loss = full_loss();
    if (!std::isfinite(epoch_loss))
      throw NumericError("training diverged: non-finite training-set loss after epoch " + std::to_string(epoch));
    history.push_back(epoch_loss);
  }
  return history;
}

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> rows) {
  Matrix out(rows.size(), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    auto src = m.row(rows[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

Matrix covariance(const Matrix& samples) {
  const std::size_t n = samples.rows();
  if (n < 2) throw std::invalid_argument("covariance: need at least 2 samples");
  const std::size_t k = samples.cols();
  const Vector mean = centroid(samples);
  Matrix cov(k, k);
  for (std::size_t r = 0; r < n; ++r) {
    auto x = samples.row(r);
    for (std::size_t i = 0; i < k; ++i) {
      const double di = x[i] - mean[i];
      for (std::size_t j = i; j < k; ++j) cov(i, j) += di * (x[j] - mean[j]);
    }
  }
  const double scale = 1.0 / static_cast<double>(n - 1);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i; j < k; ++j) {
      cov(i, j) *= scale;
      cov(j, i) = cov(i, j);
    }
  }
  return cov;
}

PretrainedModel::PretrainedModel(MLPNetwork net, Matrix sigma_d, TrainConfig config, std::vector<double> loss_history)
    : net_(std::move(net)), sigma_d_(std::move(sigma_d)), config_(std::move(config)),
      loss_history_(std::move(loss_history)) {
  if (sigma_d_.rows() != net_.output_dim() || sigma_d_.cols() != net_.output_dim())
    throw std::invalid_argument("PretrainedModel: sigma_D must be K x K");
}

Matrix estimate_sigma_d(const MLPNetwork& net, const LabeledDataset& ds) {
  if (ds.size() < 2) throw std::invalid_argument("estimate_sigma_d: need at least 2 samples");
  return covariance(forward(net, ds.features));
}

PretrainedModel train_pretrained(const LabeledDataset& ds, const TrainConfig& config) {
  if (ds.num_classes < 2) throw ConfigError("train_pretrained: need at least 2 classes");
  const std::vector<std::size_t> labels = ds.class_indices();

  std::vector<std::size_t> dims{ds.dim()};
  dims.insert(dims.end(), config.hidden.begin(), config.hidden.end());
  dims.push_back(ds.num_classes);
  MLPNetwork net = MLPNetwork::glorot_uniform(dims, derive_seed(config.seed, stream::kPretrainInit));

  std::vector<std::size_t> batch_labels;
  auto step = [&](std::span<const std::size_t> rows) {
    batch_labels.clear();
    for (std::size_t r : rows) batch_labels.push_back(labels[r]);
    GradientTape tape;
    tape.record(forward_trace(net, gather_rows(ds.features, rows)));
    BatchLoss loss = softmax_cross_entropy(tape.trace().logits, batch_labels);
    tape.set_loss(loss.value, std::move(loss.logit_grad));
    return std::pair{loss.value, backward(net, tape)};
  };
  auto full = [&] { return softmax_cross_entropy(forward(net, ds.features), labels).value; };
  auto history = run_sgd(net, ds.size(), config, derive_seed(config.seed, stream::kPretrainShuffle), step, full);
  Matrix sigma = estimate_sigma_d(net, ds);
  if (!sigma.all_finite()) throw NumericError("train_pretrained: non-finite sigma_D");
  return PretrainedModel(std::move(net), std::move(sigma), config, std::move(history));
}

Vector extract_rep(const PretrainedModel& model, std::span<const double> x) { return forward(model.net(), x); }

Matrix extract_rep(const PretrainedModel& model, const Matrix& batch) { return forward(model.net(), batch); }

void save_pretrained(const PretrainedModel& model, const std::filesystem::path& path) {
  save_checkpoint(model.net(), path);
  std::string meta(kMetaMagic);
  put_u64(meta, model.num_classes());
  put_u64(meta, model.input_dim());
  put_u64(meta, model.config().seed);
  for (double v : model.sigma_d().data()) put_f64(meta, v);
  write_file(path.string() + ".meta", meta);
}

PretrainedModel load_pretrained(const std::filesystem::path& path) {
  MLPNetwork net = load_checkpoint(path);
  const std::string meta = read_file(path.string() + ".meta");
  ByteReader in(meta);
  if (in.take(kMetaMagic.size()) != kMetaMagic) throw ParseError("not a DRLMETA1 sidecar", 0);
  const std::uint64_t k = in.u64();
  const std::uint64_t dim = in.u64();
  TrainConfig config;
  config.seed = in.u64();
  if (k != net.output_dim() || dim != net.input_dim()) throw ParseError("sidecar shape disagrees with checkpoint", 0);
  Matrix sigma(k, k);
  for (double& v : sigma.data()) v = in.f64();
  if (!in.at_end()) throw ParseError("trailing bytes in sidecar", 0);
  auto dims = net.layer_dims();
  config.hidden.assign(dims.begin() + 1, dims.end() - 1);
  return PretrainedModel(std::move(net), std::move(sigma), config);
}

}  // namespace drl
