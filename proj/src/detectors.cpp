#include "drl/detectors.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "drl/checkpoint.hpp"
#include "drl/error.hpp"
#include "drl/loss.hpp"

namespace drl {

namespace {

double max_entry(std::span<const double> v) { return *std::max_element(v.begin(), v.end()); }

Matrix as_batch(std::span<const double> x) { return Matrix(1, x.size(), Vector(x.begin(), x.end())); }

Vector scaled(std::span<const double> v, double temperature) {
  Vector out(v.begin(), v.end());
  for (double& x : out) x /= temperature;
  return out;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const Vector p = softmax(logits.row(r));
    std::copy(p.begin(), p.end(), out.row(r).begin());
  }
  return out;
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

std::string_view to_string(DetectorKind kind) {
  switch (kind) {
    case DetectorKind::Msp: return "msp";
    case DetectorKind::Odin: return "odin";
    case DetectorKind::Energy: return "energy";
    case DetectorKind::Mahalanobis: return "mahalanobis";
    case DetectorKind::Rectified: return "ra";
    case DetectorKind::Knn: return "knn";
    case DetectorKind::Ensemble: return "ensemble";
    case DetectorKind::Drl: return "drl";
  }
  return "?";
}

DetectorKind detector_kind_from_string(std::string_view s) {
  for (auto kind : {DetectorKind::Msp, DetectorKind::Odin, DetectorKind::Energy, DetectorKind::Mahalanobis,
                    DetectorKind::Rectified, DetectorKind::Knn, DetectorKind::Ensemble, DetectorKind::Drl}) {
    if (s == to_string(kind)) return kind;
  }
  throw ConfigError("unknown detector '" + std::string(s) + "'");
}

void DetectorConfig::validate() const {
  if (!(energy_temperature > 0.0) || !(odin_temperature > 0.0)) throw ConfigError("temperatures must be positive");
  if (!(odin_delta >= 0.0)) throw ConfigError("odin delta must be nonnegative");
  if (knn_k == 0) throw ConfigError("knn k must be at least 1");
  if (!(ra_percentile >= 0.0)) throw ConfigError("ra percentile must be nonnegative");
  if (ensemble_size == 0) throw ConfigError("ensemble size must be at least 1");
  if (!(mahalanobis_ridge >= 0.0)) throw ConfigError("mahalanobis ridge must be nonnegative");
}

// ---- DRL --------------------------------------------------------------------

Vector combine_softmax(std::span<const double> c, std::span<const double> d) {
  const Vector pc = softmax(c);
  const Vector pd = softmax(d);
  if (pc.size() != pd.size()) throw std::invalid_argument("combine_softmax: length mismatch");
  Vector out(pc.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (pc[i] + pd[i]) / 2.0;
  return out;
}

Matrix drl_output(const DRLModel& model, const Matrix& batch) {
  const DualRepresentation rep = represent(model, batch);
  Matrix out(batch.rows(), model.num_classes());
  for (std::size_t r = 0; r < batch.rows(); ++r) {
    const Vector o = combine_softmax(rep.c.row(r), rep.d.row(r));
    std::copy(o.begin(), o.end(), out.row(r).begin());
  }
  return out;
}

Vector drl_output(const DRLModel& model, std::span<const double> x) { return drl_output(model, as_batch(x)).row_vector(0); }

double drl_score(const DRLModel& model, std::span<const double> x) { return max_entry(drl_output(model, x)); }

// ---- single-network scores --------------------------------------------------

double msp_score(const MLPNetwork& net, std::span<const double> x) { return max_entry(softmax(forward(net, x))); }

double energy_from_logits(std::span<const double> logits, double temperature) {
  return temperature * log_sum_exp(scaled(logits, temperature));
}

double energy_score(const MLPNetwork& net, std::span<const double> x, double temperature) {
  return energy_from_logits(forward(net, x), temperature);
}

namespace {

// Input gradients of -log max softmax(g(x)/T) for every row of the batch.
Matrix odin_loss_input_grad(const MLPNetwork& net, const Matrix& batch, double temperature) {
  GradientTape tape;
  tape.record(forward_trace(net, batch));
  const Matrix& logits = tape.trace().logits;
  Matrix cot(logits.rows(), logits.cols());
  double loss = 0.0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const Vector p = softmax(scaled(logits.row(r), temperature));
    const std::size_t top = argmax(p);
    loss -= std::log(p[top]);
    auto c = cot.row(r);
    for (std::size_t k = 0; k < p.size(); ++k) c[k] = (p[k] - (k == top ? 1.0 : 0.0)) / temperature;
  }
  tape.set_loss(loss, std::move(cot));
  return backward(net, tape).input;
}

}  // namespace

Vector odin_input_gradient(const MLPNetwork& net, std::span<const double> x, double temperature) {
  Vector g = odin_loss_input_grad(net, as_batch(x), temperature).row_vector(0);
  for (double& v : g) v = -v;
  return g;
}

Vector odin_scores(const MLPNetwork& net, const Matrix& batch, double temperature, std::span<const double> step) {
  if (!(temperature > 0.0)) throw std::invalid_argument("odin: temperature must be positive");
  if (step.size() != batch.cols()) throw std::invalid_argument("odin: step length must equal the input width");
  Matrix perturbed = batch;
  bool any_step = false;
  for (double s : step) any_step = any_step || s != 0.0;
  if (any_step) {
    const Matrix grad = odin_loss_input_grad(net, batch, temperature);
    for (std::size_t r = 0; r < batch.rows(); ++r)
      for (std::size_t j = 0; j < batch.cols(); ++j) perturbed(r, j) -= step[j] * sign(grad(r, j));
  }
  const Matrix logits = forward(net, perturbed);
  Vector out(batch.rows());
  for (std::size_t r = 0; r < batch.rows(); ++r) out[r] = max_entry(softmax(scaled(logits.row(r), temperature)));
  return out;
}

double odin_score(const MLPNetwork& net, std::span<const double> x, double temperature, std::span<const double> step) {
  return odin_scores(net, as_batch(x), temperature, step)[0];
}

double odin_score(const MLPNetwork& net, std::span<const double> x, double temperature, double delta) {
  if (!(delta >= 0.0)) throw std::invalid_argument("odin: delta must be nonnegative");
  const Vector step(x.size(), delta);
  return odin_score(net, x, temperature, step);
}

// ---- Mahalanobis ------------------------------------------------------------

MahalanobisLayer::MahalanobisLayer(Matrix class_means, const Matrix& covariance, double ridge)
    : means_(std::move(class_means)) {
  if (covariance.rows() != means_.cols() || covariance.cols() != means_.cols())
    throw std::invalid_argument("MahalanobisLayer: covariance shape mismatch");
  Matrix regularized = covariance;
  for (std::size_t i = 0; i < regularized.rows(); ++i) regularized(i, i) += ridge;
  try {
    factor_ = cholesky(regularized);
  } catch (const NumericError& e) {
    throw NumericError(std::string("mahalanobis: covariance singular after ridge: ") + e.what());
  }
}

MahalanobisLayer MahalanobisLayer::fit(const Matrix& features, std::span<const std::size_t> labels,
                                       std::size_t num_classes, double ridge) {
  const std::size_t dim = features.cols();
  Matrix means(num_classes, dim);
  std::vector<std::size_t> counts(num_classes, 0);
  for (std::size_t r = 0; r < features.rows(); ++r) {
    ++counts.at(labels[r]);
    for (std::size_t j = 0; j < dim; ++j) means(labels[r], j) += features(r, j);
  }
  for (std::size_t k = 0; k < num_classes; ++k) {
    if (counts[k] == 0) throw std::invalid_argument("mahalanobis: class " + std::to_string(k) + " has no samples");
    for (std::size_t j = 0; j < dim; ++j) means(k, j) /= static_cast<double>(counts[k]);
  }
  Matrix cov(dim, dim);
  Vector centred(dim);
  for (std::size_t r = 0; r < features.rows(); ++r) {
    for (std::size_t j = 0; j < dim; ++j) centred[j] = features(r, j) - means(labels[r], j);
    for (std::size_t i = 0; i < dim; ++i) {
      if (centred[i] == 0.0) continue;
      for (std::size_t j = 0; j < dim; ++j) cov(i, j) += centred[i] * centred[j];
    }
  }
  for (double& v : cov.data()) v /= static_cast<double>(features.rows());
  return MahalanobisLayer(std::move(means), cov, ridge);
}

double MahalanobisLayer::min_distance(std::span<const double> feature) const {
  const std::size_t dim = means_.cols();
  if (feature.size() != dim) throw std::invalid_argument("mahalanobis: feature width mismatch");
  double best = std::numeric_limits<double>::infinity();
  Vector y(dim);
  for (std::size_t k = 0; k < means_.rows(); ++k) {
    // Forward substitution L y = f - mu_k; distance is |y|^2.
    double dist = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      double s = feature[i] - means_(k, i);
      for (std::size_t j = 0; j < i; ++j) s -= factor_(i, j) * y[j];
      y[i] = s / factor_(i, i);
      dist += y[i] * y[i];
    }
    best = std::min(best, dist);
  }
  return best;
}

MahalanobisScorer MahalanobisScorer::fit(const MLPNetwork& net, const LabeledDataset& ds, double ridge) {
  const ForwardTrace trace = forward_trace(net, ds.features);
  const auto labels = ds.class_indices();
  std::vector<MahalanobisLayer> layers;
  for (std::size_t h = 0; h < trace.num_hidden(); ++h)
    layers.push_back(MahalanobisLayer::fit(trace.hidden(h), labels, ds.num_classes, ridge));
  if (layers.empty()) throw ConfigError("mahalanobis: network has no hidden layer");
  return MahalanobisScorer(std::move(layers));
}

Vector MahalanobisScorer::scores(const MLPNetwork& net, const Matrix& batch) const {
  const ForwardTrace trace = forward_trace(net, batch);
  if (trace.num_hidden() != layers_.size()) throw std::invalid_argument("mahalanobis: layer count mismatch");
  Vector out(batch.rows(), 0.0);
  for (std::size_t r = 0; r < batch.rows(); ++r)
    for (std::size_t h = 0; h < layers_.size(); ++h) out[r] -= layers_[h].min_distance(trace.hidden(h).row(r));
  return out;
}

double MahalanobisScorer::score(const MLPNetwork& net, std::span<const double> x) const {
  return scores(net, as_batch(x))[0];
}

// ---- rectified activations --------------------------------------------------

double fit_rectification_threshold(const MLPNetwork& net, const LabeledDataset& ds, double percentile) {
  if (!(percentile >= 0.0)) throw std::invalid_argument("ra: percentile must be nonnegative");
  if (percentile >= 100.0) return std::numeric_limits<double>::infinity();
  const ForwardTrace trace = forward_trace(net, ds.features);
  Vector values(trace.inputs.back().data().begin(), trace.inputs.back().data().end());
  std::sort(values.begin(), values.end());
  const double pos = percentile / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

Vector ra_scores(const MLPNetwork& net, const Matrix& batch, double threshold) {
  const ForwardTrace trace = forward_trace(net, batch);
  Matrix clamped = trace.inputs.back();
  for (double& a : clamped.data()) a = std::min(a, threshold);
  const Matrix logits = apply_output_layer(net, clamped);
  Vector out(batch.rows());
  for (std::size_t r = 0; r < batch.rows(); ++r) out[r] = energy_from_logits(logits.row(r), 1.0);
  return out;
}

double ra_score(const MLPNetwork& net, std::span<const double> x, double threshold) {
  return ra_scores(net, as_batch(x), threshold)[0];
}

// ---- kNN --------------------------------------------------------------------

Vector l2_normalized(std::span<const double> v) {
  Vector out(v.begin(), v.end());
  const double n = norm2(v);
  if (n > 0.0)
    for (double& x : out) x /= n;
  return out;
}

KnnScorer::KnnScorer(Matrix normalized_bank, std::size_t k) : bank_(std::move(normalized_bank)), k_(k) {
  if (k_ == 0 || k_ > bank_.rows())
    throw ConfigError("knn: k=" + std::to_string(k_) + " must lie in [1, " + std::to_string(bank_.rows()) + "]");
}

KnnScorer KnnScorer::fit(const MLPNetwork& net, const LabeledDataset& ds, std::size_t k) {
  Matrix bank = forward_trace(net, ds.features).inputs.back();
  for (std::size_t r = 0; r < bank.rows(); ++r) {
    const Vector n = l2_normalized(bank.row(r));
    std::copy(n.begin(), n.end(), bank.row(r).begin());
  }
  return KnnScorer(std::move(bank), k);
}

double KnnScorer::score_feature(std::span<const double> feature) const {
  const Vector f = l2_normalized(feature);
  Vector dist2(bank_.rows());
  for (std::size_t r = 0; r < bank_.rows(); ++r) {
    auto b = bank_.row(r);
    double s = 0.0;
    for (std::size_t j = 0; j < f.size(); ++j) s += (f[j] - b[j]) * (f[j] - b[j]);
    dist2[r] = s;
  }
  std::nth_element(dist2.begin(), dist2.begin() + static_cast<std::ptrdiff_t>(k_ - 1), dist2.end());
  return -std::sqrt(dist2[k_ - 1]);
}

Vector KnnScorer::scores(const MLPNetwork& net, const Matrix& batch) const {
  const Matrix features = forward_trace(net, batch).inputs.back();
  Vector out(batch.rows());
  for (std::size_t r = 0; r < batch.rows(); ++r) out[r] = score_feature(features.row(r));
  return out;
}

double KnnScorer::score(const MLPNetwork& net, std::span<const double> x) const { return scores(net, as_batch(x))[0]; }

// ---- ensemble ---------------------------------------------------------------

namespace {

Matrix ensemble_output_batch(std::span<const MLPNetwork> nets, const Matrix& batch) {
  if (nets.empty()) throw std::invalid_argument("ensemble: no member networks");
  const std::size_t k = nets.front().output_dim();
  Matrix total(batch.rows(), k);
  for (const auto& net : nets) {
    if (net.output_dim() != k) throw std::invalid_argument("ensemble: members disagree on the class count");
    const Matrix p = softmax_rows(forward(net, batch));
    for (std::size_t i = 0; i < total.size(); ++i) total.data()[i] += p.data()[i];
  }
  for (double& v : total.data()) v /= static_cast<double>(nets.size());
  return total;
}

}  // namespace

Vector ensemble_output(std::span<const MLPNetwork> nets, std::span<const double> x) {
  return ensemble_output_batch(nets, as_batch(x)).row_vector(0);
}

double ensemble_score(std::span<const MLPNetwork> nets, std::span<const double> x) {
  return max_entry(ensemble_output(nets, x));
}

// ---- fitted detectors -------------------------------------------------------

namespace {

Vector row_max(const Matrix& m) {
  Vector out(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) out[r] = max_entry(m.row(r));
  return out;
}

class PretrainedDetector : public Detector {
 public:
  explicit PretrainedDetector(const MLPNetwork& net) : net_(net) {}
  Matrix probabilities(const Matrix& batch) const override { return softmax_rows(forward(net_, batch)); }

 protected:
  const MLPNetwork& net_;
};

class MspDetector final : public PretrainedDetector {
 public:
  using PretrainedDetector::PretrainedDetector;
  std::string name() const override { return "msp"; }
  Vector scores(const Matrix& batch) const override { return row_max(probabilities(batch)); }
};

class EnergyDetector final : public PretrainedDetector {
 public:
  EnergyDetector(const MLPNetwork& net, double temperature) : PretrainedDetector(net), temperature_(temperature) {}
  std::string name() const override { return "energy"; }
  Vector scores(const Matrix& batch) const override {
    const Matrix logits = forward(net_, batch);
    Vector out(batch.rows());
    for (std::size_t r = 0; r < batch.rows(); ++r) out[r] = energy_from_logits(logits.row(r), temperature_);
    return out;
  }

 private:
  double temperature_;
};

class OdinDetector final : public PretrainedDetector {
 public:
  OdinDetector(const MLPNetwork& net, double temperature, Vector step)
      : PretrainedDetector(net), temperature_(temperature), step_(std::move(step)) {}
  std::string name() const override { return "odin"; }
  Vector scores(const Matrix& batch) const override { return odin_scores(net_, batch, temperature_, step_); }

 private:
  double temperature_;
  Vector step_;
};

class MahalanobisDetector final : public PretrainedDetector {
 public:
  MahalanobisDetector(const MLPNetwork& net, MahalanobisScorer scorer)
      : PretrainedDetector(net), scorer_(std::move(scorer)) {}
  std::string name() const override { return "mahalanobis"; }
  Vector scores(const Matrix& batch) const override { return scorer_.scores(net_, batch); }

 private:
  MahalanobisScorer scorer_;
};

class RaDetector final : public PretrainedDetector {
 public:
  RaDetector(const MLPNetwork& net, double threshold) : PretrainedDetector(net), threshold_(threshold) {}
  std::string name() const override { return "ra"; }
  Vector scores(const Matrix& batch) const override { return ra_scores(net_, batch, threshold_); }

 private:
  double threshold_;
};

class KnnDetector final : public PretrainedDetector {
 public:
  KnnDetector(const MLPNetwork& net, KnnScorer scorer) : PretrainedDetector(net), scorer_(std::move(scorer)) {}
  std::string name() const override { return "knn"; }
  Vector scores(const Matrix& batch) const override { return scorer_.scores(net_, batch); }

 private:
  KnnScorer scorer_;
};

class EnsembleDetector final : public Detector {
 public:
  explicit EnsembleDetector(std::span<const MLPNetwork> nets) : nets_(nets) {}
  std::string name() const override { return "ensemble"; }
  Matrix probabilities(const Matrix& batch) const override { return ensemble_output_batch(nets_, batch); }
  Vector scores(const Matrix& batch) const override { return row_max(probabilities(batch)); }

 private:
  std::span<const MLPNetwork> nets_;
};

class DrlDetector final : public Detector {
 public:
  explicit DrlDetector(const DRLModel& model) : model_(model) {}
  std::string name() const override { return "drl"; }
  Matrix probabilities(const Matrix& batch) const override { return drl_output(model_, batch); }
  Vector scores(const Matrix& batch) const override { return row_max(probabilities(batch)); }

 private:
  const DRLModel& model_;
};

template <class T>
const T& require(const T* p, const char* what) {
  if (p == nullptr) throw ConfigError(std::string("detector needs ") + what);
  return *p;
}

}  // namespace

std::unique_ptr<Detector> make_detector(const DetectorConfig& config, const DetectorContext& context) {
  config.validate();
  switch (config.kind) {
    case DetectorKind::Ensemble: {
      if (context.ensemble.size() < config.ensemble_size)
        throw ConfigError("ensemble detector needs " + std::to_string(config.ensemble_size) + " networks, got " +
                          std::to_string(context.ensemble.size()));
      return std::make_unique<EnsembleDetector>(context.ensemble.first(config.ensemble_size));
    }
    case DetectorKind::Drl: return std::make_unique<DrlDetector>(require(context.drl, "a trained DRL model"));
    default: break;
  }
  const MLPNetwork& net = require(context.pretrained, "a pretrained model").net();
  switch (config.kind) {
    case DetectorKind::Msp: return std::make_unique<MspDetector>(net);
    case DetectorKind::Energy: return std::make_unique<EnergyDetector>(net, config.energy_temperature);
    case DetectorKind::Odin: {
      const LabeledDataset& fit = require(context.fit_set, "an ID fit set");
      Vector step(fit.dim(), 0.0);
      if (fit.size() >= 2) {
        const Matrix cov = covariance(fit.features);
        for (std::size_t j = 0; j < step.size(); ++j) step[j] = config.odin_delta * std::sqrt(cov(j, j));
      }
      return std::make_unique<OdinDetector>(net, config.odin_temperature, std::move(step));
    }
    case DetectorKind::Mahalanobis:
      return std::make_unique<MahalanobisDetector>(
          net, MahalanobisScorer::fit(net, require(context.fit_set, "an ID fit set"), config.mahalanobis_ridge));
    case DetectorKind::Rectified:
      return std::make_unique<RaDetector>(
          net, fit_rectification_threshold(net, require(context.fit_set, "an ID fit set"), config.ra_percentile));
    case DetectorKind::Knn:
      return std::make_unique<KnnDetector>(net,
                                           KnnScorer::fit(net, require(context.fit_set, "an ID fit set"), config.knn_k));
    default: break;
  }
  throw ConfigError("unsupported detector");
}

std::vector<ScoredSample> score_sets(const Detector& detector, const Matrix& id_batch, const Matrix& ood_batch) {
  std::vector<ScoredSample> out;
  const std::string name = detector.name();
  const Vector id_scores = detector.scores(id_batch);
  const Vector ood_scores = detector.scores(ood_batch);
  out.reserve(id_scores.size() + ood_scores.size());
  std::size_t index = 0;
  for (double s : id_scores) out.push_back({s, false, name, index++});
  for (double s : ood_scores) out.push_back({s, true, name, index++});
  for (const auto& s : out)
    if (!std::isfinite(s.score)) throw NumericError(name + ": non-finite score for sample " + std::to_string(s.index));
  return out;
}

void write_scores(const std::filesystem::path& path, std::span<const ScoredSample> samples) {
  std::ostringstream out;
  out << "sample_id,detector,score,is_ood\n";
  for (const auto& s : samples) out << s.index << ',' << s.detector << ',' << format_double(s.score) << ',' << (s.is_ood ? 1 : 0) << '\n';
  write_file(path, out.str());
}

}  // namespace drl
