#pragma once

#include <cstddef>
#include <filesystem>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "drl/auxiliary.hpp"
#include "drl/datagen.hpp"
#include "drl/matrix.hpp"
#include "drl/network.hpp"
#include "drl/pretrain.hpp"

namespace drl {

// Every detector follows the same orientation: higher score means more
// in-distribution. Distances are negated.
struct ScoredSample {
  double score = 0.0;
  bool is_ood = false;
  std::string detector;
  std::size_t index = 0;
};

enum class DetectorKind { Msp, Odin, Energy, Mahalanobis, Rectified, Knn, Ensemble, Drl };

std::string_view to_string(DetectorKind kind);
DetectorKind detector_kind_from_string(std::string_view s);

struct DetectorConfig {
  DetectorKind kind = DetectorKind::Msp;
  double energy_temperature = 1.0;
  double odin_temperature = 1000.0;
  // Perturbation magnitude, multiplied per feature by the ID-train standard
  // deviation of that feature.
  double odin_delta = 0.0014;
  std::size_t knn_k = 10;
  double ra_percentile = 90.0;
  std::size_t ensemble_size = 5;
  double mahalanobis_ridge = 1e-6;

  // Throws ConfigError on negative magnitudes or a nonpositive temperature.
  void validate() const;

  friend bool operator==(const DetectorConfig&, const DetectorConfig&) = default;
};

// ---- DRL combined output ----------------------------------------------------

// (softmax(c) + softmax(d)) / 2.
Vector combine_softmax(std::span<const double> c, std::span<const double> d);
Vector drl_output(const DRLModel& model, std::span<const double> x);
Matrix drl_output(const DRLModel& model, const Matrix& batch);
double drl_score(const DRLModel& model, std::span<const double> x);

// ---- post-hoc scores on a single network -----------------------------------

double msp_score(const MLPNetwork& net, std::span<const double> x);
// Negative energy T * logsumexp(logits / T).
double energy_from_logits(std::span<const double> logits, double temperature);
double energy_score(const MLPNetwork& net, std::span<const double> x, double temperature);

// Gradient of log max_y softmax(g(x)/T)_y with respect to x.
Vector odin_input_gradient(const MLPNetwork& net, std::span<const double> x, double temperature);
// Max temperature-scaled softmax at x + step * sign(gradient), with the same
// step for every feature or one step per feature.
double odin_score(const MLPNetwork& net, std::span<const double> x, double temperature, double delta);
double odin_score(const MLPNetwork& net, std::span<const double> x, double temperature,
                  std::span<const double> step);
Vector odin_scores(const MLPNetwork& net, const Matrix& batch, double temperature, std::span<const double> step);

// ---- Mahalanobis ------------------------------------------------------------

// Class means and tied covariance of one feature layer.
class MahalanobisLayer {
 public:
  MahalanobisLayer(Matrix class_means, const Matrix& covariance, double ridge);
  static MahalanobisLayer fit(const Matrix& features, std::span<const std::size_t> labels, std::size_t num_classes,
                              double ridge);

  // min_k (f - mu_k)ᵀ (Sigma + ridge I)⁻¹ (f - mu_k).
  double min_distance(std::span<const double> feature) const;
  const Matrix& class_means() const { return means_; }

 private:
  Matrix means_;
  Matrix factor_;
};

// Sum over hidden layers of the negated minimum class distance.
class MahalanobisScorer {
 public:
  static MahalanobisScorer fit(const MLPNetwork& net, const LabeledDataset& ds, double ridge);
  explicit MahalanobisScorer(std::vector<MahalanobisLayer> layers) : layers_(std::move(layers)) {}

  double score(const MLPNetwork& net, std::span<const double> x) const;
  Vector scores(const MLPNetwork& net, const Matrix& batch) const;
  const std::vector<MahalanobisLayer>& layers() const { return layers_; }

 private:
  std::vector<MahalanobisLayer> layers_;
};

// ---- rectified activations --------------------------------------------------

// Percentile (linear interpolation between order statistics) of all
// penultimate activations of `ds`. Percentiles of 100 and above disable the
// clamp and return +infinity.
double fit_rectification_threshold(const MLPNetwork& net, const LabeledDataset& ds, double percentile);
// Energy score after clamping the penultimate activations at `threshold`.
double ra_score(const MLPNetwork& net, std::span<const double> x, double threshold);
Vector ra_scores(const MLPNetwork& net, const Matrix& batch, double threshold);

// ---- k nearest neighbours ---------------------------------------------------

class KnnScorer {
 public:
  // Stores the L2-normalized penultimate features of ds.
  static KnnScorer fit(const MLPNetwork& net, const LabeledDataset& ds, std::size_t k);
  KnnScorer(Matrix normalized_bank, std::size_t k);

  // -(distance from the normalized feature to its k-th nearest bank row).
  double score_feature(std::span<const double> feature) const;
  double score(const MLPNetwork& net, std::span<const double> x) const;
  Vector scores(const MLPNetwork& net, const Matrix& batch) const;

 private:
  Matrix bank_;
  std::size_t k_;
};

Vector l2_normalized(std::span<const double> v);

// ---- deep ensemble ----------------------------------------------------------

// Mean of the member softmax outputs.
Vector ensemble_output(std::span<const MLPNetwork> nets, std::span<const double> x);
double ensemble_score(std::span<const MLPNetwork> nets, std::span<const double> x);

// ---- fitted detectors -------------------------------------------------------

// Models a detector may draw on. Members it needs must be non-null.
struct DetectorContext {
  const PretrainedModel* pretrained = nullptr;
  const DRLModel* drl = nullptr;
  // Independent networks; the first member is the pretrained network.
  std::span<const MLPNetwork> ensemble;
  const LabeledDataset* fit_set = nullptr;
};

class Detector {
 public:
  virtual ~Detector() = default;
  virtual std::string name() const = 0;
  // One score per row, higher means more in-distribution.
  virtual Vector scores(const Matrix& batch) const = 0;
  // Class probabilities of the classifier the detector sits on, used for
  // accuracy and calibration.
  virtual Matrix probabilities(const Matrix& batch) const = 0;
};

std::unique_ptr<Detector> make_detector(const DetectorConfig& config, const DetectorContext& context);

std::vector<ScoredSample> score_sets(const Detector& detector, const Matrix& id_batch, const Matrix& ood_batch);

// CSV `sample_id,detector,score,is_ood`.
void write_scores(const std::filesystem::path& path, std::span<const ScoredSample> samples);

}  // namespace drl
