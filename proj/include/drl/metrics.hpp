#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "drl/detectors.hpp"
#include "drl/matrix.hpp"

namespace drl {

// All metrics treat higher scores as in-distribution. Every function taking
// ID/OOD score lists throws std::invalid_argument when either list is empty.

// Mann-Whitney AUROC with average ranks for ties; identical to counting
// ID > OOD pairs with ties as one half.
double auroc(std::span<const double> id_scores, std::span<const double> ood_scores);
double auroc(std::span<const ScoredSample> samples);

// Operating point at the largest threshold tau with |ID >= tau| / n_id >= 0.95.
struct OperatingPoint {
  double threshold = 0.0;
  double tpr = 0.0;
  double fpr = 0.0;
};
OperatingPoint tpr95_operating_point(std::span<const double> id_scores, std::span<const double> ood_scores);

double fpr_at_95_tpr(std::span<const double> id_scores, std::span<const double> ood_scores);
double fpr_at_95_tpr(std::span<const ScoredSample> samples);
// 0.5 * (1 - TPR) + 0.5 * FPR at the FPR95 threshold.
double detection_error(std::span<const double> id_scores, std::span<const double> ood_scores);
double detection_error(std::span<const ScoredSample> samples);

struct ReliabilityBin {
  double lower = 0.0;
  double upper = 0.0;
  std::size_t count = 0;
  double accuracy = 0.0;    // 0 for an empty bin
  double confidence = 0.0;  // mean confidence, 0 for an empty bin
};

inline constexpr std::size_t kEceBins = 20;

// Equal-width bins (lower, upper] on [0, 1]; a confidence of exactly 0 falls in
// the first bin.
std::vector<ReliabilityBin> reliability_bins(std::span<const double> confidences,
                                             std::span<const std::uint8_t> correct, std::size_t n_bins = kEceBins);
double ece(std::span<const double> confidences, std::span<const std::uint8_t> correct, std::size_t n_bins = kEceBins);

double accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> labels);

struct MetricsReport {
  std::string detector;
  std::string dataset;
  double auroc = 0.0;
  double fpr95 = 0.0;
  double detection = 0.0;
  double accuracy = 0.0;
  double ece = 0.0;
  std::size_t n_id = 0;
  std::size_t n_ood = 0;
  std::uint64_t seed = 0;
};

// Argmax predictions (lowest index on ties) and max-probability confidences.
struct Classification {
  std::vector<std::size_t> predictions;
  Vector confidences;
  std::vector<std::uint8_t> correct;
};
Classification classify(const Matrix& probabilities, std::span<const std::size_t> labels);

std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsReport& r);
void write_metrics(const std::filesystem::path& path, std::span<const MetricsReport> reports);

}  // namespace drl
