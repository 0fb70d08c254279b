#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "drl/auxiliary.hpp"
#include "drl/config.hpp"
#include "drl/datagen.hpp"
#include "drl/detectors.hpp"
#include "drl/gradcheck.hpp"
#include "drl/metrics.hpp"
#include "drl/pretrain.hpp"

namespace drl {

struct TrialData {
  LabeledDataset train;
  LabeledDataset test;
  std::vector<LabeledDataset> ood;  // parallel to config.ood_sets
};

std::uint64_t trial_seed(const ExperimentConfig& config, std::size_t trial);
TrialData make_trial_data(const ExperimentConfig& config, std::uint64_t seed);
PretrainedModel train_trial_pretrained(const ExperimentConfig& config, const TrialData& data, std::uint64_t seed);
DRLModel train_trial_drl(const ExperimentConfig& config, const PretrainedModel& pretrained, const TrialData& data,
                         std::uint64_t seed, double epsilon, SigmaKind sigma);
// `count` independently initialized classifiers; the first is `pretrained`.
std::vector<MLPNetwork> train_ensemble_members(const ExperimentConfig& config, const PretrainedModel& pretrained,
                                               const TrialData& data, std::uint64_t seed, std::size_t count);

// One report per OOD set; accuracy and ECE come from the detector's class
// probabilities on the ID test set.
std::vector<MetricsReport> evaluate_detector(const Detector& detector, const std::string& name,
                                             const ExperimentConfig& config, const TrialData& data,
                                             std::uint64_t seed);

struct SummaryRow {
  std::string detector;
  std::string dataset;
  std::size_t trials = 0;
  // auroc, fpr95, detection, accuracy, ece
  double mean[5] = {};
  double std[5] = {};
};

// Groups per-trial rows by (detector, dataset) in first-appearance order.
// std is the n-1 sample standard deviation, 0 for a single trial.
std::vector<SummaryRow> summarize(std::span<const MetricsReport> rows);

struct RunRecord {
  std::string config_hash;
  std::vector<MetricsReport> trials;
  std::vector<SummaryRow> summary;
  // Ablation only: pooled ID-test reliability bins per arm.
  std::vector<std::pair<std::string, std::vector<ReliabilityBin>>> reliability;
  // Epsilon sweep only: grid points whose auxiliary training diverged. They
  // contribute no rows; the sweep carries on with the rest of the grid.
  std::vector<std::string> failures;
};

// Mean over datasets of the summary AUROC means of one detector.
double mean_auroc(const RunRecord& record, const std::string& detector);
// Summary AUROC mean for one (detector, dataset) pair.
double mean_auroc(const RunRecord& record, const std::string& detector, const std::string& dataset);
bool has_summary(const RunRecord& record, const std::string& detector);
const SummaryRow& find_summary(const RunRecord& record, const std::string& detector, const std::string& dataset);

std::string config_hash(const ExperimentConfig& config);

// Every runner writes metrics.csv, summary.csv and resolved.cfg (plus its
// plots) into out_dir unless out_dir is empty. When a trial fails, rows
// gathered so far are flushed before the exception propagates.
RunRecord run_compare(const ExperimentConfig& config, const std::filesystem::path& out_dir);
RunRecord run_epsilon_sweep(const ExperimentConfig& config, const std::filesystem::path& out_dir);
RunRecord run_sigma_study(const ExperimentConfig& config, const std::filesystem::path& out_dir);
RunRecord run_ablation(const ExperimentConfig& config, const std::filesystem::path& out_dir);
RunRecord run_ensemble_compare(const ExperimentConfig& config, const std::filesystem::path& out_dir);

struct GradientCase {
  std::string target;  // "aux_loss" or "odin_input"
  std::size_t instance = 0;
  GradCheckReport report;
};

// Random small instances of the auxiliary loss (w.r.t. the auxiliary
// parameters) and the ODIN input gradient, each checked against central
// differences. Returns one case per target per instance.
std::vector<GradientCase> run_gradient_suite(std::size_t instances, std::uint64_t seed,
                                             const GradCheckTolerance& tolerance = {});
std::string gradient_suite_csv(std::span<const GradientCase> cases);

std::string epsilon_label(double epsilon);
std::string summary_csv(std::span<const SummaryRow> rows);

}  // namespace drl
