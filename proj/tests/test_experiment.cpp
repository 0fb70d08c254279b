#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>

#include "drl/checkpoint.hpp"
#include "drl/error.hpp"
#include "drl/experiment.hpp"

using namespace drl;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny(std::size_t trials = 1) {
  ExperimentConfig c;
  c.trials = trials;
  c.seed = 11;
  c.num_classes = 3;
  c.dim = 4;
  c.n_train = 300;
  c.n_test = 90;
  c.train.hidden = {16};
  c.train.epochs = 8;
  c.train.milestones = {6};
  c.train.batch_size = 32;
  c.ood_sets = {{"near", {OodKind::ShiftedBlob, 60, 4.0}},
                {"ring", {OodKind::Ring, 60, 0.0}},
                {"box", {OodKind::UniformBox, 60, 0.0}}};
  return c;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("drl_experiment_test_" + name);
  fs::remove_all(p);
  return p;
}

std::size_t line_count(const std::string& text) { return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')); }

void expect_same_metrics(const MetricsReport& a, const MetricsReport& b) {
  EXPECT_EQ(a.dataset, b.dataset);
  EXPECT_EQ(a.auroc, b.auroc);
  EXPECT_EQ(a.fpr95, b.fpr95);
  EXPECT_EQ(a.detection, b.detection);
  EXPECT_EQ(a.accuracy, b.accuracy);
  EXPECT_EQ(a.ece, b.ece);
  EXPECT_EQ(a.seed, b.seed);
}

std::vector<MetricsReport> rows_of(const RunRecord& r, const std::string& detector) {
  std::vector<MetricsReport> out;
  for (const auto& row : r.trials)
    if (row.detector == detector) out.push_back(row);
  return out;
}

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && v[idx[j]] == v[idx[i]]) ++j;
    for (std::size_t k = i; k < j; ++k) r[idx[k]] = (static_cast<double>(i + j) + 1.0) / 2.0;
    i = j;
  }
  return r;
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  const auto rx = ranks(x), ry = ranks(y);
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / rx.size();
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / ry.size();
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace

TEST(TrialData, SeedsAndShapes) {
  const ExperimentConfig c = tiny(3);
  EXPECT_EQ(trial_seed(c, 0), 11u);
  EXPECT_EQ(trial_seed(c, 2), 13u);
  const TrialData a = make_trial_data(c, 11), b = make_trial_data(c, 11), other = make_trial_data(c, 12);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  EXPECT_NE(a.train.features, other.train.features);
  ASSERT_EQ(a.ood.size(), 3u);
  for (const auto& o : a.ood) EXPECT_EQ(o.size(), 60u);
  EXPECT_EQ(a.test.size(), 90u);
  EXPECT_EQ(a.train.size(), 300u);
  EXPECT_EQ(a.train.dim(), 4u);

  ExperimentConfig m = c;
  m.generator = "moons";
  const TrialData moons = make_trial_data(m, 11);
  EXPECT_EQ(moons.train.dim(), 2u);
  EXPECT_EQ(moons.train.num_classes, 2u);
}

TEST(Compare, MspOnlyGivesOneRowPerOodSet) {
  ExperimentConfig c = tiny();
  c.detectors = {DetectorKind::Msp};
  const fs::path out = scratch("msp_only");
  const RunRecord r = run_compare(c, out);
  EXPECT_EQ(r.trials.size(), 3u);
  EXPECT_EQ(line_count(read_file(out / "metrics.csv")), 4u);
  EXPECT_TRUE(fs::exists(out / "summary.csv"));
  EXPECT_TRUE(fs::exists(out / "resolved.cfg"));
  EXPECT_TRUE(fs::exists(out / "compare.svg"));
  EXPECT_EQ(r.config_hash, config_hash(c));
  EXPECT_EQ(r.config_hash.size(), 16u);
  for (const auto& row : r.trials) {
    EXPECT_EQ(row.n_id, 90u);
    EXPECT_EQ(row.n_ood, 60u);
    EXPECT_EQ(row.seed, 11u);
  }
  fs::remove_all(out);
}

TEST(Compare, DeterministicBytes) {
  ExperimentConfig c = tiny();
  c.detectors = {DetectorKind::Msp, DetectorKind::Mahalanobis, DetectorKind::Knn, DetectorKind::Drl};
  const fs::path a = scratch("det_a"), b = scratch("det_b");
  run_compare(c, a);
  run_compare(c, b);
  for (const char* f : {"metrics.csv", "summary.csv", "resolved.cfg", "compare.svg"})
    EXPECT_EQ(read_file(a / f), read_file(b / f)) << f;
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Compare, SummaryRecomputesFromTrials) {
  ExperimentConfig c = tiny(3);
  c.detectors = {DetectorKind::Msp, DetectorKind::Energy};
  const RunRecord r = run_compare(c, {});
  ASSERT_EQ(r.summary.size(), 6u);
  for (const auto& s : r.summary) {
    std::vector<const MetricsReport*> rows;
    for (const auto& t : r.trials)
      if (t.detector == s.detector && t.dataset == s.dataset) rows.push_back(&t);
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_EQ(s.trials, 3u);
    for (int m = 0; m < 5; ++m) {
      auto get = [m](const MetricsReport* p) {
        const double v[5] = {p->auroc, p->fpr95, p->detection, p->accuracy, p->ece};
        return v[m];
      };
      double mean = 0.0;
      for (auto* p : rows) mean += get(p);
      mean /= 3.0;
      double ss = 0.0;
      for (auto* p : rows) ss += (get(p) - mean) * (get(p) - mean);
      EXPECT_NEAR(s.mean[m], mean, 1e-12);
      EXPECT_NEAR(s.std[m], std::sqrt(ss / 2.0), 1e-12);
    }
  }
  EXPECT_NEAR(mean_auroc(r, "msp"),
              (mean_auroc(r, "msp", "near") + mean_auroc(r, "msp", "ring") + mean_auroc(r, "msp", "box")) / 3.0, 1e-15);
  EXPECT_TRUE(has_summary(r, "energy"));
  EXPECT_FALSE(has_summary(r, "drl"));
  EXPECT_THROW(find_summary(r, "drl", "near"), std::out_of_range);
}

TEST(Summarize, SingleTrialHasZeroStd) {
  MetricsReport a{"x", "s", 0.5, 0.2, 0.1, 0.9, 0.05, 1, 1, 1};
  const auto rows = summarize(std::vector<MetricsReport>{a});
  ASSERT_EQ(rows.size(), 1u);
  for (int m = 0; m < 5; ++m) EXPECT_EQ(rows[0].std[m], 0.0);
  const std::string csv = summary_csv(rows);
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "detector,dataset,trials,auroc_mean,auroc_std,fpr95_mean,fpr95_std,detection_mean,detection_std,"
            "accuracy_mean,accuracy_std,ece_mean,ece_std");
}

TEST(Compare, ResolvedConfigReproducesRun) {
  ExperimentConfig c = tiny();
  c.detectors = {DetectorKind::Msp, DetectorKind::Odin, DetectorKind::Rectified};
  const fs::path a = scratch("resolved_a"), b = scratch("resolved_b");
  const RunRecord ra = run_compare(c, a);
  const ExperimentConfig again = load_experiment_config(a / "resolved.cfg");
  EXPECT_EQ(again, c);
  const RunRecord rb = run_compare(again, b);
  EXPECT_EQ(ra.config_hash, rb.config_hash);
  EXPECT_EQ(read_file(a / "metrics.csv"), read_file(b / "metrics.csv"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Compare, FailureFlushesPartialRows) {
  ExperimentConfig c = tiny();
  c.detectors = {DetectorKind::Msp, DetectorKind::Knn};
  c.detector.knn_k = 100000;
  const fs::path out = scratch("partial");
  EXPECT_THROW(run_compare(c, out), ConfigError);
  const std::string metrics = read_file(out / "metrics.csv");
  EXPECT_EQ(line_count(metrics), 4u);
  EXPECT_NE(metrics.find("\nmsp,near,"), std::string::npos);
  EXPECT_FALSE(fs::exists(out / "summary.csv"));
  fs::remove_all(out);
}

TEST(EpsilonSweep, RowsPerGridPointAndZeroIsTwoNetEnsemble) {
  ExperimentConfig c = tiny();
  c.epsilon_grid = {0.0, 0.0001, 0.001, 0.002, 0.005};
  const fs::path out = scratch("sweep");
  const RunRecord r = run_epsilon_sweep(c, out);
  EXPECT_TRUE(r.failures.empty());
  EXPECT_EQ(r.summary.size(), 15u);
  EXPECT_TRUE(fs::exists(out / "epsilon_sweep.svg"));
  EXPECT_FALSE(fs::exists(out / "failures.txt"));

  const TrialData data = make_trial_data(c, 11);
  const PretrainedModel pre = train_trial_pretrained(c, data, 11);
  const DRLModel drl = train_trial_drl(c, pre, data, 11, 0.0, c.sigma);
  const std::vector<MLPNetwork> pair = {pre.net(), drl.aux_net()};
  DetectorConfig dc;
  dc.kind = DetectorKind::Ensemble;
  dc.ensemble_size = 2;
  const auto ens = make_detector(dc, {.ensemble = pair});
  const auto expected = evaluate_detector(*ens, "pair", c, data, 11);
  const auto got = rows_of(r, epsilon_label(0.0));
  ASSERT_EQ(got.size(), 3u);
  for (std::size_t j = 0; j < 3; ++j) expect_same_metrics(got[j], expected[j]);
  fs::remove_all(out);
}

TEST(EpsilonSweep, DivergedPointIsRecordedAndSkipped) {
  ExperimentConfig c = tiny();
  c.epsilon_grid = {0.0, 1e6};
  const fs::path out = scratch("sweep_diverge");
  const RunRecord r = run_epsilon_sweep(c, out);
  ASSERT_EQ(r.failures.size(), 1u);
  EXPECT_NE(r.failures[0].find("diverged"), std::string::npos);
  EXPECT_TRUE(has_summary(r, epsilon_label(0.0)));
  EXPECT_FALSE(has_summary(r, epsilon_label(1e6)));
  EXPECT_TRUE(fs::exists(out / "failures.txt"));
  fs::remove_all(out);
}

TEST(SigmaStudy, AllKindsReportAndIdentityIsExact) {
  ExperimentConfig c = tiny();
  const RunRecord r = run_sigma_study(c, scratch("sigma"));
  EXPECT_EQ(r.summary.size(), 12u);
  for (const auto& row : r.trials) {
    EXPECT_GE(row.auroc, 0.0);
    EXPECT_LE(row.auroc, 1.0);
  }
  for (const char* k : {"pretrained", "identity", "gaussian", "uniform"})
    EXPECT_TRUE(has_summary(r, std::string("drl_sigma=") + k)) << k;
  const TrialData data = make_trial_data(c, 11);
  const PretrainedModel pre = train_trial_pretrained(c, data, 11);
  EXPECT_EQ(resolve_covariance(SigmaKind::Identity, pre, 5).matrix, Matrix::identity(3));
  EXPECT_EQ(train_trial_drl(c, pre, data, 11, c.epsilon, SigmaKind::Identity).sigma_z().matrix, Matrix::identity(3));
  fs::remove_all(scratch("sigma"));
}

TEST(Ablation, ArmsReliabilityAndMspEquivalence) {
  ExperimentConfig c = tiny(2);
  const fs::path out = scratch("ablation");
  const RunRecord r = run_ablation(c, out);
  ASSERT_EQ(r.reliability.size(), 3u);
  for (const auto& [arm, bins] : r.reliability) {
    EXPECT_EQ(bins.size(), 20u);
    std::size_t total = 0;
    for (const auto& b : bins) total += b.count;
    EXPECT_EQ(total, 180u) << arm;
  }
  const std::string rel = read_file(out / "reliability.csv");
  EXPECT_EQ(line_count(rel), 61u);
  EXPECT_EQ(rel.substr(0, rel.find('\n')), "arm,bin,lower,upper,count,accuracy,confidence");
  for (const char* f : {"ablation.svg", "reliability.svg", "metrics.csv", "summary.csv"})
    EXPECT_TRUE(fs::exists(out / f)) << f;

  ExperimentConfig m = c;
  m.detectors = {DetectorKind::Msp};
  const RunRecord baseline = run_compare(m, {});
  const auto d = rows_of(r, "D"), msp = rows_of(baseline, "msp");
  ASSERT_EQ(d.size(), msp.size());
  for (std::size_t i = 0; i < d.size(); ++i) expect_same_metrics(d[i], msp[i]);
  fs::remove_all(out);
}

TEST(Ensemble, SizeOneMatchesMspBaselineAndSeriesPoints) {
  ExperimentConfig c = tiny();
  const fs::path out = scratch("ensemble");
  const RunRecord r = run_ensemble_compare(c, out);
  std::size_t labels = 0;
  for (const auto& s : r.summary) labels += s.dataset == "near";
  EXPECT_EQ(labels, 6u);
  EXPECT_TRUE(fs::exists(out / "ensemble.svg"));

  ExperimentConfig m = c;
  m.detectors = {DetectorKind::Msp};
  const RunRecord baseline = run_compare(m, {});
  const auto one = rows_of(r, "ensemble_M=1"), msp = rows_of(baseline, "msp");
  ASSERT_EQ(one.size(), msp.size());
  for (std::size_t i = 0; i < one.size(); ++i) expect_same_metrics(one[i], msp[i]);
  fs::remove_all(out);
}

TEST(Ensemble, TrendInSizeOnDefaultTask) {
  ExperimentConfig c;
  c.ood_sets = default_ood_sets();
  const RunRecord r = run_ensemble_compare(c, {});
  std::vector<double> sizes, aurocs;
  for (std::size_t m : c.ensemble_sizes) {
    sizes.push_back(static_cast<double>(m));
    aurocs.push_back(mean_auroc(r, "ensemble_M=" + std::to_string(m)));
  }
  const double rho = spearman(sizes, aurocs);
  RecordProperty("spearman", std::to_string(rho));
  EXPECT_GE(rho, 0.0);
}

TEST(GradientSuite, AllInstancesPass) {
  const auto cases = run_gradient_suite(10, 3);
  EXPECT_EQ(cases.size(), 20u);
  for (const auto& c : cases) EXPECT_TRUE(c.report.passed()) << c.target << " " << c.instance;
  const std::string csv = gradient_suite_csv(cases);
  EXPECT_EQ(line_count(csv), 21u);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "target,instance,checked,failures,max_relative_error,max_absolute_error,passed");
}

TEST(Runners, RejectEmptyGrids) {
  ExperimentConfig c = tiny();
  c.epsilon_grid.clear();
  c.sigma_kinds.clear();
  c.ensemble_sizes.clear();
  EXPECT_THROW(run_epsilon_sweep(c, {}), ConfigError);
  EXPECT_THROW(run_sigma_study(c, {}), ConfigError);
  EXPECT_THROW(run_ensemble_compare(c, {}), ConfigError);
}
