#include "drl/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>

#include "drl/checkpoint.hpp"
#include "drl/error.hpp"
#include "drl/loss.hpp"
#include "drl/seed.hpp"
#include "drl/svg.hpp"

namespace drl {

namespace {

constexpr const char* kMetricNames[5] = {"auroc", "fpr95", "detection", "accuracy", "ece"};

double metric(const MetricsReport& r, int i) {
  switch (i) {
    case 0: return r.auroc;
    case 1: return r.fpr95;
    case 2: return r.detection;
    case 3: return r.accuracy;
    default: return r.ece;
  }
}

// Max softmax of c alone: the distribution-discriminative arm of the ablation.
class ComponentDetector final : public Detector {
 public:
  explicit ComponentDetector(const DRLModel& model) : model_(model) {}
  std::string name() const override { return "C"; }
  Matrix probabilities(const Matrix& batch) const override {
    const Matrix c = represent(model_, batch).c;
    Matrix out(c.rows(), c.cols());
    for (std::size_t r = 0; r < c.rows(); ++r) {
      const Vector p = softmax(c.row(r));
      std::copy(p.begin(), p.end(), out.row(r).begin());
    }
    return out;
  }
  Vector scores(const Matrix& batch) const override {
    const Matrix p = probabilities(batch);
    Vector out(p.rows());
    for (std::size_t r = 0; r < p.rows(); ++r) out[r] = p(r, argmax(p.row(r)));
    return out;
  }

 private:
  const DRLModel& model_;
};

DetectorContext context_for(const PretrainedModel& pretrained, const DRLModel* drl,
                            std::span<const MLPNetwork> ensemble, const TrialData& data) {
  DetectorContext ctx;
  ctx.pretrained = &pretrained;
  ctx.drl = drl;
  ctx.ensemble = ensemble;
  ctx.fit_set = &data.train;
  return ctx;
}

class Recorder {
 public:
  Recorder(const ExperimentConfig& config, std::filesystem::path out_dir)
      : config_(config), out_dir_(std::move(out_dir)) {
    record_.config_hash = config_hash(config);
    if (!out_dir_.empty()) {
      std::filesystem::create_directories(out_dir_);
      write_file(out_dir_ / "resolved.cfg", resolved_text(config_));
    }
  }

  void add(std::vector<MetricsReport> rows) {
    record_.trials.insert(record_.trials.end(), rows.begin(), rows.end());
  }

  void flush_partial() {
    if (!out_dir_.empty()) write_metrics(out_dir_ / "metrics.csv", record_.trials);
  }

  RunRecord& finish() {
    record_.summary = summarize(record_.trials);
    if (!out_dir_.empty()) {
      write_metrics(out_dir_ / "metrics.csv", record_.trials);
      write_file(out_dir_ / "summary.csv", summary_csv(record_.summary));
    }
    return record_;
  }

  RunRecord& record() { return record_; }
  const std::filesystem::path& out_dir() const { return out_dir_; }

 private:
  const ExperimentConfig& config_;
  std::filesystem::path out_dir_;
  RunRecord record_;
};

template <class Body>
RunRecord run_trials(const ExperimentConfig& config, Recorder& recorder, Body body) {
  for (std::size_t t = 0; t < config.trials; ++t) {
    try {
      body(trial_seed(config, t));
    } catch (...) {
      recorder.flush_partial();
      throw;
    }
  }
  return recorder.finish();
}

std::vector<std::string> dataset_names(const ExperimentConfig& config) {
  std::vector<std::string> out;
  for (const auto& s : config.ood_sets) out.push_back(s.name);
  return out;
}

// Bar chart of mean AUROC: categories are detectors, one series per OOD set.
void plot_grouped_auroc(const RunRecord& record, const ExperimentConfig& config, const std::vector<std::string>& names,
                        const std::vector<std::string>& labels, const std::string& title, const std::string& x_label,
                        const std::filesystem::path& path) {
  PlotSpec spec{PlotKind::Bar, title, x_label, "mean AUROC", labels};
  std::vector<PlotSeries> series;
  for (const auto& ds : dataset_names(config)) {
    PlotSeries s{ds, {}, {}};
    for (const auto& n : names) s.ys.push_back(mean_auroc(record, n, ds));
    series.push_back(std::move(s));
  }
  emit_svg_plot(spec, series, path);
}

}  // namespace

std::uint64_t trial_seed(const ExperimentConfig& config, std::size_t trial) { return config.seed + trial; }

TrialData make_trial_data(const ExperimentConfig& config, std::uint64_t seed) {
  const std::size_t total = config.n_train + config.n_test;
  if (config.n_train == 0 || config.n_test == 0) throw ConfigError("[data] n_train and n_test must be positive");
  LabeledDataset all;
  if (config.generator == "moons") {
    all = gen_two_moons(total + total % 2, config.noise, derive_seed(seed, stream::kData));
  } else {
    BlobSpec spec;
    spec.num_classes = config.num_classes;
    spec.dim = config.dim;
    spec.spread = config.spread;
    spec.center_range = config.center_range;
    spec.n_per_class = (total + config.num_classes - 1) / std::max<std::size_t>(config.num_classes, 1);
    all = gen_gaussian_blobs(spec, derive_seed(seed, stream::kData));
  }
  const double fraction = static_cast<double>(config.n_test) / static_cast<double>(total);
  auto [train, test] = stratified_split(all, fraction, derive_seed(seed, stream::kSplit));
  TrialData data{std::move(train), std::move(test), {}};
  for (std::size_t j = 0; j < config.ood_sets.size(); ++j)
    data.ood.push_back(gen_ood(config.ood_sets[j].spec, data.train, derive_seed(seed, stream::kOod + j)));
  return data;
}

PretrainedModel train_trial_pretrained(const ExperimentConfig& config, const TrialData& data, std::uint64_t seed) {
  TrainConfig train = config.train;
  train.seed = seed;
  return train_pretrained(data.train, train);
}

DRLModel train_trial_drl(const ExperimentConfig& config, const PretrainedModel& pretrained, const TrialData& data,
                         std::uint64_t seed, double epsilon, SigmaKind sigma) {
  AuxConfig aux;
  aux.epsilon = epsilon;
  aux.sigma = sigma;
  aux.hidden = config.aux_hidden;
  aux.train = config.train;
  aux.train.seed = seed;
  return train_auxiliary(pretrained, data.train, aux);
}

std::vector<MLPNetwork> train_ensemble_members(const ExperimentConfig& config, const PretrainedModel& pretrained,
                                               const TrialData& data, std::uint64_t seed, std::size_t count) {
  std::vector<MLPNetwork> nets;
  nets.push_back(pretrained.net());
  for (std::size_t m = 1; m < count; ++m) {
    TrainConfig train = config.train;
    train.seed = derive_seed(seed, stream::kEnsemble + m);
    nets.push_back(train_pretrained(data.train, train).net());
  }
  return nets;
}

std::vector<MetricsReport> evaluate_detector(const Detector& detector, const std::string& name,
                                             const ExperimentConfig& config, const TrialData& data,
                                             std::uint64_t seed) {
  const Vector id_scores = detector.scores(data.test.features);
  if (!all_finite(id_scores)) throw NumericError(name + ": non-finite ID score");
  const Classification cls = classify(detector.probabilities(data.test.features), data.test.class_indices());
  const double acc = accuracy(cls.predictions, data.test.class_indices());
  const double calibration = ece(cls.confidences, cls.correct);

  std::vector<MetricsReport> out;
  for (std::size_t j = 0; j < data.ood.size(); ++j) {
    const Vector ood_scores = detector.scores(data.ood[j].features);
    if (!all_finite(ood_scores)) throw NumericError(name + ": non-finite OOD score");
    const OperatingPoint op = tpr95_operating_point(id_scores, ood_scores);
    MetricsReport r;
    r.detector = name;
    r.dataset = config.ood_sets.at(j).name;
    r.auroc = auroc(id_scores, ood_scores);
    r.fpr95 = op.fpr;
    r.detection = detection_error(id_scores, ood_scores);
    r.accuracy = acc;
    r.ece = calibration;
    r.n_id = id_scores.size();
    r.n_ood = ood_scores.size();
    r.seed = seed;
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<SummaryRow> summarize(std::span<const MetricsReport> rows) {
  std::vector<SummaryRow> out;
  std::map<std::pair<std::string, std::string>, std::vector<const MetricsReport*>> groups;
  for (const auto& r : rows) {
    auto key = std::pair{r.detector, r.dataset};
    if (!groups.contains(key)) out.push_back({r.detector, r.dataset, 0, {}, {}});
    groups[key].push_back(&r);
  }
  for (auto& row : out) {
    const auto& members = groups[{row.detector, row.dataset}];
    row.trials = members.size();
    const double n = static_cast<double>(members.size());
    for (int i = 0; i < 5; ++i) {
      double sum = 0.0;
      for (const auto* m : members) sum += metric(*m, i);
      row.mean[i] = sum / n;
      double sq = 0.0;
      for (const auto* m : members) sq += (metric(*m, i) - row.mean[i]) * (metric(*m, i) - row.mean[i]);
      row.std[i] = members.size() > 1 ? std::sqrt(sq / (n - 1.0)) : 0.0;
    }
  }
  return out;
}

bool has_summary(const RunRecord& record, const std::string& detector) {
  return std::any_of(record.summary.begin(), record.summary.end(),
                     [&](const SummaryRow& r) { return r.detector == detector; });
}

const SummaryRow& find_summary(const RunRecord& record, const std::string& detector, const std::string& dataset) {
  for (const auto& row : record.summary)
    if (row.detector == detector && row.dataset == dataset) return row;
  throw std::out_of_range("no summary row for " + detector + " on " + dataset);
}

double mean_auroc(const RunRecord& record, const std::string& detector, const std::string& dataset) {
  return find_summary(record, detector, dataset).mean[0];
}

double mean_auroc(const RunRecord& record, const std::string& detector) {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& row : record.summary) {
    if (row.detector != detector) continue;
    total += row.mean[0];
    ++n;
  }
  if (n == 0) throw std::out_of_range("no summary rows for " + detector);
  return total / static_cast<double>(n);
}

std::string config_hash(const ExperimentConfig& config) { return sha256_hex(resolved_text(config)).substr(0, 16); }

std::vector<GradientCase> run_gradient_suite(std::size_t instances, std::uint64_t seed,
                                             const GradCheckTolerance& tolerance) {
  std::vector<GradientCase> out;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> small(2, 5);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double temperatures[] = {1.0, 10.0, 1000.0};
  for (std::size_t i = 0; i < instances; ++i) {
    const std::size_t in = small(rng), hidden = small(rng) + 1, k = small(rng), batch = small(rng);
    const std::vector<std::size_t> dims = {in, hidden, k};
    const MLPNetwork net = MLPNetwork::glorot_uniform(dims, rng());

    Matrix x(batch, in);
    for (double& v : x.data()) v = normal(rng);
    Matrix d(batch, k);
    for (double& v : d.data()) v = 3.0 * normal(rng);
    std::vector<std::size_t> labels(batch);
    for (auto& l : labels) l = rng() % k;
    Matrix a(k, k);
    for (double& v : a.data()) v = normal(rng);
    Matrix sigma = matmul(a, a.transposed());
    const double eps = std::uniform_real_distribution<double>(0.001, 0.1)(rng);

    const Vector point = flatten_parameters(net);
    const AuxLoss at = aux_loss(net, x, d, labels, sigma, eps);
    const Vector analytic = flatten_gradients(backward(net, at.tape));
    MLPNetwork probe = net;
    auto loss = [&](std::span<const double> p) {
      assign_parameters(probe, p);
      return aux_loss(probe, x, d, labels, sigma, eps).value;
    };
    out.push_back({"aux_loss", i, check_gradient(loss, point, analytic, tolerance)});

    const double temperature = temperatures[i % 3];
    const Vector x0 = x.row_vector(0);
    const std::size_t top = argmax(forward(net, x0));
    auto log_msp = [&](std::span<const double> p) {
      Vector z = forward(net, p);
      for (double& v : z) v /= temperature;
      return z[top] - log_sum_exp(z);
    };
    out.push_back({"odin_input", i, check_gradient(log_msp, x0, odin_input_gradient(net, x0, temperature), tolerance)});
  }
  return out;
}

std::string gradient_suite_csv(std::span<const GradientCase> cases) {
  std::ostringstream out;
  out << "target,instance,checked,failures,max_relative_error,max_absolute_error,passed\n";
  for (const auto& c : cases)
    out << c.target << ',' << c.instance << ',' << c.report.checked << ',' << c.report.failures << ','
        << format_double(c.report.max_relative_error) << ',' << format_double(c.report.max_absolute_error) << ','
        << (c.report.passed() ? "true" : "false") << '\n';
  return out.str();
}

std::string epsilon_label(double epsilon) { return "drl_eps=" + format_double(epsilon); }

std::string summary_csv(std::span<const SummaryRow> rows) {
  std::ostringstream out;
  out << "detector,dataset,trials";
  for (const char* m : kMetricNames) out << ',' << m << "_mean," << m << "_std";
  out << '\n';
  for (const auto& r : rows) {
    out << r.detector << ',' << r.dataset << ',' << r.trials;
    for (int i = 0; i < 5; ++i) out << ',' << format_double(r.mean[i]) << ',' << format_double(r.std[i]);
    out << '\n';
  }
  return out.str();
}

RunRecord run_compare(const ExperimentConfig& config, const std::filesystem::path& out_dir) {
  Recorder recorder(config, out_dir);
  const bool wants = [&] {
    return std::find(config.detectors.begin(), config.detectors.end(), DetectorKind::Drl) != config.detectors.end();
  }();
  const bool wants_ensemble =
      std::find(config.detectors.begin(), config.detectors.end(), DetectorKind::Ensemble) != config.detectors.end();

  RunRecord record = run_trials(config, recorder, [&](std::uint64_t seed) {
    const TrialData data = make_trial_data(config, seed);
    const PretrainedModel pretrained = train_trial_pretrained(config, data, seed);
    std::optional<DRLModel> drl;
    if (wants) drl = train_trial_drl(config, pretrained, data, seed, config.epsilon, config.sigma);
    std::vector<MLPNetwork> members;
    if (wants_ensemble)
      members = train_ensemble_members(config, pretrained, data, seed, config.detector.ensemble_size);
    const DetectorContext ctx = context_for(pretrained, drl ? &*drl : nullptr, members, data);
    for (DetectorKind kind : config.detectors) {
      DetectorConfig dc = config.detector;
      dc.kind = kind;
      const auto detector = make_detector(dc, ctx);
      recorder.add(evaluate_detector(*detector, std::string(to_string(kind)), config, data, seed));
    }
  });

  if (!out_dir.empty() && !config.detectors.empty()) {
    std::vector<std::string> names;
    for (DetectorKind k : config.detectors) names.emplace_back(to_string(k));
    plot_grouped_auroc(record, config, names, names, "OOD detection by detector", "detector",
                       out_dir / "compare.svg");
  }
  return record;
}

RunRecord run_epsilon_sweep(const ExperimentConfig& config, const std::filesystem::path& out_dir) {
  if (config.epsilon_grid.empty()) throw ConfigError("[drl] epsilon_grid is empty");
  Recorder recorder(config, out_dir);
  RunRecord record = run_trials(config, recorder, [&](std::uint64_t seed) {
    const TrialData data = make_trial_data(config, seed);
    const PretrainedModel pretrained = train_trial_pretrained(config, data, seed);
    for (double eps : config.epsilon_grid) {
      try {
        const DRLModel drl = train_trial_drl(config, pretrained, data, seed, eps, config.sigma);
        DetectorConfig dc = config.detector;
        dc.kind = DetectorKind::Drl;
        const auto detector = make_detector(dc, context_for(pretrained, &drl, {}, data));
        recorder.add(evaluate_detector(*detector, epsilon_label(eps), config, data, seed));
      } catch (const NumericError& e) {
        recorder.record().failures.push_back("seed " + std::to_string(seed) + ": " + e.what());
      }
    }
  });
  if (!out_dir.empty() && !record.failures.empty()) {
    std::string text;
    for (const auto& f : record.failures) text += f + "\n";
    write_file(out_dir / "failures.txt", text);
  }

  if (!out_dir.empty()) {
    PlotSpec spec{PlotKind::Line, "Effect of the perturbation coefficient", "epsilon", "mean AUROC", {}};
    std::vector<PlotSeries> series;
    for (double eps : config.epsilon_grid) spec.categories.push_back(format_double(eps));
    for (const auto& ds : dataset_names(config)) {
      PlotSeries s{ds, {}, {}};
      for (std::size_t i = 0; i < config.epsilon_grid.size(); ++i) {
        if (!has_summary(record, epsilon_label(config.epsilon_grid[i]))) continue;
        s.xs.push_back(static_cast<double>(i));
        s.ys.push_back(mean_auroc(record, epsilon_label(config.epsilon_grid[i]), ds));
      }
      if (!s.ys.empty()) series.push_back(std::move(s));
    }
    if (!series.empty()) emit_svg_plot(spec, series, out_dir / "epsilon_sweep.svg");
  }
  return record;
}

RunRecord run_sigma_study(const ExperimentConfig& config, const std::filesystem::path& out_dir) {
  if (config.sigma_kinds.empty()) throw ConfigError("[drl] sigma_kinds is empty");
  Recorder recorder(config, out_dir);
  auto label = [](SigmaKind k) { return "drl_sigma=" + std::string(to_string(k)); };
  RunRecord record = run_trials(config, recorder, [&](std::uint64_t seed) {
    const TrialData data = make_trial_data(config, seed);
    const PretrainedModel pretrained = train_trial_pretrained(config, data, seed);
    for (SigmaKind kind : config.sigma_kinds) {
      const DRLModel drl = train_trial_drl(config, pretrained, data, seed, config.epsilon, kind);
      DetectorConfig dc = config.detector;
      dc.kind = DetectorKind::Drl;
      const auto detector = make_detector(dc, context_for(pretrained, &drl, {}, data));
      recorder.add(evaluate_detector(*detector, label(kind), config, data, seed));
    }
  });

  if (!out_dir.empty()) {
    std::vector<std::string> names, labels;
    for (SigmaKind k : config.sigma_kinds) {
      names.push_back(label(k));
      labels.emplace_back(to_string(k));
    }
    plot_grouped_auroc(record, config, names, labels, "Choice of the component covariance", "Sigma_Z",
                       out_dir / "sigma_study.svg");
  }
  return record;
}

RunRecord run_ablation(const ExperimentConfig& config, const std::filesystem::path& out_dir) {
  Recorder recorder(config, out_dir);
  const std::vector<std::string> arms = {"D", "C", "D+C"};
  std::map<std::string, std::pair<Vector, std::vector<std::uint8_t>>> pooled;

  RunRecord& record = [&]() -> RunRecord& {
    run_trials(config, recorder, [&](std::uint64_t seed) {
      const TrialData data = make_trial_data(config, seed);
      const PretrainedModel pretrained = train_trial_pretrained(config, data, seed);
      const DRLModel drl = train_trial_drl(config, pretrained, data, seed, config.epsilon, config.sigma);
      const DetectorContext ctx = context_for(pretrained, &drl, {}, data);
      DetectorConfig dc = config.detector;
      dc.kind = DetectorKind::Msp;
      const auto d_arm = make_detector(dc, ctx);
      dc.kind = DetectorKind::Drl;
      const auto dc_arm = make_detector(dc, ctx);
      const ComponentDetector c_arm(drl);
      const Detector* detectors[3] = {d_arm.get(), &c_arm, dc_arm.get()};
      const auto labels = data.test.class_indices();
      for (std::size_t a = 0; a < arms.size(); ++a) {
        recorder.add(evaluate_detector(*detectors[a], arms[a], config, data, seed));
        const Classification cls = classify(detectors[a]->probabilities(data.test.features), labels);
        auto& [conf, correct] = pooled[arms[a]];
        conf.insert(conf.end(), cls.confidences.begin(), cls.confidences.end());
        correct.insert(correct.end(), cls.correct.begin(), cls.correct.end());
      }
    });
    return recorder.record();
  }();

  for (const auto& arm : arms) {
    const auto& [conf, correct] = pooled[arm];
    record.reliability.emplace_back(arm, reliability_bins(conf, correct, kEceBins));
  }

  if (!out_dir.empty()) {
    std::ostringstream rel;
    rel << "arm,bin,lower,upper,count,accuracy,confidence\n";
    for (const auto& [arm, bins] : record.reliability)
      for (std::size_t b = 0; b < bins.size(); ++b)
        rel << arm << ',' << b << ',' << format_double(bins[b].lower) << ',' << format_double(bins[b].upper) << ','
            << bins[b].count << ',' << format_double(bins[b].accuracy) << ',' << format_double(bins[b].confidence)
            << '\n';
    write_file(out_dir / "reliability.csv", rel.str());

    PlotSpec spec{PlotKind::Bar, "Ablation of the two representations", "metric", "value", {"AUROC", "Accuracy", "ECE"}};
    std::vector<PlotSeries> series;
    for (const auto& arm : arms) {
      double auc = 0.0, acc = 0.0, cal = 0.0;
      std::size_t n = 0;
      for (const auto& row : record.summary) {
        if (row.detector != arm) continue;
        auc += row.mean[0];
        acc += row.mean[3];
        cal += row.mean[4];
        ++n;
      }
      series.push_back({arm, {}, {auc / n, acc / n, cal / n}});
    }
    emit_svg_plot(spec, series, out_dir / "ablation.svg");

    PlotSpec rspec{PlotKind::Line, "Reliability (pooled ID test)", "confidence", "accuracy", {}};
    std::vector<PlotSeries> rseries;
    for (const auto& [arm, bins] : record.reliability) {
      PlotSeries s{arm, {}, {}};
      for (const auto& b : bins) {
        if (b.count == 0) continue;
        s.xs.push_back(b.confidence);
        s.ys.push_back(b.accuracy);
      }
      if (!s.ys.empty()) rseries.push_back(std::move(s));
    }
    if (!rseries.empty()) emit_svg_plot(rspec, rseries, out_dir / "reliability.svg");
  }
  return record;
}

RunRecord run_ensemble_compare(const ExperimentConfig& config, const std::filesystem::path& out_dir) {
  if (config.ensemble_sizes.empty()) throw ConfigError("[drl] ensemble_sizes is empty");
  Recorder recorder(config, out_dir);
  const std::size_t largest = *std::max_element(config.ensemble_sizes.begin(), config.ensemble_sizes.end());
  auto label = [](std::size_t m) { return "ensemble_M=" + std::to_string(m); };
  RunRecord record = run_trials(config, recorder, [&](std::uint64_t seed) {
    const TrialData data = make_trial_data(config, seed);
    const PretrainedModel pretrained = train_trial_pretrained(config, data, seed);
    const std::vector<MLPNetwork> members = train_ensemble_members(config, pretrained, data, seed, largest);
    const DRLModel drl = train_trial_drl(config, pretrained, data, seed, config.epsilon, config.sigma);
    const DetectorContext ctx = context_for(pretrained, &drl, members, data);
    for (std::size_t m : config.ensemble_sizes) {
      DetectorConfig dc = config.detector;
      dc.kind = DetectorKind::Ensemble;
      dc.ensemble_size = m;
      recorder.add(evaluate_detector(*make_detector(dc, ctx), label(m), config, data, seed));
    }
    DetectorConfig dc = config.detector;
    dc.kind = DetectorKind::Drl;
    recorder.add(evaluate_detector(*make_detector(dc, ctx), "drl", config, data, seed));
  });

  if (!out_dir.empty()) {
    PlotSpec spec{PlotKind::Line, "Ensembles of independent networks vs DRL", "number of networks",
                  "mean AUROC", {}};
    PlotSeries ens{"ensemble", {}, {}};
    for (std::size_t m : config.ensemble_sizes) {
      ens.xs.push_back(static_cast<double>(m));
      ens.ys.push_back(mean_auroc(record, label(m)));
    }
    PlotSeries drl{"drl (2 networks)", {2.0}, {mean_auroc(record, "drl")}};
    emit_svg_plot(spec, {ens, drl}, out_dir / "ensemble.svg");
  }
  return record;
}

}  // namespace drl
