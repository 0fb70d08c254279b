#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "drl/checkpoint.hpp"
#include "drl/error.hpp"
#include "drl/experiment.hpp"

namespace fs = std::filesystem;
using namespace drl;

namespace {

struct Options {
  std::string config;
  std::string out = ".";
  std::size_t instances = 10;
};

ExperimentConfig load(const Options& opt) {
  if (opt.config.empty()) return ExperimentConfig{.ood_sets = default_ood_sets()};
  return load_experiment_config(opt.config);
}

fs::path model_dir(const ExperimentConfig& cfg, const Options& opt) {
  return cfg.model_dir.empty() ? fs::path(opt.out) : fs::path(cfg.model_dir);
}

void write_resolved(const ExperimentConfig& cfg, const fs::path& out) {
  fs::create_directories(out);
  write_file(out / "resolved.cfg", resolved_text(cfg));
}

// Saved datasets of a train-pretrained run: ID train/test and one file per OOD set.
TrialData load_trial_data(const ExperimentConfig& cfg, const fs::path& dir) {
  TrialData data{load_dataset(dir / "id_train.csv"), load_dataset(dir / "id_test.csv"), {}};
  for (const auto& set : cfg.ood_sets) data.ood.push_back(load_dataset(dir / ("ood_" + set.name + ".csv")));
  return data;
}

int train_pretrained_cmd(const Options& opt) {
  const ExperimentConfig cfg = load(opt);
  const fs::path out = opt.out;
  const std::uint64_t seed = trial_seed(cfg, 0);
  const TrialData data = make_trial_data(cfg, seed);
  const PretrainedModel model = train_trial_pretrained(cfg, data, seed);
  write_resolved(cfg, out);
  save_pretrained(model, out / "pretrained.ckpt");
  save_dataset(data.train, out / "id_train.csv");
  save_dataset(data.test, out / "id_test.csv");
  for (std::size_t j = 0; j < data.ood.size(); ++j)
    save_dataset(data.ood[j], out / ("ood_" + cfg.ood_sets[j].name + ".csv"));
  std::cout << "pretrained: final loss " << model.loss_history().back() << ", sha256 "
            << sha256_hex(read_file(out / "pretrained.ckpt")) << '\n';
  return 0;
}

int train_aux_cmd(const Options& opt) {
  const ExperimentConfig cfg = load(opt);
  const fs::path dir = model_dir(cfg, opt);
  const PretrainedModel pretrained = load_pretrained(dir / "pretrained.ckpt");
  const LabeledDataset train = load_dataset(dir / "id_train.csv");
  const TrialData data{train, {}, {}};
  const DRLModel drl = train_trial_drl(cfg, pretrained, data, trial_seed(cfg, 0), cfg.epsilon, cfg.sigma);
  write_resolved(cfg, opt.out);
  save_drl(drl, opt.out);
  std::cout << "auxiliary: final loss " << drl.loss_history().back() << '\n';
  return 0;
}

struct LoadedModels {
  PretrainedModel pretrained;
  std::optional<DRLModel> drl;
  std::vector<MLPNetwork> ensemble;
};

LoadedModels load_models(const ExperimentConfig& cfg, const fs::path& dir, const TrialData& data) {
  LoadedModels m{load_pretrained(dir / "pretrained.ckpt"), std::nullopt, {}};
  auto wants = [&](DetectorKind k) { return std::find(cfg.detectors.begin(), cfg.detectors.end(), k) != cfg.detectors.end(); };
  if (wants(DetectorKind::Drl)) {
    if (!fs::exists(dir / "drl.manifest"))
      throw ConfigError("detector drl needs a trained auxiliary network in " + dir.string() + " (run train-aux)");
    m.drl = load_drl(dir);
  }
  if (wants(DetectorKind::Ensemble))
    m.ensemble = train_ensemble_members(cfg, m.pretrained, data, trial_seed(cfg, 0), cfg.detector.ensemble_size);
  return m;
}

template <class Fn>
void for_each_detector(const ExperimentConfig& cfg, const LoadedModels& models, const TrialData& data, Fn fn) {
  DetectorContext ctx;
  ctx.pretrained = &models.pretrained;
  ctx.drl = models.drl ? &*models.drl : nullptr;
  ctx.ensemble = models.ensemble;
  ctx.fit_set = &data.train;
  for (DetectorKind kind : cfg.detectors) {
    DetectorConfig dc = cfg.detector;
    dc.kind = kind;
    fn(std::string(to_string(kind)), *make_detector(dc, ctx));
  }
}

int score_cmd(const Options& opt) {
  const ExperimentConfig cfg = load(opt);
  const fs::path dir = model_dir(cfg, opt);
  const TrialData data = load_trial_data(cfg, dir);
  const LoadedModels models = load_models(cfg, dir, data);
  std::vector<ScoredSample> all;
  for_each_detector(cfg, models, data, [&](const std::string& name, const Detector& det) {
    for (const auto& ood : data.ood) {
      auto rows = score_sets(det, data.test.features, ood.features);
      for (auto& r : rows) r.detector = name;
      all.insert(all.end(), rows.begin(), rows.end());
    }
  });
  write_resolved(cfg, opt.out);
  write_scores(fs::path(opt.out) / "scores.csv", all);
  std::cout << "scores: " << all.size() << " rows\n";
  return 0;
}

int eval_cmd(const Options& opt) {
  const ExperimentConfig cfg = load(opt);
  const fs::path dir = model_dir(cfg, opt);
  const TrialData data = load_trial_data(cfg, dir);
  const LoadedModels models = load_models(cfg, dir, data);
  std::vector<MetricsReport> reports;
  for_each_detector(cfg, models, data, [&](const std::string& name, const Detector& det) {
    auto rows = evaluate_detector(det, name, cfg, data, trial_seed(cfg, 0));
    reports.insert(reports.end(), rows.begin(), rows.end());
  });
  write_resolved(cfg, opt.out);
  write_metrics(fs::path(opt.out) / "metrics.csv", reports);
  for (const auto& r : reports)
    std::printf("%-14s %-10s auroc=%.4f fpr95=%.4f det_err=%.4f\n", r.detector.c_str(), r.dataset.c_str(), r.auroc,
                r.fpr95, r.detection);
  return 0;
}

void print_summary(const RunRecord& record) {
  std::printf("%-22s %-10s %8s %8s %8s %8s %8s\n", "detector", "dataset", "auroc", "fpr95", "det_err", "acc", "ece");
  for (const auto& r : record.summary)
    std::printf("%-22s %-10s %8.4f %8.4f %8.4f %8.4f %8.4f\n", r.detector.c_str(), r.dataset.c_str(), r.mean[0],
                r.mean[1], r.mean[2], r.mean[3], r.mean[4]);
}

int gradcheck_cmd(const Options& opt) {
  const ExperimentConfig cfg = load(opt);
  const auto cases = run_gradient_suite(opt.instances, cfg.seed);
  fs::create_directories(opt.out);
  write_file(fs::path(opt.out) / "gradcheck.csv", gradient_suite_csv(cases));
  std::size_t failed = 0;
  for (const auto& c : cases) {
    if (!c.report.passed()) ++failed;
    std::cout << c.target << " #" << c.instance << ": " << c.report.summary() << '\n';
  }
  if (failed > 0) throw NumericError(std::to_string(failed) + " gradient checks failed");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual representation OOD detection experiments"};
  app.require_subcommand(1);
  Options opt;

  using Runner = RunRecord (*)(const ExperimentConfig&, const fs::path&);
  struct Command {
    const char* name;
    const char* help;
    std::function<int(const Options&)> fn;
  };
  auto study = [](Runner run) {
    return [run](const Options& o) {
      const RunRecord record = run(load(o), o.out);
      print_summary(record);
      for (const auto& f : record.failures) std::cerr << "numeric failure: " << f << '\n';
      return record.failures.empty() ? 0 : 3;
    };
  };
  const std::vector<Command> commands = {
      {"train-pretrained", "Generate trial-0 data and train the label-discriminative network", train_pretrained_cmd},
      {"train-aux", "Train the auxiliary network against a saved pretrained network", train_aux_cmd},
      {"score", "Write per-sample detector scores (scores.csv)", score_cmd},
      {"eval", "Evaluate configured detectors on saved data (metrics.csv)", eval_cmd},
      {"compare", "Multi-trial comparison of all configured detectors", study(run_compare)},
      {"sweep-eps", "Sweep the perturbation coefficient", study(run_epsilon_sweep)},
      {"sigma-study", "Compare choices of the component covariance", study(run_sigma_study)},
      {"ablate", "Ablate D, C and D+C with reliability data", study(run_ablation)},
      {"ensemble", "Ensembles of 1..M networks against DRL", study(run_ensemble_compare)},
      {"gradcheck", "Finite-difference check of the analytic gradients", gradcheck_cmd},
  };
  std::function<int(const Options&)> selected;
  for (const auto& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    sub->add_option("--config", opt.config, "Experiment config file");
    sub->add_option("--out", opt.out, "Output directory")->capture_default_str();
    if (std::string(c.name) == "gradcheck")
      sub->add_option("--instances", opt.instances, "Random instances per target")->capture_default_str();
    sub->callback([&selected, fn = c.fn] { selected = fn; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    return selected(opt);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
