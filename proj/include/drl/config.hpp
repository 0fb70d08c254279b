#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "drl/auxiliary.hpp"
#include "drl/datagen.hpp"
#include "drl/detectors.hpp"
#include "drl/pretrain.hpp"

namespace drl {

// `key = value` lines grouped under `[section]` headers. `#` starts a comment
// line. Sections and keys keep their file order.
class ConfigFile {
 public:
  struct Section {
    std::string name;
    std::vector<std::pair<std::string, std::string>> entries;
  };

  // Throws ParseError with the offending line number.
  static ConfigFile parse(std::string_view text);
  std::string to_text() const;

  const std::vector<Section>& sections() const { return sections_; }
  const Section* find(std::string_view section) const;
  std::optional<std::string> get(std::string_view section, std::string_view key) const;
  void set(std::string_view section, std::string_view key, std::string value);

 private:
  std::vector<Section> sections_;
};

struct OodSetConfig {
  std::string name;
  OodSpec spec;
  friend bool operator==(const OodSetConfig&, const OodSetConfig&) = default;
};

struct ExperimentConfig {
  // [experiment]
  std::string name = "default";
  std::size_t trials = 5;
  std::uint64_t seed = 1;  // trial i uses seed + i

  // [data]
  std::string generator = "blobs";  // blobs | moons
  std::size_t num_classes = 4;
  std::size_t dim = 8;
  std::size_t n_train = 2000;
  std::size_t n_test = 500;
  double spread = 1.5;
  double center_range = 5.0;
  double noise = 0.1;

  // [ood.<name>] sections, in order
  std::vector<OodSetConfig> ood_sets;

  // [network] and [train]
  TrainConfig train;

  // [drl]
  double epsilon = 0.001;
  SigmaKind sigma = SigmaKind::Pretrained;
  std::vector<std::size_t> aux_hidden;  // empty: same as the pretrained network
  std::vector<double> epsilon_grid = {0.0, 0.0001, 0.001, 0.01, 0.1};
  std::vector<SigmaKind> sigma_kinds = {SigmaKind::Pretrained, SigmaKind::Identity, SigmaKind::Gaussian,
                                        SigmaKind::Uniform};
  std::vector<std::size_t> ensemble_sizes = {1, 2, 3, 4, 5};

  // [detectors]
  std::vector<DetectorKind> detectors = {DetectorKind::Msp,         DetectorKind::Odin, DetectorKind::Energy,
                                         DetectorKind::Mahalanobis, DetectorKind::Rectified, DetectorKind::Knn,
                                         DetectorKind::Ensemble,    DetectorKind::Drl};
  DetectorConfig detector;

  // [io]
  std::string model_dir;  // empty: the output directory

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

std::vector<OodSetConfig> default_ood_sets();

// Missing keys keep their defaults; unknown sections or keys and malformed
// values throw ConfigError.
ExperimentConfig experiment_from_config(const ConfigFile& file);
ExperimentConfig parse_experiment_config(std::string_view text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// Every field written out, so the text reproduces the run on its own.
std::string resolved_text(const ExperimentConfig& config);

}  // namespace drl
