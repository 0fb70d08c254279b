#include "drl/config.hpp"

#include <charconv>
#include <sstream>

#include "drl/checkpoint.hpp"
#include "drl/error.hpp"

namespace drl {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  s = trim(s);
  if (s.empty()) return out;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find(',', start);
    out.emplace_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string where(std::string_view section, std::string_view key) {
  return "[" + std::string(section) + "] " + std::string(key);
}

std::uint64_t to_u64(std::string_view section, std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || res.ec != std::errc{} || res.ptr != v.data() + v.size())
    throw ConfigError(where(section, key) + ": expected a nonnegative integer, got '" + std::string(v) + "'");
  return out;
}

double to_real(std::string_view section, std::string_view key, std::string_view v) {
  try {
    return parse_double(v);
  } catch (const std::invalid_argument&) {
    throw ConfigError(where(section, key) + ": expected a number, got '" + std::string(v) + "'");
  }
}

std::vector<std::size_t> to_counts(std::string_view section, std::string_view key, std::string_view v) {
  std::vector<std::size_t> out;
  for (const auto& item : split_list(v)) out.push_back(to_u64(section, key, item));
  return out;
}

std::vector<double> to_reals(std::string_view section, std::string_view key, std::string_view v) {
  std::vector<double> out;
  for (const auto& item : split_list(v)) out.push_back(to_real(section, key, item));
  return out;
}

template <class T, class F>
std::string join(const std::vector<T>& items, F format) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? ", " : "") + format(items[i]);
  return out;
}

std::string counts_text(const std::vector<std::size_t>& v) {
  return join(v, [](std::size_t x) { return std::to_string(x); });
}

}  // namespace

ConfigFile ConfigFile::parse(std::string_view text) {
  ConfigFile file;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    std::string_view line = trim(text.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos));
    pos = end == std::string_view::npos ? text.size() : end + 1;
    ++line_no;
    if (line.empty() || line.front() == '#' || line.front() == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError("unterminated section header", line_no);
      const std::string name(trim(line.substr(1, line.size() - 2)));
      if (name.empty()) throw ParseError("empty section name", line_no);
      if (file.find(name) != nullptr) throw ParseError("duplicate section [" + name + "]", line_no);
      file.sections_.push_back({name, {}});
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError("expected 'key = value'", line_no);
    if (file.sections_.empty()) throw ParseError("key outside of any section", line_no);
    const std::string key(trim(line.substr(0, eq)));
    if (key.empty()) throw ParseError("empty key", line_no);
    auto& entries = file.sections_.back().entries;
    for (const auto& [k, v] : entries)
      if (k == key) throw ParseError("duplicate key '" + key + "'", line_no);
    entries.emplace_back(key, std::string(trim(line.substr(eq + 1))));
  }
  return file;
}

std::string ConfigFile::to_text() const {
  std::string out;
  for (std::size_t s = 0; s < sections_.size(); ++s) {
    if (s) out += "\n";
    out += "[" + sections_[s].name + "]\n";
    for (const auto& [k, v] : sections_[s].entries) out += k + " = " + v + "\n";
  }
  return out;
}

const ConfigFile::Section* ConfigFile::find(std::string_view section) const {
  for (const auto& s : sections_)
    if (s.name == section) return &s;
  return nullptr;
}

std::optional<std::string> ConfigFile::get(std::string_view section, std::string_view key) const {
  if (const Section* s = find(section))
    for (const auto& [k, v] : s->entries)
      if (k == key) return v;
  return std::nullopt;
}

void ConfigFile::set(std::string_view section, std::string_view key, std::string value) {
  Section* target = nullptr;
  for (auto& s : sections_)
    if (s.name == section) target = &s;
  if (target == nullptr) {
    sections_.push_back({std::string(section), {}});
    target = &sections_.back();
  }
  for (auto& [k, v] : target->entries) {
    if (k == key) {
      v = std::move(value);
      return;
    }
  }
  target->entries.emplace_back(std::string(key), std::move(value));
}

std::vector<OodSetConfig> default_ood_sets() {
  return {
      {"near", {OodKind::ShiftedBlob, 500, 4.0}},
      {"ring", {OodKind::Ring, 500, 0.0}},
      {"box", {OodKind::UniformBox, 500, 0.0}},
  };
}

ExperimentConfig experiment_from_config(const ConfigFile& file) {
  ExperimentConfig cfg;
  bool custom_ood = false;
  for (const auto& section : file.sections()) {
    const std::string& sn = section.name;
    if (sn.starts_with("ood.")) {
      if (!custom_ood) cfg.ood_sets.clear();
      custom_ood = true;
      OodSetConfig set{sn.substr(4), {}};
      if (set.name.empty()) throw ConfigError("OOD section needs a name: [ood.<name>]");
      for (const auto& [k, v] : section.entries) {
        if (k == "kind") set.spec.kind = ood_kind_from_string(v);
        else if (k == "n") set.spec.n = to_u64(sn, k, v);
        else if (k == "offset") set.spec.offset = to_real(sn, k, v);
        else throw ConfigError("unknown key " + where(sn, k));
      }
      cfg.ood_sets.push_back(std::move(set));
      continue;
    }
    for (const auto& [k, v] : section.entries) {
      if (sn == "experiment") {
        if (k == "name") cfg.name = v;
        else if (k == "trials") cfg.trials = to_u64(sn, k, v);
        else if (k == "seed") cfg.seed = to_u64(sn, k, v);
        else throw ConfigError("unknown key " + where(sn, k));
      } else if (sn == "data") {
        if (k == "generator") cfg.generator = v;
        else if (k == "num_classes") cfg.num_classes = to_u64(sn, k, v);
        else if (k == "dim") cfg.dim = to_u64(sn, k, v);
        else if (k == "n_train") cfg.n_train = to_u64(sn, k, v);
        else if (k == "n_test") cfg.n_test = to_u64(sn, k, v);
        else if (k == "spread") cfg.spread = to_real(sn, k, v);
        else if (k == "center_range") cfg.center_range = to_real(sn, k, v);
        else if (k == "noise") cfg.noise = to_real(sn, k, v);
        else throw ConfigError("unknown key " + where(sn, k));
      } else if (sn == "network") {
        if (k == "hidden") cfg.train.hidden = to_counts(sn, k, v);
        else if (k == "aux_hidden") cfg.aux_hidden = to_counts(sn, k, v);
        else throw ConfigError("unknown key " + where(sn, k));
      } else if (sn == "train") {
        if (k == "epochs") cfg.train.epochs = to_u64(sn, k, v);
        else if (k == "lr") cfg.train.learning_rate = to_real(sn, k, v);
        else if (k == "milestones") cfg.train.milestones = to_counts(sn, k, v);
        else if (k == "batch") cfg.train.batch_size = to_u64(sn, k, v);
        else throw ConfigError("unknown key " + where(sn, k));
      } else if (sn == "drl") {
        if (k == "epsilon") cfg.epsilon = to_real(sn, k, v);
        else if (k == "sigma") cfg.sigma = sigma_kind_from_string(v);
        else if (k == "epsilon_grid") cfg.epsilon_grid = to_reals(sn, k, v);
        else if (k == "sigma_kinds") {
          cfg.sigma_kinds.clear();
          for (const auto& item : split_list(v)) cfg.sigma_kinds.push_back(sigma_kind_from_string(item));
        } else if (k == "ensemble_sizes") cfg.ensemble_sizes = to_counts(sn, k, v);
        else throw ConfigError("unknown key " + where(sn, k));
      } else if (sn == "detectors") {
        DetectorConfig& d = cfg.detector;
        if (k == "list") {
          cfg.detectors.clear();
          for (const auto& item : split_list(v)) cfg.detectors.push_back(detector_kind_from_string(item));
        } else if (k == "energy.temperature") d.energy_temperature = to_real(sn, k, v);
        else if (k == "odin.temperature") d.odin_temperature = to_real(sn, k, v);
        else if (k == "odin.delta") d.odin_delta = to_real(sn, k, v);
        else if (k == "knn.k") d.knn_k = to_u64(sn, k, v);
        else if (k == "ra.percentile") d.ra_percentile = to_real(sn, k, v);
        else if (k == "ensemble.size") d.ensemble_size = to_u64(sn, k, v);
        else if (k == "mahalanobis.ridge") d.mahalanobis_ridge = to_real(sn, k, v);
        else throw ConfigError("unknown key " + where(sn, k));
      } else if (sn == "io") {
        if (k == "model_dir") cfg.model_dir = v;
        else throw ConfigError("unknown key " + where(sn, k));
      } else {
        throw ConfigError("unknown section [" + sn + "]");
      }
    }
    if (sn != "experiment" && sn != "data" && sn != "network" && sn != "train" && sn != "drl" &&
        sn != "detectors" && sn != "io")
      throw ConfigError("unknown section [" + sn + "]");
  }
  if (!custom_ood) cfg.ood_sets = default_ood_sets();

  if (cfg.trials == 0) throw ConfigError("[experiment] trials must be at least 1");
  if (cfg.generator != "blobs" && cfg.generator != "moons")
    throw ConfigError("[data] generator must be blobs or moons, got '" + cfg.generator + "'");
  if (cfg.train.batch_size == 0) throw ConfigError("[train] batch must be positive");
  if (!(cfg.epsilon >= 0.0)) throw ConfigError("[drl] epsilon must be nonnegative");
  for (double e : cfg.epsilon_grid)
    if (!(e >= 0.0)) throw ConfigError("[drl] epsilon_grid entries must be nonnegative");
  for (std::size_t m : cfg.ensemble_sizes)
    if (m == 0) throw ConfigError("[drl] ensemble_sizes entries must be positive");
  if (cfg.ood_sets.empty()) throw ConfigError("at least one OOD set is required");
  cfg.detector.validate();
  return cfg;
}

ExperimentConfig parse_experiment_config(std::string_view text) {
  try {
    return experiment_from_config(ConfigFile::parse(text));
  } catch (const ParseError& e) {
    throw ConfigError(e.what());
  }
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  return parse_experiment_config(text);
}

std::string resolved_text(const ExperimentConfig& c) {
  ConfigFile f;
  f.set("experiment", "name", c.name);
  f.set("experiment", "trials", std::to_string(c.trials));
  f.set("experiment", "seed", std::to_string(c.seed));
  f.set("data", "generator", c.generator);
  f.set("data", "num_classes", std::to_string(c.num_classes));
  f.set("data", "dim", std::to_string(c.dim));
  f.set("data", "n_train", std::to_string(c.n_train));
  f.set("data", "n_test", std::to_string(c.n_test));
  f.set("data", "spread", format_double(c.spread));
  f.set("data", "center_range", format_double(c.center_range));
  f.set("data", "noise", format_double(c.noise));
  for (const auto& set : c.ood_sets) {
    const std::string sn = "ood." + set.name;
    f.set(sn, "kind", std::string(to_string(set.spec.kind)));
    f.set(sn, "n", std::to_string(set.spec.n));
    f.set(sn, "offset", format_double(set.spec.offset));
  }
  f.set("network", "hidden", counts_text(c.train.hidden));
  f.set("network", "aux_hidden", counts_text(c.aux_hidden));
  f.set("train", "epochs", std::to_string(c.train.epochs));
  f.set("train", "lr", format_double(c.train.learning_rate));
  f.set("train", "milestones", counts_text(c.train.milestones));
  f.set("train", "batch", std::to_string(c.train.batch_size));
  f.set("drl", "epsilon", format_double(c.epsilon));
  f.set("drl", "sigma", std::string(to_string(c.sigma)));
  f.set("drl", "epsilon_grid", join(c.epsilon_grid, [](double e) { return format_double(e); }));
  f.set("drl", "sigma_kinds", join(c.sigma_kinds, [](SigmaKind k) { return std::string(to_string(k)); }));
  f.set("drl", "ensemble_sizes", counts_text(c.ensemble_sizes));
  f.set("detectors", "list", join(c.detectors, [](DetectorKind k) { return std::string(to_string(k)); }));
  f.set("detectors", "energy.temperature", format_double(c.detector.energy_temperature));
  f.set("detectors", "odin.temperature", format_double(c.detector.odin_temperature));
  f.set("detectors", "odin.delta", format_double(c.detector.odin_delta));
  f.set("detectors", "knn.k", std::to_string(c.detector.knn_k));
  f.set("detectors", "ra.percentile", format_double(c.detector.ra_percentile));
  f.set("detectors", "ensemble.size", std::to_string(c.detector.ensemble_size));
  f.set("detectors", "mahalanobis.ridge", format_double(c.detector.mahalanobis_ridge));
  f.set("io", "model_dir", c.model_dir);
  return "# resolved experiment configuration\n" + f.to_text();
}

}  // namespace drl
