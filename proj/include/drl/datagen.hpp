#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "drl/matrix.hpp"

namespace drl {

enum class Split { IdTrain, IdTest, Ood };
enum class OodKind { ShiftedBlob, Ring, UniformBox };

std::string_view to_string(Split split);
Split split_from_string(std::string_view s);
std::string_view to_string(OodKind kind);
// Throws ConfigError for an unknown name.
OodKind ood_kind_from_string(std::string_view s);

inline constexpr std::string_view kBlobGenerator = "gaussian-blobs";
inline constexpr std::string_view kMoonsGenerator = "two-moons";

// Where a dataset came from. The generator parameters are kept so that OOD
// sets can be placed relative to the ID distribution.
struct Provenance {
  Split split = Split::IdTrain;
  std::string generator;
  std::uint64_t seed = 0;
  double spread = 0.0;        // blob standard deviation
  double noise = 0.0;         // moon noise standard deviation
  double offset = 0.0;        // OOD placement
  std::string ood_kind;       // empty for ID sets
  Matrix class_means;         // K × dim, noise-free class centres

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct LabeledDataset {
  Matrix features;           // n × dim
  std::vector<int> labels;   // class index, -1 for unlabeled OOD rows
  std::size_t num_classes = 0;
  Provenance provenance;

  std::size_t size() const { return features.rows(); }
  std::size_t dim() const { return features.cols(); }
  // Labels as indices; throws when any row is unlabeled.
  std::vector<std::size_t> class_indices() const;

  friend bool operator==(const LabeledDataset&, const LabeledDataset&) = default;
};

struct BlobSpec {
  std::size_t num_classes = 4;
  std::size_t n_per_class = 100;
  std::size_t dim = 8;
  double spread = 1.0;
  // Class means are drawn uniformly from [-center_range, center_range]^dim.
  double center_range = 5.0;
};

LabeledDataset gen_gaussian_blobs(const BlobSpec& spec, std::uint64_t seed);

// Interleaved half circles: class 0 on the unit circle around (0, 0), class 1
// on the unit circle around (1, 0.5). n must be even.
LabeledDataset gen_two_moons(std::size_t n, double noise, std::uint64_t seed);

struct OodSpec {
  OodKind kind = OodKind::ShiftedBlob;
  std::size_t n = 500;
  double offset = 0.0;

  friend bool operator==(const OodSpec&, const OodSpec&) = default;
};

// shifted-blob: fresh ID class samples (round-robin over classes) moved by
//   offset along a random unit direction per class.
// ring: a spherical shell around the ID centroid at radius
//   id_radius + offset, jittered with the ID noise level.
// uniform-box: uniform in a cube whose half-width covers the ID means plus
//   three noise levels, centred at the ID centroid shifted by offset along
//   every axis.
LabeledDataset gen_ood(const OodSpec& spec, const LabeledDataset& reference, std::uint64_t seed);

// Per-class split; each class contributes round(n_k * test_fraction) rows to
// the test side.
std::pair<LabeledDataset, LabeledDataset> stratified_split(const LabeledDataset& ds, double test_fraction,
                                                           std::uint64_t seed);

// Noise level of the generator (blob spread or moon noise).
double noise_level(const Provenance& p);
Vector centroid(const Matrix& points);

// CSV with `# key=value` metadata lines, then `f0,...,f{dim-1},label`.
std::string format_dataset(const LabeledDataset& ds);
LabeledDataset parse_dataset(std::string_view text);
void save_dataset(const LabeledDataset& ds, const std::filesystem::path& path);
LabeledDataset load_dataset(const std::filesystem::path& path);

// Round-trip decimal text for a double.
std::string format_double(double v);
double parse_double(std::string_view s);

}  // namespace drl
