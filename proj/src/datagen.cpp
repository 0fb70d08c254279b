#include "drl/datagen.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

#include "drl/checkpoint.hpp"
#include "drl/error.hpp"

namespace drl {

namespace {

Vector random_unit(std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vector u(dim);
  double n = 0.0;
  while (n < 1e-12) {
    for (double& v : u) v = gauss(rng);
    n = norm2(u);
  }
  for (double& v : u) v /= n;
  return u;
}

// One fresh noisy ID sample of class k.
Vector sample_class(const Provenance& p, std::size_t k, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  if (p.generator == kBlobGenerator) {
    Vector x = p.class_means.row_vector(k);
    for (double& v : x) v += p.spread * gauss(rng);
    return x;
  }
  if (p.generator == kMoonsGenerator) {
    std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
    const double t = angle(rng);
    Vector x = k == 0 ? Vector{std::cos(t), std::sin(t)} : Vector{1.0 - std::cos(t), 0.5 - std::sin(t)};
    for (double& v : x) v += p.noise * gauss(rng);
    return x;
  }
  throw ConfigError("gen_ood: reference dataset has no known generator metadata");
}

std::string format_full(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string_view> split_fields(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(sep, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace

std::string_view to_string(Split split) {
  switch (split) {
    case Split::IdTrain: return "id-train";
    case Split::IdTest: return "id-test";
    case Split::Ood: return "ood";
  }
  return "?";
}

Split split_from_string(std::string_view s) {
  if (s == "id-train") return Split::IdTrain;
  if (s == "id-test") return Split::IdTest;
  if (s == "ood") return Split::Ood;
  throw ConfigError("unknown split '" + std::string(s) + "'");
}

std::string_view to_string(OodKind kind) {
  switch (kind) {
    case OodKind::ShiftedBlob: return "shifted-blob";
    case OodKind::Ring: return "ring";
    case OodKind::UniformBox: return "uniform-box";
  }
  return "?";
}

OodKind ood_kind_from_string(std::string_view s) {
  if (s == "shifted-blob") return OodKind::ShiftedBlob;
  if (s == "ring") return OodKind::Ring;
  if (s == "uniform-box") return OodKind::UniformBox;
  throw ConfigError("unknown OOD kind '" + std::string(s) + "' (expected shifted-blob, ring or uniform-box)");
}

std::vector<std::size_t> LabeledDataset::class_indices() const {
  std::vector<std::size_t> out;
  out.reserve(labels.size());
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
      throw std::invalid_argument("dataset row has no valid class label");
    out.push_back(static_cast<std::size_t>(y));
  }
  return out;
}

LabeledDataset gen_gaussian_blobs(const BlobSpec& spec, std::uint64_t seed) {
  if (spec.num_classes < 2) throw ConfigError("gen_gaussian_blobs: need at least 2 classes");
  if (spec.dim < 2) throw ConfigError("gen_gaussian_blobs: need dim >= 2");
  if (spec.n_per_class == 0) throw ConfigError("gen_gaussian_blobs: n_per_class must be positive");
  if (!(spec.spread >= 0.0)) throw ConfigError("gen_gaussian_blobs: spread must be nonnegative");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> centre(-spec.center_range, spec.center_range);
  std::normal_distribution<double> gauss(0.0, 1.0);

  LabeledDataset ds;
  ds.num_classes = spec.num_classes;
  ds.provenance.generator = std::string(kBlobGenerator);
  ds.provenance.seed = seed;
  ds.provenance.spread = spec.spread;
  ds.provenance.class_means = Matrix(spec.num_classes, spec.dim);
  for (double& m : ds.provenance.class_means.data()) m = centre(rng);

  ds.features = Matrix(spec.num_classes * spec.n_per_class, spec.dim);
  ds.labels.reserve(ds.features.rows());
  std::size_t r = 0;
  for (std::size_t k = 0; k < spec.num_classes; ++k) {
    for (std::size_t i = 0; i < spec.n_per_class; ++i, ++r) {
      auto row = ds.features.row(r);
      for (std::size_t j = 0; j < spec.dim; ++j) row[j] = ds.provenance.class_means(k, j) + spec.spread * gauss(rng);
      ds.labels.push_back(static_cast<int>(k));
    }
  }
  return ds;
}

LabeledDataset gen_two_moons(std::size_t n, double noise, std::uint64_t seed) {
  if (n == 0 || n % 2 != 0) throw ConfigError("gen_two_moons: n must be a positive even count");
  if (!(noise >= 0.0)) throw ConfigError("gen_two_moons: noise must be nonnegative");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const std::size_t half = n / 2;

  LabeledDataset ds;
  ds.num_classes = 2;
  ds.provenance.generator = std::string(kMoonsGenerator);
  ds.provenance.seed = seed;
  ds.provenance.noise = noise;
  // Centroids of the two arcs: (0, 2/pi) and (1, 0.5 - 2/pi).
  ds.provenance.class_means = Matrix{{0.0, 2.0 / std::numbers::pi}, {1.0, 0.5 - 2.0 / std::numbers::pi}};
  ds.features = Matrix(n, 2);
  for (std::size_t i = 0; i < half; ++i) {
    const double t = half == 1 ? 0.0 : std::numbers::pi * static_cast<double>(i) / static_cast<double>(half - 1);
    ds.features(i, 0) = std::cos(t);
    ds.features(i, 1) = std::sin(t);
    ds.features(half + i, 0) = 1.0 - std::cos(t);
    ds.features(half + i, 1) = 0.5 - std::sin(t);
  }
  ds.labels.assign(n, 0);
  std::fill(ds.labels.begin() + static_cast<std::ptrdiff_t>(half), ds.labels.end(), 1);
  if (noise > 0.0)
    for (double& v : ds.features.data()) v += noise * gauss(rng);
  return ds;
}

double noise_level(const Provenance& p) { return p.generator == kMoonsGenerator ? p.noise : p.spread; }

Vector centroid(const Matrix& points) {
  Vector c(points.cols(), 0.0);
  for (std::size_t r = 0; r < points.rows(); ++r)
    for (std::size_t j = 0; j < points.cols(); ++j) c[j] += points(r, j);
  for (double& v : c) v /= static_cast<double>(points.rows());
  return c;
}

LabeledDataset gen_ood(const OodSpec& spec, const LabeledDataset& reference, std::uint64_t seed) {
  const Provenance& ref = reference.provenance;
  if (ref.generator.empty() || ref.class_means.empty())
    throw ConfigError("gen_ood: reference dataset carries no generator metadata");
  if (spec.n == 0) throw ConfigError("gen_ood: n must be positive");
  if (!(spec.offset >= 0.0)) throw ConfigError("gen_ood: offset must be nonnegative");

  const std::size_t dim = ref.class_means.cols();
  const std::size_t k_classes = ref.class_means.rows();
  const Vector centre = centroid(ref.class_means);
  const double sigma = noise_level(ref);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  LabeledDataset ds;
  ds.num_classes = reference.num_classes;
  ds.provenance = ref;
  ds.provenance.split = Split::Ood;
  ds.provenance.seed = seed;
  ds.provenance.offset = spec.offset;
  ds.provenance.ood_kind = std::string(to_string(spec.kind));
  ds.features = Matrix(spec.n, dim);
  ds.labels.assign(spec.n, -1);

  switch (spec.kind) {
    case OodKind::ShiftedBlob: {
      std::vector<Vector> directions;
      for (std::size_t k = 0; k < k_classes; ++k) directions.push_back(random_unit(dim, rng));
      for (std::size_t i = 0; i < spec.n; ++i) {
        const std::size_t k = i % k_classes;
        Vector x = sample_class(ref, k, rng);
        auto row = ds.features.row(i);
        for (std::size_t j = 0; j < dim; ++j) row[j] = x[j] + spec.offset * directions[k][j];
      }
      break;
    }
    case OodKind::Ring: {
      double radius = 0.0;
      for (std::size_t k = 0; k < k_classes; ++k) {
        double d2 = 0.0;
        for (std::size_t j = 0; j < dim; ++j) d2 += std::pow(ref.class_means(k, j) - centre[j], 2);
        radius = std::max(radius, std::sqrt(d2));
      }
      radius += 3.0 * sigma + spec.offset;
      for (std::size_t i = 0; i < spec.n; ++i) {
        Vector u = random_unit(dim, rng);
        auto row = ds.features.row(i);
        for (std::size_t j = 0; j < dim; ++j) row[j] = centre[j] + radius * u[j] + sigma * gauss(rng);
      }
      break;
    }
    case OodKind::UniformBox: {
      double half_width = 0.0;
      for (std::size_t k = 0; k < k_classes; ++k)
        for (std::size_t j = 0; j < dim; ++j) half_width = std::max(half_width, std::abs(ref.class_means(k, j) - centre[j]));
      half_width += 3.0 * sigma;
      std::uniform_real_distribution<double> unit(-1.0, 1.0);
      for (std::size_t i = 0; i < spec.n; ++i) {
        auto row = ds.features.row(i);
        for (std::size_t j = 0; j < dim; ++j) row[j] = centre[j] + spec.offset + half_width * unit(rng);
      }
      break;
    }
  }
  return ds;
}

std::pair<LabeledDataset, LabeledDataset> stratified_split(const LabeledDataset& ds, double test_fraction,
                                                           std::uint64_t seed) {
  if (!(test_fraction >= 0.0 && test_fraction <= 1.0)) throw ConfigError("stratified_split: fraction outside [0,1]");
  std::mt19937_64 rng(seed);
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class.at(static_cast<std::size_t>(ds.labels.at(i))).push_back(i);

  std::vector<std::size_t> train_rows, test_rows;
  for (auto& rows : by_class) {
    std::shuffle(rows.begin(), rows.end(), rng);
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(rows.size())));
    test_rows.insert(test_rows.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_test));
    train_rows.insert(train_rows.end(), rows.begin() + static_cast<std::ptrdiff_t>(n_test), rows.end());
  }
  std::sort(train_rows.begin(), train_rows.end());
  std::sort(test_rows.begin(), test_rows.end());

  auto take = [&](const std::vector<std::size_t>& rows, Split split) {
    LabeledDataset out;
    out.num_classes = ds.num_classes;
    out.provenance = ds.provenance;
    out.provenance.split = split;
    out.features = Matrix(rows.size(), ds.dim());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      auto src = ds.features.row(rows[r]);
      std::copy(src.begin(), src.end(), out.features.row(r).begin());
      out.labels.push_back(ds.labels[rows[r]]);
    }
    return out;
  };
  return {take(train_rows, Split::IdTrain), take(test_rows, Split::IdTest)};
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw std::invalid_argument("not a number: '" + std::string(s) + "'");
  return v;
}

std::string format_dataset(const LabeledDataset& ds) {
  const Provenance& p = ds.provenance;
  std::ostringstream out;
  out << "# drl-dataset v1\n";
  out << "# split=" << to_string(p.split) << "\n";
  out << "# generator=" << p.generator << "\n";
  out << "# seed=" << p.seed << "\n";
  out << "# num_classes=" << ds.num_classes << "\n";
  out << "# spread=" << format_full(p.spread) << "\n";
  out << "# noise=" << format_full(p.noise) << "\n";
  out << "# offset=" << format_full(p.offset) << "\n";
  out << "# ood_kind=" << p.ood_kind << "\n";
  for (std::size_t k = 0; k < p.class_means.rows(); ++k) {
    out << "# class_mean=";
    for (std::size_t j = 0; j < p.class_means.cols(); ++j) out << (j ? "," : "") << format_full(p.class_means(k, j));
    out << "\n";
  }
  for (std::size_t j = 0; j < ds.dim(); ++j) out << 'f' << j << ',';
  out << "label\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (double v : ds.features.row(i)) out << format_full(v) << ',';
    out << ds.labels[i] << '\n';
  }
  return out.str();
}

LabeledDataset parse_dataset(std::string_view text) {
  LabeledDataset ds;
  std::vector<Vector> means;
  std::vector<double> values;
  std::size_t dim = 0;
  bool have_header = false;
  std::size_t line_no = 0;
  std::size_t pos = 0;

  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    std::string_view line = text.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos);
    pos = end == std::string_view::npos ? text.size() : end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);

    try {
      if (!have_header && line.starts_with("#")) {
        auto body = line.substr(1);
        while (!body.empty() && body.front() == ' ') body.remove_prefix(1);
        auto eq = body.find('=');
        if (eq == std::string_view::npos) continue;  // free-form comment
        auto key = body.substr(0, eq);
        auto value = body.substr(eq + 1);
        Provenance& p = ds.provenance;
        if (key == "split") p.split = split_from_string(value);
        else if (key == "generator") p.generator = std::string(value);
        else if (key == "seed") p.seed = std::stoull(std::string(value));
        else if (key == "num_classes") ds.num_classes = std::stoull(std::string(value));
        else if (key == "spread") p.spread = parse_double(value);
        else if (key == "noise") p.noise = parse_double(value);
        else if (key == "offset") p.offset = parse_double(value);
        else if (key == "ood_kind") p.ood_kind = std::string(value);
        else if (key == "class_mean") {
          Vector m;
          for (auto f : split_fields(value, ',')) m.push_back(parse_double(f));
          if (!means.empty() && m.size() != means.front().size()) throw ParseError("ragged class_mean", line_no);
          means.push_back(std::move(m));
        } else {
          throw ParseError("unknown metadata key '" + std::string(key) + "'", line_no);
        }
        continue;
      }
      if (line.empty()) throw ParseError("empty row", line_no);
      auto fields = split_fields(line, ',');
      if (!have_header) {
        if (fields.size() < 2 || fields.back() != "label") throw ParseError("header must end with 'label'", line_no);
        dim = fields.size() - 1;
        for (std::size_t j = 0; j < dim; ++j)
          if (fields[j] != "f" + std::to_string(j))
            throw ParseError("header column " + std::to_string(j) + " must be 'f" + std::to_string(j) + "'", line_no);
        have_header = true;
        continue;
      }
      if (fields.size() != dim + 1)
        throw ParseError("expected " + std::to_string(dim + 1) + " fields, got " + std::to_string(fields.size()), line_no);
      for (std::size_t j = 0; j < dim; ++j) {
        const double v = parse_double(fields[j]);
        if (!std::isfinite(v)) throw ParseError("non-finite feature", line_no);
        values.push_back(v);
      }
      int label = 0;
      auto lf = fields.back();
      auto res = std::from_chars(lf.data(), lf.data() + lf.size(), label);
      if (lf.empty() || res.ec != std::errc{} || res.ptr != lf.data() + lf.size())
        throw ParseError("bad label '" + std::string(lf) + "'", line_no);
      if (label < -1 || (ds.num_classes > 0 && label >= static_cast<int>(ds.num_classes)))
        throw ParseError("label " + std::to_string(label) + " outside [0, num_classes)", line_no);
      ds.labels.push_back(label);
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  if (!have_header) throw ParseError("missing header row", line_no);
  if (ds.labels.empty()) throw ParseError("no data rows", line_no);
  ds.features = Matrix(ds.labels.size(), dim, std::move(values));
  if (!means.empty()) ds.provenance.class_means = Matrix::from_rows(means);
  if (ds.num_classes == 0) {
    int top = -1;
    for (int y : ds.labels) top = std::max(top, y);
    ds.num_classes = static_cast<std::size_t>(top + 1);
  }
  return ds;
}

void save_dataset(const LabeledDataset& ds, const std::filesystem::path& path) { write_file(path, format_dataset(ds)); }

LabeledDataset load_dataset(const std::filesystem::path& path) { return parse_dataset(read_file(path)); }

}  // namespace drl
