#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "drl/checkpoint.hpp"
#include "drl/datagen.hpp"
#include "drl/error.hpp"
#include "oracles.hpp"

using namespace drl;

namespace {

BlobSpec blobs(std::size_t k, std::size_t n, std::size_t dim, double spread, double range = 5.0) {
  BlobSpec s;
  s.num_classes = k;
  s.n_per_class = n;
  s.dim = dim;
  s.spread = spread;
  s.center_range = range;
  return s;
}

double distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

TEST(Blobs, ZeroSpreadCollapsesToMeans) {
  const LabeledDataset ds = gen_gaussian_blobs(blobs(3, 10, 4, 0.0), 1);
  for (std::size_t i = 0; i < ds.size(); ++i)
    EXPECT_EQ(ds.features.row_vector(i), ds.provenance.class_means.row_vector(ds.labels[i]));
}

TEST(Blobs, Deterministic) {
  EXPECT_EQ(gen_gaussian_blobs(blobs(3, 20, 4, 1.0), 5), gen_gaussian_blobs(blobs(3, 20, 4, 1.0), 5));
  EXPECT_NE(gen_gaussian_blobs(blobs(3, 20, 4, 1.0), 5), gen_gaussian_blobs(blobs(3, 20, 4, 1.0), 6));
}

TEST(Blobs, ShapeAndLabels) {
  const LabeledDataset ds = gen_gaussian_blobs(blobs(4, 25, 6, 1.0), 2);
  EXPECT_EQ(ds.size(), 100u);
  EXPECT_EQ(ds.dim(), 6u);
  EXPECT_EQ(ds.num_classes, 4u);
  std::vector<int> count(4, 0);
  for (int y : ds.labels) ++count.at(y);
  for (int c : count) EXPECT_EQ(c, 25);
  EXPECT_EQ(ds.provenance.generator, "gaussian-blobs");
}

TEST(Blobs, EmptyClassRejected) { EXPECT_THROW(gen_gaussian_blobs(blobs(3, 0, 4, 1.0), 1), ConfigError); }

TEST(Blobs, SeparableBlobsArePerceptronSeparable) {
  const LabeledDataset ds = gen_gaussian_blobs(blobs(2, 100, 2, 0.05, 5.0), 3);
  // Plain perceptron with bias; converges to zero training errors when the
  // classes are linearly separable.
  std::vector<double> w = {0.0, 0.0, 0.0};
  std::size_t errors = 1;
  for (int epoch = 0; epoch < 1000 && errors > 0; ++epoch) {
    errors = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const double y = ds.labels[i] == 1 ? 1.0 : -1.0;
      const double a = w[0] * ds.features(i, 0) + w[1] * ds.features(i, 1) + w[2];
      if (y * a <= 0.0) {
        w[0] += y * ds.features(i, 0);
        w[1] += y * ds.features(i, 1);
        w[2] += y;
        ++errors;
      }
    }
  }
  EXPECT_EQ(errors, 0u);
}

TEST(Moons, NoiselessPointsOnHalfCircles) {
  const LabeledDataset ds = gen_two_moons(200, 0.0, 4);
  EXPECT_EQ(ds.num_classes, 2u);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const double x = ds.features(i, 0), y = ds.features(i, 1);
    if (ds.labels[i] == 0) {
      EXPECT_NEAR(x * x + y * y, 1.0, 1e-12);
      EXPECT_GE(y, -1e-12);
    } else {
      EXPECT_NEAR((x - 1.0) * (x - 1.0) + (y - 0.5) * (y - 0.5), 1.0, 1e-12);
      EXPECT_LE(y, 0.5 + 1e-12);
    }
  }
}

TEST(Moons, DeterministicAndEvenOnly) {
  EXPECT_EQ(gen_two_moons(100, 0.1, 9), gen_two_moons(100, 0.1, 9));
  EXPECT_THROW(gen_two_moons(101, 0.1, 9), ConfigError);
}

TEST(Ood, ZeroOffsetShiftedBlobMatchesIdDistribution) {
  const LabeledDataset id = gen_gaussian_blobs(blobs(3, 10, 4, 0.0), 1);
  const LabeledDataset ood = gen_ood({OodKind::ShiftedBlob, 30, 0.0}, id, 2);
  // Zero spread and zero offset: every OOD point sits exactly on a class mean.
  for (std::size_t i = 0; i < ood.size(); ++i) {
    double best = INFINITY;
    for (std::size_t k = 0; k < 3; ++k) best = std::min(best, distance(ood.features.row(i), id.provenance.class_means.row(k)));
    EXPECT_EQ(best, 0.0);
    EXPECT_EQ(ood.labels[i], -1);
  }
  EXPECT_EQ(ood.provenance.split, Split::Ood);
  EXPECT_EQ(ood.provenance.ood_kind, "shifted-blob");
}

TEST(Ood, DistanceGrowsWithOffset) {
  const LabeledDataset id = gen_gaussian_blobs(blobs(4, 50, 8, 1.0), 7);
  double previous = 0.0;
  for (double offset : {0.0, 2.0, 4.0, 8.0, 16.0}) {
    const LabeledDataset ood = gen_ood({OodKind::ShiftedBlob, 400, offset}, id, 3);
    double total = 0.0;
    for (std::size_t i = 0; i < ood.size(); ++i)
      for (std::size_t k = 0; k < 4; ++k) total += distance(ood.features.row(i), id.provenance.class_means.row(k));
    const double mean = total / (4.0 * static_cast<double>(ood.size()));
    EXPECT_GT(mean, previous) << "offset " << offset;
    previous = mean;
    EXPECT_EQ(ood.provenance.offset, offset);
  }
}

TEST(Ood, FarBoxIsDisjointFromIdSupport) {
  const LabeledDataset id = gen_gaussian_blobs(blobs(3, 100, 4, 0.5), 4);
  const LabeledDataset ood = gen_ood({OodKind::UniformBox, 300, 100.0}, id, 5);
  double id_max = -INFINITY, ood_min = INFINITY;
  for (double v : id.features.data()) id_max = std::max(id_max, v);
  for (double v : ood.features.data()) ood_min = std::min(ood_min, v);
  EXPECT_LT(id_max, ood_min);
}

TEST(Ood, RingSurroundsTheClasses) {
  const LabeledDataset id = gen_gaussian_blobs(blobs(3, 50, 4, 0.5), 4);
  const LabeledDataset ood = gen_ood({OodKind::Ring, 200, 2.0}, id, 6);
  const Vector c = centroid(id.provenance.class_means);
  double max_mean = 0.0;
  for (std::size_t k = 0; k < 3; ++k) max_mean = std::max(max_mean, distance(id.provenance.class_means.row(k), c));
  double mean_radius = 0.0;
  for (std::size_t i = 0; i < ood.size(); ++i) mean_radius += distance(ood.features.row(i), c);
  mean_radius /= static_cast<double>(ood.size());
  EXPECT_GT(mean_radius, max_mean + 1.5 + 2.0);
}

TEST(Ood, UnknownKindAndMissingMetadata) {
  EXPECT_THROW(ood_kind_from_string("donut"), ConfigError);
  LabeledDataset bare;
  bare.features = Matrix(2, 2, 0.0);
  bare.labels = {0, 1};
  bare.num_classes = 2;
  EXPECT_THROW(gen_ood({OodKind::Ring, 10, 0.0}, bare, 1), ConfigError);
}

TEST(Split, StratifiedCounts) {
  oracle::Gen gen(10);
  for (int t = 0; t < 30; ++t) {
    const std::size_t k = gen.index(2, 5), n = gen.index(5, 40);
    const LabeledDataset ds = gen_gaussian_blobs(blobs(k, n, 3, 1.0), gen.bits());
    const double fraction = gen.uniform(0.1, 0.5);
    const auto [train, test] = stratified_split(ds, fraction, gen.bits());
    EXPECT_EQ(train.size() + test.size(), ds.size());
    std::vector<int> per_class(k, 0);
    for (int y : test.labels) ++per_class.at(y);
    for (int c : per_class) EXPECT_LE(std::abs(c - fraction * static_cast<double>(n)), 1.0);
    EXPECT_EQ(train.provenance.split, Split::IdTrain);
    EXPECT_EQ(test.provenance.split, Split::IdTest);
  }
}

TEST(DatasetFile, RoundTripIsExact) {
  const LabeledDataset id = gen_gaussian_blobs(blobs(3, 7, 5, 1.3), 11);
  EXPECT_EQ(parse_dataset(format_dataset(id)), id);
  const LabeledDataset ood = gen_ood({OodKind::Ring, 9, 1.5}, id, 12);
  const auto path = std::filesystem::temp_directory_path() / "drl_datagen_roundtrip.csv";
  save_dataset(ood, path);
  EXPECT_EQ(load_dataset(path), ood);
  std::filesystem::remove(path);
}

TEST(DatasetFile, HandWrittenFixture) {
  const LabeledDataset ds = load_dataset(DRL_TEST_DATA "/two_samples.csv");
  EXPECT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.dim(), 3u);
  EXPECT_EQ(ds.num_classes, 2u);
  EXPECT_EQ(ds.labels, (std::vector<int>{0, 1}));
  EXPECT_EQ(ds.features(0, 1), -1.25);
  EXPECT_EQ(ds.features(1, 0), 0.001);
  EXPECT_EQ(ds.provenance.split, Split::IdTest);
}

TEST(DatasetFile, ParseErrorsCarryLineNumbers) {
  const std::string header = "f0,f1,label\n";
  auto line_of = [](const std::string& text) {
    try {
      parse_dataset(text);
    } catch (const ParseError& e) {
      return e.line();
    }
    return std::size_t{0};
  };
  EXPECT_EQ(line_of(header + "1,2,0\n\n3,4,1\n"), 3u);
  EXPECT_EQ(line_of(header + "1,2\n"), 2u);
  EXPECT_EQ(line_of(header + "1,x,0\n"), 2u);
  EXPECT_EQ(line_of("f0,f2,label\n1,2,0\n"), 1u);
  EXPECT_EQ(line_of("# num_classes=2\n" + header + "1,2,0\n1,2,5\n"), 4u);
  EXPECT_THROW(parse_dataset(header), ParseError);
  EXPECT_THROW(parse_dataset(""), ParseError);
}

TEST(Numbers, FormatParseRoundTrip) {
  oracle::Gen gen(13);
  for (int t = 0; t < 1000; ++t) {
    const double v = gen.normal() * std::pow(10.0, gen.uniform(-300, 300));
    EXPECT_EQ(parse_double(format_double(v)), v);
  }
  EXPECT_THROW(parse_double("1.5x"), std::invalid_argument);
}
