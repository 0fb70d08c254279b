#include <gtest/gtest.h>

#include <filesystem>

#include "drl/checkpoint.hpp"
#include "drl/config.hpp"
#include "drl/error.hpp"

using namespace drl;

TEST(ConfigFile, ParsesSectionsKeysAndComments) {
  const ConfigFile f = ConfigFile::parse("# header\n\n[a]\nx = 1\n  y=two words  \n; note\n[b]\nz=\n");
  ASSERT_EQ(f.sections().size(), 2u);
  EXPECT_EQ(f.get("a", "x"), "1");
  EXPECT_EQ(f.get("a", "y"), "two words");
  EXPECT_EQ(f.get("b", "z"), "");
  EXPECT_FALSE(f.get("b", "x").has_value());
  EXPECT_FALSE(f.get("c", "x").has_value());
}

TEST(ConfigFile, ErrorsCarryLineNumbers) {
  auto line_of = [](std::string_view text) {
    try {
      ConfigFile::parse(text);
    } catch (const ParseError& e) {
      return e.line();
    }
    return std::size_t{0};
  };
  EXPECT_EQ(line_of("[a]\nx = 1\nnot a pair\n"), 3u);
  EXPECT_EQ(line_of("x = 1\n"), 1u);
  EXPECT_EQ(line_of("[a]\n[a\n"), 2u);
  EXPECT_EQ(line_of("[a]\n\n[a]\n"), 3u);
  EXPECT_EQ(line_of("[a]\nx=1\nx=2\n"), 3u);
  EXPECT_EQ(line_of("[]\n"), 1u);
  EXPECT_EQ(line_of("[a]\n = 3\n"), 2u);
}

TEST(ConfigFile, SetAndTextRoundTrip) {
  ConfigFile f;
  f.set("s", "k", "v");
  f.set("t", "k", "1, 2");
  f.set("s", "k", "w");
  const ConfigFile g = ConfigFile::parse(f.to_text());
  EXPECT_EQ(g.get("s", "k"), "w");
  EXPECT_EQ(g.get("t", "k"), "1, 2");
  EXPECT_EQ(g.to_text(), f.to_text());
}

TEST(ExperimentConfig, EmptyTextGivesDefaults) {
  const ExperimentConfig c = parse_experiment_config("");
  ExperimentConfig d;
  d.ood_sets = default_ood_sets();
  EXPECT_EQ(c, d);
  EXPECT_EQ(c.ood_sets.size(), 3u);
  EXPECT_EQ(c.detectors.size(), 8u);
  EXPECT_EQ(c.detector.odin_temperature, 1000.0);
  EXPECT_EQ(c.detector.knn_k, 10u);
  EXPECT_EQ(c.detector.ra_percentile, 90.0);
  EXPECT_EQ(c.detector.mahalanobis_ridge, 1e-6);
}

TEST(ExperimentConfig, ReadsEveryKey) {
  const ExperimentConfig c = parse_experiment_config(R"(
[experiment]
name = small
trials = 2
seed = 9
[data]
generator = moons
num_classes = 2
dim = 2
n_train = 300
n_test = 100
spread = 0.7
center_range = 3
noise = 0.2
[ood.far]
kind = uniform-box
n = 50
offset = 12.5
[network]
hidden = 8, 4
aux_hidden = 6
[train]
epochs = 3
lr = 0.05
milestones = 2
batch = 16
[drl]
epsilon = 0.002
sigma = identity
epsilon_grid = 0, 0.5
sigma_kinds = gaussian, uniform
ensemble_sizes = 1, 3
[detectors]
list = msp, drl
energy.temperature = 2
odin.temperature = 10
odin.delta = 0.01
knn.k = 3
ra.percentile = 80
ensemble.size = 2
mahalanobis.ridge = 0.001
[io]
model_dir = models
)");
  EXPECT_EQ(c.name, "small");
  EXPECT_EQ(c.trials, 2u);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.generator, "moons");
  EXPECT_EQ(c.n_train, 300u);
  EXPECT_EQ(c.noise, 0.2);
  ASSERT_EQ(c.ood_sets.size(), 1u);
  EXPECT_EQ(c.ood_sets[0].name, "far");
  EXPECT_EQ(c.ood_sets[0].spec, (OodSpec{OodKind::UniformBox, 50, 12.5}));
  EXPECT_EQ(c.train.hidden, (std::vector<std::size_t>{8, 4}));
  EXPECT_EQ(c.aux_hidden, (std::vector<std::size_t>{6}));
  EXPECT_EQ(c.train.learning_rate, 0.05);
  EXPECT_EQ(c.train.batch_size, 16u);
  EXPECT_EQ(c.sigma, SigmaKind::Identity);
  EXPECT_EQ(c.epsilon_grid, (std::vector<double>{0.0, 0.5}));
  EXPECT_EQ(c.sigma_kinds, (std::vector<SigmaKind>{SigmaKind::Gaussian, SigmaKind::Uniform}));
  EXPECT_EQ(c.ensemble_sizes, (std::vector<std::size_t>{1, 3}));
  EXPECT_EQ(c.detectors, (std::vector<DetectorKind>{DetectorKind::Msp, DetectorKind::Drl}));
  EXPECT_EQ(c.detector.energy_temperature, 2.0);
  EXPECT_EQ(c.detector.knn_k, 3u);
  EXPECT_EQ(c.detector.mahalanobis_ridge, 0.001);
  EXPECT_EQ(c.model_dir, "models");
}

TEST(ExperimentConfig, ResolvedTextReproducesConfig) {
  ExperimentConfig c = parse_experiment_config("[drl]\nepsilon = 0.1234567890123\n[ood.x]\nkind = ring\noffset = -1.5\n");
  c.train.hidden = {3, 5, 7};
  c.detector.odin_delta = 1.0 / 3.0;
  const std::string text = resolved_text(c);
  EXPECT_EQ(parse_experiment_config(text), c);
  EXPECT_EQ(resolved_text(parse_experiment_config(text)), text);
}

TEST(ExperimentConfig, RejectsBadInput) {
  for (const char* text : {
           "[nope]\nx = 1\n",
           "[data]\nwidth = 3\n",
           "[experiment]\ntrials = 0\n",
           "[experiment]\ntrials = -2\n",
           "[experiment]\nseed = 1.5\n",
           "[data]\nspread = wide\n",
           "[data]\ngenerator = spirals\n",
           "[train]\nbatch = 0\n",
           "[drl]\nepsilon = -0.1\n",
           "[drl]\nepsilon_grid = 0, -1\n",
           "[drl]\nsigma = diagonal\n",
           "[drl]\nensemble_sizes = 0\n",
           "[detectors]\nlist = msp, gem\n",
           "[detectors]\nodin.temperature = 0\n",
           "[detectors]\nknn.k = 0\n",
           "[ood.]\nkind = ring\n",
           "[ood.a]\nkind = sphere\n",
           "[ood.a]\ncolour = red\n",
           "[data]\nbroken line\n",
       })
    EXPECT_THROW(parse_experiment_config(text), ConfigError) << text;
}

TEST(ExperimentConfig, LoadFromFile) {
  const auto path = std::filesystem::temp_directory_path() / "drl_config_test.cfg";
  write_file(path, "[experiment]\ntrials = 3\n");
  EXPECT_EQ(load_experiment_config(path).trials, 3u);
  std::filesystem::remove(path);
  EXPECT_THROW(load_experiment_config(path), ConfigError);
}
