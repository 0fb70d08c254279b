#include "drl/auxiliary.hpp"

#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

#include "drl/checkpoint.hpp"
#include "drl/error.hpp"
#include "drl/loss.hpp"
#include "drl/seed.hpp"

namespace drl {

namespace {

constexpr double kCholeskyRidge = 1e-10;

template <class Dist>
Matrix symmetrized_random(std::size_t k, std::uint64_t seed, Dist dist) {
  std::mt19937_64 rng(seed);
  Matrix a(k, k);
  for (double& v : a.data()) v = dist(rng);
  Matrix s(k, k);
  double diag = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) s(i, j) = 0.5 * (a(i, j) + a(j, i));
    diag += std::abs(s(i, i));
  }
  diag /= static_cast<double>(k);
  if (diag > 0.0)
    for (double& v : s.data()) v /= diag;
  return s;
}

void check_shapes(std::size_t mu, std::size_t d, const Matrix& sigma) {
  if (mu != d || sigma.rows() != mu || sigma.cols() != mu)
    throw std::invalid_argument("construct_c: mu, d and Sigma shapes disagree");
}

}  // namespace

std::string_view to_string(SigmaKind kind) {
  switch (kind) {
    case SigmaKind::Pretrained: return "pretrained";
    case SigmaKind::Identity: return "identity";
    case SigmaKind::Gaussian: return "gaussian";
    case SigmaKind::Uniform: return "uniform";
  }
  return "?";
}

SigmaKind sigma_kind_from_string(std::string_view s) {
  if (s == "pretrained") return SigmaKind::Pretrained;
  if (s == "identity") return SigmaKind::Identity;
  if (s == "gaussian") return SigmaKind::Gaussian;
  if (s == "uniform") return SigmaKind::Uniform;
  throw ConfigError("unknown sigma kind '" + std::string(s) + "' (expected pretrained, identity, gaussian or uniform)");
}

Matrix gaussian_random_sigma(std::size_t k, std::uint64_t seed) {
  return symmetrized_random(k, seed, std::normal_distribution<double>(0.0, 1.0));
}

Matrix uniform_random_sigma(std::size_t k, std::uint64_t seed) {
  return symmetrized_random(k, seed, std::uniform_real_distribution<double>(0.0, 1.0));
}

CovarianceSpec resolve_covariance(SigmaKind kind, const PretrainedModel& pretrained, std::uint64_t seed) {
  const std::size_t k = pretrained.num_classes();
  CovarianceSpec spec{kind, seed, {}};
  switch (kind) {
    case SigmaKind::Pretrained: spec.matrix = pretrained.sigma_d(); break;
    case SigmaKind::Identity: spec.matrix = Matrix::identity(k); break;
    case SigmaKind::Gaussian: spec.matrix = gaussian_random_sigma(k, seed); break;
    case SigmaKind::Uniform: spec.matrix = uniform_random_sigma(k, seed); break;
  }
  return spec;
}

Vector construct_c(std::span<const double> mu, std::span<const double> d, const Matrix& sigma, double epsilon) {
  check_shapes(mu.size(), d.size(), sigma);
  if (!(epsilon >= 0.0)) throw std::invalid_argument("construct_c: epsilon must be nonnegative");
  const Vector sigma_d = matvec(sigma, d);
  const double mu_dot_d = dot(mu, d);
  Vector c(mu.size());
  for (std::size_t i = 0; i < mu.size(); ++i) c[i] = mu[i] - epsilon * (sigma_d[i] + mu_dot_d * mu[i]);
  if (!all_finite(c) || !std::isfinite(mu_dot_d)) throw NumericError("construct_c: non-finite result");
  return c;
}

Matrix construct_c(const Matrix& mu, const Matrix& d, const Matrix& sigma, double epsilon) {
  if (mu.rows() != d.rows()) throw std::invalid_argument("construct_c: batch sizes differ");
  Matrix c(mu.rows(), mu.cols());
  for (std::size_t r = 0; r < mu.rows(); ++r) {
    const Vector row = construct_c(mu.row(r), d.row(r), sigma, epsilon);
    std::copy(row.begin(), row.end(), c.row(r).begin());
  }
  return c;
}

Vector monte_carlo_c(std::span<const double> mu, std::span<const double> d, const Matrix& sigma, double epsilon,
                     std::size_t n_samples, std::uint64_t seed) {
  check_shapes(mu.size(), d.size(), sigma);
  if (n_samples == 0) throw std::invalid_argument("monte_carlo_c: need at least one sample");
  const std::size_t k = mu.size();

  Matrix lower;
  bool all_zero = true;
  for (double v : sigma.data()) all_zero = all_zero && v == 0.0;
  if (all_zero) {
    // Point mass: every draw equals mu.
    const double weight = 1.0 - epsilon * dot(mu, d);
    Vector out(k);
    for (std::size_t i = 0; i < k; ++i) out[i] = weight * mu[i];
    return out;
  }
  {
    try {
      lower = cholesky(sigma);
    } catch (const NumericError&) {
      Matrix ridged = sigma;
      for (std::size_t i = 0; i < k; ++i) ridged(i, i) += kCholeskyRidge;
      try {
        lower = cholesky(ridged);
      } catch (const NumericError& e) {
        throw NumericError(std::string("monte_carlo_c: Sigma is not positive semidefinite: ") + e.what());
      }
    }
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vector noise(k), z(k), total(k, 0.0);
  for (std::size_t s = 0; s < n_samples; ++s) {
    for (double& v : noise) v = gauss(rng);
    for (std::size_t i = 0; i < k; ++i) {
      double zi = mu[i];
      for (std::size_t j = 0; j <= i; ++j) zi += lower(i, j) * noise[j];
      z[i] = zi;
    }
    const double weight = 1.0 - epsilon * dot(z, d);
    for (std::size_t i = 0; i < k; ++i) total[i] += weight * z[i];
  }
  for (double& v : total) v /= static_cast<double>(n_samples);
  return total;
}

DRLModel::DRLModel(PretrainedModel pretrained, MLPNetwork aux_net, double epsilon, CovarianceSpec sigma_z,
                   std::vector<double> loss_history)
    : pretrained_(std::move(pretrained)), aux_net_(std::move(aux_net)), epsilon_(epsilon),
      sigma_z_(std::move(sigma_z)), loss_history_(std::move(loss_history)) {
  if (!(epsilon_ >= 0.0)) throw std::invalid_argument("DRLModel: epsilon must be nonnegative");
  if (aux_net_.input_dim() != pretrained_.input_dim() || aux_net_.output_dim() != pretrained_.num_classes())
    throw std::invalid_argument("DRLModel: auxiliary network shape does not match the pretrained network");
  const std::size_t k = pretrained_.num_classes();
  if (sigma_z_.matrix.rows() != k || sigma_z_.matrix.cols() != k)
    throw std::invalid_argument("DRLModel: Sigma_Z must be K x K");
}

Vector component_expectation(const DRLModel& model, std::span<const double> x) { return forward(model.aux_net(), x); }

Matrix component_expectation(const DRLModel& model, const Matrix& batch) { return forward(model.aux_net(), batch); }

DualRepresentation represent(const DRLModel& model, const Matrix& batch) {
  DualRepresentation rep;
  rep.d = extract_rep(model.pretrained(), batch);
  rep.c = construct_c(component_expectation(model, batch), rep.d, model.sigma_z().matrix, model.epsilon());
  return rep;
}

AuxLoss aux_loss(const MLPNetwork& aux_net, const Matrix& batch, const Matrix& d, std::span<const std::size_t> labels,
                 const Matrix& sigma, double epsilon) {
  if (batch.rows() == 0) throw std::invalid_argument("aux_loss: empty batch");
  if (d.rows() != batch.rows() || labels.size() != batch.rows())
    throw std::invalid_argument("aux_loss: batch, d and labels disagree in length");
  const std::size_t k = aux_net.output_dim();
  for (std::size_t y : labels)
    if (y >= k) throw std::invalid_argument("aux_loss: label out of range");

  AuxLoss out;
  out.tape.record(forward_trace(aux_net, batch));
  const Matrix& mu = out.tape.trace().logits;
  const Matrix c = construct_c(mu, d, sigma, epsilon);
  BatchLoss ce = softmax_cross_entropy(c, labels);

  // Pull d(loss)/dc back to d(loss)/d(mu) with
  //   dc/dmu = I - eps * (mu dᵀ + (muᵀd) I).
  Matrix mu_grad(mu.rows(), k);
  for (std::size_t r = 0; r < mu.rows(); ++r) {
    auto g = ce.logit_grad.row(r);
    auto m = mu.row(r);
    auto dr = d.row(r);
    const double mu_dot_g = dot(m, g);
    const double mu_dot_d = dot(m, dr);
    auto out_row = mu_grad.row(r);
    for (std::size_t i = 0; i < k; ++i) out_row[i] = g[i] - epsilon * (dr[i] * mu_dot_g + mu_dot_d * g[i]);
  }
  out.value = ce.value;
  out.tape.set_loss(ce.value, std::move(mu_grad));
  return out;
}

AuxLoss aux_loss(const DRLModel& model, const Matrix& batch, std::span<const std::size_t> labels) {
  return aux_loss(model.aux_net(), batch, extract_rep(model.pretrained(), batch), labels, model.sigma_z().matrix,
                  model.epsilon());
}

DRLModel train_auxiliary(const PretrainedModel& pretrained, const LabeledDataset& ds, const AuxConfig& config) {
  if (!(config.epsilon >= 0.0)) throw ConfigError("epsilon must be nonnegative");
  if (ds.dim() != pretrained.input_dim()) throw ConfigError("train_auxiliary: dataset width differs from the network");
  const std::vector<std::size_t> labels = ds.class_indices();
  const std::uint64_t seed = config.train.seed;

  std::vector<std::size_t> dims{ds.dim()};
  if (config.hidden.empty()) {
    const auto pdims = pretrained.net().layer_dims();
    dims.insert(dims.end(), pdims.begin() + 1, pdims.end() - 1);
  } else {
    dims.insert(dims.end(), config.hidden.begin(), config.hidden.end());
  }
  dims.push_back(pretrained.num_classes());
  MLPNetwork aux = MLPNetwork::glorot_uniform(dims, derive_seed(seed, stream::kAuxInit));
  CovarianceSpec sigma = resolve_covariance(config.sigma, pretrained, derive_seed(seed, stream::kSigma));

  // g_phi is frozen, so d is computed once.
  const Matrix d_all = extract_rep(pretrained, ds.features);
  std::vector<std::size_t> batch_labels;
  auto step = [&](std::span<const std::size_t> rows) {
    batch_labels.clear();
    for (std::size_t r : rows) batch_labels.push_back(labels[r]);
    AuxLoss loss = aux_loss(aux, gather_rows(ds.features, rows), gather_rows(d_all, rows), batch_labels, sigma.matrix,
                            config.epsilon);
    return std::pair{loss.value, backward(aux, loss.tape)};
  };
  std::vector<double> history;
  try {
    auto full = [&] { return aux_loss(aux, ds.features, d_all, labels, sigma.matrix, config.epsilon).value; };
    history = run_sgd(aux, ds.size(), config.train, derive_seed(seed, stream::kAuxShuffle), step, full);
  } catch (const NumericError& e) {
    throw NumericError("auxiliary training diverged (epsilon " + format_double(config.epsilon) + ", sigma " +
                       std::string(to_string(config.sigma)) + "): " + e.what());
  }
  return DRLModel(pretrained, std::move(aux), config.epsilon, std::move(sigma), std::move(history));
}

void save_drl(const DRLModel& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_pretrained(model.pretrained(), dir / "pretrained.ckpt");
  save_checkpoint(model.aux_net(), dir / "aux.ckpt");
  std::ostringstream manifest;
  manifest << "# DRL model manifest\n";
  manifest << "pretrained = pretrained.ckpt\n";
  manifest << "aux = aux.ckpt\n";
  manifest << "epsilon = " << format_double(model.epsilon()) << "\n";
  manifest << "sigma_kind = " << to_string(model.sigma_z().kind) << "\n";
  manifest << "sigma_seed = " << model.sigma_z().seed << "\n";
  manifest << "seed = " << model.pretrained().config().seed << "\n";
  write_file(dir / "drl.manifest", manifest.str());
}

DRLModel load_drl(const std::filesystem::path& dir) {
  const std::string text = read_file(dir / "drl.manifest");
  std::istringstream in(text);
  std::string line, pretrained_file = "pretrained.ckpt", aux_file = "aux.ckpt";
  double epsilon = -1.0;
  SigmaKind kind = SigmaKind::Pretrained;
  std::uint64_t sigma_seed = 0;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("manifest line without '='", line_no);
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t"));
      s.erase(s.find_last_not_of(" \t\r") + 1);
      return s;
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      if (key == "pretrained") pretrained_file = value;
      else if (key == "aux") aux_file = value;
      else if (key == "epsilon") epsilon = parse_double(value);
      else if (key == "sigma_kind") kind = sigma_kind_from_string(value);
      else if (key == "sigma_seed") sigma_seed = std::stoull(value);
      else if (key == "seed") continue;
      else throw ParseError("unknown manifest key '" + key + "'", line_no);
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  if (epsilon < 0.0) throw ParseError("manifest lacks a nonnegative epsilon", 0);
  PretrainedModel pretrained = load_pretrained(dir / pretrained_file);
  MLPNetwork aux = load_checkpoint(dir / aux_file);
  CovarianceSpec sigma = resolve_covariance(kind, pretrained, sigma_seed);
  return DRLModel(std::move(pretrained), std::move(aux), epsilon, std::move(sigma));
}

}  // namespace drl
