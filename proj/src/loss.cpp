#include "drl/loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "drl/error.hpp"

namespace drl {

Vector softmax(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("softmax: empty input");
  if (!all_finite(logits)) throw NumericError("softmax: non-finite logit");
  const double peak = *std::max_element(logits.begin(), logits.end());
  Vector out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - peak);
    total += out[i];
  }
  for (double& p : out) p /= total;
  return out;
}

double log_sum_exp(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("log_sum_exp: empty input");
  if (!all_finite(v)) throw NumericError("log_sum_exp: non-finite input");
  const double peak = *std::max_element(v.begin(), v.end());
  double total = 0.0;
  for (double x : v) total += std::exp(x - peak);
  return peak + std::log(total);
}

double cross_entropy(std::span<const double> probs, std::size_t label, bool* clamped) {
  if (label >= probs.size()) throw std::invalid_argument("cross_entropy: label out of range");
  const double p = probs[label];
  const bool floor_hit = p < kProbabilityFloor;
  if (clamped != nullptr) *clamped = floor_hit;
  if (p >= 1.0) return 0.0;
  return -std::log(floor_hit ? kProbabilityFloor : p);
}

BatchLoss softmax_cross_entropy(const Matrix& logits, std::span<const std::size_t> labels) {
  if (logits.rows() != labels.size()) throw std::invalid_argument("softmax_cross_entropy: batch size mismatch");
  if (logits.rows() == 0) throw std::invalid_argument("softmax_cross_entropy: empty batch");
  BatchLoss out;
  out.logit_grad = Matrix(logits.rows(), logits.cols());
  const double scale = 1.0 / static_cast<double>(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    if (labels[i] >= logits.cols()) throw std::invalid_argument("softmax_cross_entropy: label out of range");
    const Vector p = softmax(logits.row(i));
    bool clamped = false;
    out.value += cross_entropy(p, labels[i], &clamped);
    out.clamped += clamped ? 1 : 0;
    auto g = out.logit_grad.row(i);
    for (std::size_t k = 0; k < p.size(); ++k) g[k] = scale * (p[k] - (k == labels[i] ? 1.0 : 0.0));
  }
  out.value *= scale;
  return out;
}

}  // namespace drl
