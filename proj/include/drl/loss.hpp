#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "drl/matrix.hpp"

namespace drl {

// Probabilities are floored here before taking the log.
inline constexpr double kProbabilityFloor = 1e-12;

// Max-subtracted softmax. Throws NumericError on non-finite input.
Vector softmax(std::span<const double> logits);

// Numerically stable log(sum(exp(v))).
double log_sum_exp(std::span<const double> v);

// -log probs[label]. The probability is clamped at kProbabilityFloor; when
// that happens *clamped is set (if given) and the result stays finite.
double cross_entropy(std::span<const double> probs, std::size_t label, bool* clamped = nullptr);

struct BatchLoss {
  double value = 0.0;
  // d(value)/d(logits), same shape as the logits.
  Matrix logit_grad;
  std::size_t clamped = 0;
};

// Mean softmax cross-entropy over the rows of `logits`.
BatchLoss softmax_cross_entropy(const Matrix& logits, std::span<const std::size_t> labels);

}  // namespace drl
