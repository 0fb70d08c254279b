#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>

#include "drl/matrix.hpp"

namespace drl {

struct GradCheckTolerance {
  double step = 1e-5;
  double relative = 1e-4;
  // Used instead of the relative bound when both derivatives are tiny.
  double absolute = 1e-7;
};

struct GradCheckReport {
  std::size_t checked = 0;
  std::size_t failures = 0;
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  std::size_t worst_index = 0;

  bool passed() const { return failures == 0; }
  std::string summary() const;
};

// Compares `analytic` against central differences of `loss` around `point`,
// coordinate by coordinate. A coordinate passes when its relative error is
// within tolerance.relative or its absolute error within tolerance.absolute.
GradCheckReport check_gradient(const std::function<double(std::span<const double>)>& loss,
                               std::span<const double> point, std::span<const double> analytic,
                               const GradCheckTolerance& tolerance = {});

}  // namespace drl
