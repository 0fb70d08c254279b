#include "drl/gradcheck.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace drl {

std::string GradCheckReport::summary() const {
  char buf[200];
  std::snprintf(buf, sizeof buf, "%zu/%zu coordinates ok, max rel err %.3g, max abs err %.3g (worst #%zu)",
                checked - failures, checked, max_relative_error, max_absolute_error, worst_index);
  return buf;
}

GradCheckReport check_gradient(const std::function<double(std::span<const double>)>& loss,
                               std::span<const double> point, std::span<const double> analytic,
                               const GradCheckTolerance& tolerance) {
  if (point.size() != analytic.size()) throw std::invalid_argument("check_gradient: length mismatch");
  GradCheckReport report;
  Vector probe(point.begin(), point.end());
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + tolerance.step;
    const double up = loss(probe);
    probe[i] = saved - tolerance.step;
    const double down = loss(probe);
    probe[i] = saved;
    const double numeric = (up - down) / (2.0 * tolerance.step);

    const double abs_err = std::abs(numeric - analytic[i]);
    const double scale = std::max(std::abs(numeric), std::abs(analytic[i]));
    const double rel_err = scale > 0.0 ? abs_err / scale : 0.0;
    ++report.checked;
    if (rel_err > tolerance.relative && abs_err > tolerance.absolute) ++report.failures;
    if (rel_err > report.max_relative_error && scale > tolerance.absolute) {
      report.max_relative_error = rel_err;
      report.worst_index = i;
    }
    report.max_absolute_error = std::max(report.max_absolute_error, abs_err);
  }
  return report;
}

}  // namespace drl
