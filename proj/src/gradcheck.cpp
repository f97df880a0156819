#include "remn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "remn/errors.hpp"

namespace remn {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kRelErrorFloor});
  return std::abs(analytic - numeric) / denom;
}

GradcheckResult gradcheck(const std::function<double()>& objective, std::span<GradProbe> probes, double eps) {
  return gradcheck(std::function<Evaluation()>([&] { return Evaluation{objective(), 0}; }), probes, eps);
}

GradcheckResult gradcheck(const std::function<Evaluation()>& objective, std::span<GradProbe> probes, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("gradcheck: eps must be positive");
  GradcheckResult result;
  const std::uint64_t base_branch = objective().branch;
  for (GradProbe& probe : probes) {
    if (probe.analytic.size() != probe.values.size()) {
      throw std::invalid_argument("gradcheck: probe '" + probe.name + "' has " +
                                  std::to_string(probe.analytic.size()) + " analytic entries for " +
                                  std::to_string(probe.values.size()) + " values");
    }
    for (std::size_t i = 0; i < probe.values.size(); ++i) {
      if (!probe.skip.empty() && probe.skip[i]) {
        ++result.skipped;
        continue;
      }
      const double original = probe.values[i];
      probe.values[i] = original + eps;
      const Evaluation up = objective();
      probe.values[i] = original - eps;
      const Evaluation down = objective();
      probe.values[i] = original;
      if (up.branch != base_branch || down.branch != base_branch) {
        ++result.kinks;
        continue;
      }
      const double numeric = (up.value - down.value) / (2.0 * eps);
      if (!std::isfinite(numeric)) {
        throw NumericError("gradcheck: non-finite difference estimate for " + probe.name + "[" +
                           std::to_string(i) + "]");
      }
      const double err = relative_error(probe.analytic[i], numeric);
      ++result.checked;
      if (err > result.max_rel_error || result.worst_probe.empty()) {
        result.max_rel_error = err;
        result.worst_probe = probe.name;
        result.worst_index = i;
        result.worst_analytic = probe.analytic[i];
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace remn
