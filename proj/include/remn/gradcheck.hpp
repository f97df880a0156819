#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace remn {

/// One block of coordinates to perturb. `values` is modified in place and
/// restored; `analytic` holds the gradient computed by backward.
struct GradProbe {
  std::string name;
  std::span<double> values;
  std::vector<double> analytic;
  /// Optional per-coordinate exclusions (documented kinks). Empty means none.
  std::vector<bool> skip;
};

struct GradcheckResult {
  double max_rel_error = 0.0;
  std::string worst_probe;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  /// Coordinates whose perturbation changed a relu mask or max-pool
  /// choice; the difference quotient is meaningless there, so they are
  /// excluded like `skipped`.
  std::size_t kinks = 0;
};

/// Objective value plus a signature of the piecewise branches taken while
/// computing it (Tape::branch_signature). Zero when not tracked.
struct Evaluation {
  double value = 0.0;
  std::uint64_t branch = 0;
};

/// Denominator floor of the relative error. Below this gradient magnitude
/// the comparison degrades to an absolute error scaled by 1/floor.
inline constexpr double kRelErrorFloor = 1e-3;

double relative_error(double analytic, double numeric);

/// Compares each analytic coordinate with the central difference
/// (f(x+eps) - f(x-eps)) / (2 eps) of `objective`, evaluated in double.
/// Throws NumericError when an estimate is not finite.
GradcheckResult gradcheck(const std::function<double()>& objective, std::span<GradProbe> probes, double eps = 1e-4);

/// As above; a coordinate is counted in `kinks` instead of checked when the
/// branch signature at x+eps or x-eps differs from the one at x.
GradcheckResult gradcheck(const std::function<Evaluation()>& objective, std::span<GradProbe> probes, double eps = 1e-4);

}  // namespace remn
