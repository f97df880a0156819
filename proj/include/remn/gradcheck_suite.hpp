#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "remn/autograd.hpp"
#include "remn/gradcheck.hpp"
#include "remn/model.hpp"

namespace remn {

struct GradcheckSuiteOptions {
  std::size_t seeds = 20;
  double eps = 1e-4;
  double layer_tolerance = 1e-4;
  double composite_tolerance = 1e-4;
  double model_tolerance = 1e-3;
  std::uint64_t base_seed = 1;
};

struct LayerCheckResult {
  std::string layer;
  double worst_rel_error = 0.0;
  double tolerance = 0.0;
  /// Location of worst_rel_error.
  std::uint64_t worst_seed = 0;
  std::string worst_probe;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t seeds = 0;
  std::size_t coordinates = 0;
  std::size_t skipped = 0;
  std::size_t kinks = 0;
  bool passed = false;
};

/// Checks a scalar projection sum(out * R) of `build`'s output, R fixed by
/// `seed`, against central differences over every entry of `params`.
/// `skip` may mark excluded coordinates per parameter (kinks).
GradcheckResult check_parameters(std::vector<BasicParameter<double>*> params,
                                 const std::function<Tape<double>::Var(Tape<double>&)>& build, std::uint64_t seed,
                                 double eps, const std::vector<std::vector<bool>>& skip = {});

/// Tiny network used for end-to-end checks: backbone [4,8,8], SE r=4,
/// residual [8,8,8], classifier hidden [8], 8x8 RGB input.
ModelConfig gradcheck_model_config(std::uint64_t seed);

/// Layer names accepted by check_layer, in report order.
const std::vector<std::string>& gradcheck_layers();

LayerCheckResult check_layer(std::string_view layer, const GradcheckSuiteOptions& options);

std::vector<LayerCheckResult> run_gradcheck_suite(const GradcheckSuiteOptions& options);

}  // namespace remn
