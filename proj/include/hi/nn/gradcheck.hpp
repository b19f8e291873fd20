#pragma once

#include <cstdint>
#include <functional>

#include <torch/types.h>

namespace hi::nn {

struct GradCheckOptions {
  double epsilon = 1e-6;
  /// Coordinates sampled when the parameter has more elements than this.
  int max_coordinates = 64;
  std::uint64_t seed = 0;
  /// Denominator floor of the relative error.
  double abs_floor = 1e-10;
};

using ScalarLoss = std::function<torch::Tensor(const torch::Tensor&)>;

/// Max relative error between the autograd gradient of `loss` at `params`
/// and central finite differences. `params` must be double precision; throws
/// Error(kNonFinite) if the loss is not finite.
double finite_diff_check(const ScalarLoss& loss, const torch::Tensor& params,
                         const GradCheckOptions& options = {});

}  // namespace hi::nn
