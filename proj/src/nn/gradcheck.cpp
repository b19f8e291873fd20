#include "hi/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <torch/torch.h>

#include "hi/core/error.hpp"

namespace hi::nn {
namespace {

double evaluate(const ScalarLoss& loss, const torch::Tensor& p) {
  const auto value = loss(p);
  if (value.numel() != 1) throw Error(ErrorCode::kValidation, "loss must be scalar");
  const double v = value.item<double>();
  if (!std::isfinite(v)) throw Error(ErrorCode::kNonFinite, "loss is not finite at the probe point");
  return v;
}

}  // namespace

double finite_diff_check(const ScalarLoss& loss, const torch::Tensor& params,
                         const GradCheckOptions& options) {
  if (params.scalar_type() != torch::kFloat64) {
    throw Error(ErrorCode::kValidation, "finite_diff_check requires double precision parameters");
  }
  auto base = params.detach().clone().contiguous();
  auto leaf = base.clone().requires_grad_(true);
  const auto value = loss(leaf);
  if (!std::isfinite(value.item<double>())) {
    throw Error(ErrorCode::kNonFinite, "loss is not finite at the probe point");
  }
  const auto analytic = torch::autograd::grad({value}, {leaf}, {}, false, false, true)[0];
  const auto grad = analytic.defined() ? analytic.contiguous() : torch::zeros_like(base);

  const int64_t n = base.numel();
  std::vector<int64_t> coords(n);
  std::iota(coords.begin(), coords.end(), 0);
  if (n > options.max_coordinates) {
    std::mt19937_64 rng(options.seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(options.max_coordinates);
  }

  torch::NoGradGuard no_grad;
  auto flat = base.view({-1});
  const auto g = grad.view({-1});
  double worst = 0.0;
  for (int64_t i : coords) {
    const double original = flat[i].item<double>();
    flat[i] = original + options.epsilon;
    const double plus = evaluate(loss, base);
    flat[i] = original - options.epsilon;
    const double minus = evaluate(loss, base);
    flat[i] = original;
    const double numeric = (plus - minus) / (2.0 * options.epsilon);
    const double exact = g[i].item<double>();
    const double denom = std::max({std::abs(numeric), std::abs(exact), options.abs_floor});
    worst = std::max(worst, std::abs(numeric - exact) / denom);
  }
  return worst;
}

}  // namespace hi::nn
