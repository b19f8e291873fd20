#pragma once

#include <span>
#include <vector>

#include <torch/types.h>

namespace hi::nn {

class PerceptualExtractor;

/// Per-discriminator list of layer activations; the last entry of each list is
/// the patch output.
using BankActivations = std::vector<std::vector<torch::Tensor>>;

// All L1-family kernels use mean reduction. Derivatives are forward
// differences over the last two (spatial) dims; the last row/column is
// excluded.

torch::Tensor l1(const torch::Tensor& a, const torch::Tensor& b);

/// mean|a_x| + mean|a_y|.
torch::Tensor grad_l1(const torch::Tensor& a);
/// mean|a_x - b_x| + mean|a_y - b_y|.
torch::Tensor grad_l1(const torch::Tensor& a, const torch::Tensor& b);

/// -sum_k mean(D_k(fake)). Unbounded below.
torch::Tensor hinge_g(std::span<const torch::Tensor> fake_outputs);

/// sum_k mean(relu(1 - D_k(real))) + mean(relu(1 + D_k(fake))).
torch::Tensor hinge_d(std::span<const torch::Tensor> real_outputs,
                      std::span<const torch::Tensor> fake_outputs);

/// sum_k sum_j mean|D_k^j(real) - D_k^j(fake)| over the layers given; the
/// real activations are detached.
torch::Tensor fm_discriminator(const BankActivations& real, const BankActivations& fake);

/// sum_j w_j * mean|F_j(x) - F_j(o)|. Throws Error(kBackendMissing) when the
/// extractor has no backend.
torch::Tensor fm_perceptual(const torch::Tensor& x, const torch::Tensor& o,
                            const PerceptualExtractor& extractor);

/// Patch outputs (last layer) of every discriminator.
std::vector<torch::Tensor> patch_outputs(const BankActivations& bank);
/// Activations without the patch output, for feature matching.
BankActivations intermediate_features(const BankActivations& bank);

}  // namespace hi::nn
