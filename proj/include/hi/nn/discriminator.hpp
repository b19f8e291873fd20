#pragma once

#include <vector>

#include <torch/torch.h>

#include "hi/nn/losses.hpp"

namespace hi::nn {

struct PatchDiscriminatorOptions {
  int64_t in_channels = 6;
  int64_t base_width = 64;
  int64_t layers = 3;
};

/// PatchGAN: strided 4x4 convolutions with leaky rectification; every
/// intermediate activation is returned, the patch logits last.
class PatchDiscriminatorImpl : public torch::nn::Module {
 public:
  explicit PatchDiscriminatorImpl(const PatchDiscriminatorOptions& options);
  std::vector<torch::Tensor> forward(const torch::Tensor& x);

 private:
  std::vector<torch::nn::Sequential> stages_;
};
TORCH_MODULE(PatchDiscriminator);

struct DiscriminatorBankOptions {
  PatchDiscriminatorOptions patch;
  int64_t count = 2;
};

/// Discriminator k sees the input downsampled by 2^k (scales 1, 2, ...).
/// A bank instance belongs to one training context at a time.
class DiscriminatorBankImpl : public torch::nn::Module {
 public:
  explicit DiscriminatorBankImpl(const DiscriminatorBankOptions& options);
  BankActivations forward(const torch::Tensor& x);

  int64_t count() const { return static_cast<int64_t>(discriminators_.size()); }
  std::vector<int64_t> scales() const;
  /// Activations of the most recent forward pass.
  const BankActivations& layer_activations() const { return last_; }

 private:
  std::vector<PatchDiscriminator> discriminators_;
  BankActivations last_;
};
TORCH_MODULE(DiscriminatorBank);

}  // namespace hi::nn
