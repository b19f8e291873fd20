#pragma once

#include <torch/torch.h>

namespace hi::nn {

/// Spatially-adaptive normalization: parameter-free instance norm modulated
/// by per-pixel gamma/beta predicted from the (resized) conditioning map.
class SpadeImpl : public torch::nn::Module {
 public:
  SpadeImpl(int64_t channels, int64_t label_channels, int64_t hidden);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& label);

 private:
  torch::nn::InstanceNorm2d norm_{nullptr};
  torch::nn::Conv2d shared_{nullptr};
  torch::nn::Conv2d gamma_{nullptr};
  torch::nn::Conv2d beta_{nullptr};
};
TORCH_MODULE(Spade);

/// SPADE residual block with a learned shortcut when widths differ.
class SpadeResBlockImpl : public torch::nn::Module {
 public:
  SpadeResBlockImpl(int64_t in_channels, int64_t out_channels, int64_t label_channels,
                    int64_t hidden);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& label);

 private:
  int64_t mid_;
  bool learned_shortcut_;
  Spade norm_0_{nullptr}, norm_1_{nullptr}, norm_s_{nullptr};
  torch::nn::Conv2d conv_0_{nullptr}, conv_1_{nullptr}, conv_s_{nullptr};
};
TORCH_MODULE(SpadeResBlock);

/// Reflection-padded residual block with instance norm.
class ResnetBlockImpl : public torch::nn::Module {
 public:
  explicit ResnetBlockImpl(int64_t channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(ResnetBlock);

struct GlobalGeneratorOptions {
  int64_t in_channels = 3;
  int64_t out_channels = 2;
  int64_t base_width = 64;
  int64_t downsamples = 4;
  int64_t residual_blocks = 9;
  int64_t max_width = 1024;
};

/// Encoder / residual core / decoder image-to-image generator with a tanh
/// head.
class GlobalGeneratorImpl : public torch::nn::Module {
 public:
  explicit GlobalGeneratorImpl(const GlobalGeneratorOptions& options);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Sequential model_{nullptr};
};
TORCH_MODULE(GlobalGenerator);

}  // namespace hi::nn
