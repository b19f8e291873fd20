#include "hi/nn/discriminator.hpp"

#include <algorithm>

#include "hi/core/error.hpp"

namespace hi::nn {
namespace F = torch::nn::functional;

PatchDiscriminatorImpl::PatchDiscriminatorImpl(const PatchDiscriminatorOptions& o) {
  const auto conv = [](int64_t in, int64_t out, int64_t stride) {
    return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 4).stride(stride).padding(2));
  };
  int64_t width = o.base_width;
  stages_.push_back(torch::nn::Sequential(conv(o.in_channels, width, 2), torch::nn::LeakyReLU(
                                              torch::nn::LeakyReLUOptions().negative_slope(0.2))));
  for (int64_t i = 1; i < o.layers; ++i) {
    const int64_t next = std::min<int64_t>(width * 2, 512);
    stages_.push_back(torch::nn::Sequential(
        conv(width, next, 2), torch::nn::InstanceNorm2d(torch::nn::InstanceNorm2dOptions(next)),
        torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2))));
    width = next;
  }
  const int64_t next = std::min<int64_t>(width * 2, 512);
  stages_.push_back(torch::nn::Sequential(
      conv(width, next, 1), torch::nn::InstanceNorm2d(torch::nn::InstanceNorm2dOptions(next)),
      torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2))));
  stages_.push_back(torch::nn::Sequential(conv(next, 1, 1)));
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    register_module("stage" + std::to_string(i), stages_[i]);
  }
}

std::vector<torch::Tensor> PatchDiscriminatorImpl::forward(const torch::Tensor& x) {
  std::vector<torch::Tensor> outs;
  outs.reserve(stages_.size());
  torch::Tensor h = x;
  for (auto& stage : stages_) {
    h = stage->forward(h);
    outs.push_back(h);
  }
  return outs;
}

DiscriminatorBankImpl::DiscriminatorBankImpl(const DiscriminatorBankOptions& o) {
  if (o.count < 1) throw Error(ErrorCode::kValidation, "discriminator bank needs at least one member");
  for (int64_t k = 0; k < o.count; ++k) {
    discriminators_.push_back(register_module("d" + std::to_string(k + 1), PatchDiscriminator(o.patch)));
  }
}

BankActivations DiscriminatorBankImpl::forward(const torch::Tensor& x) {
  BankActivations out;
  torch::Tensor h = x;
  for (std::size_t k = 0; k < discriminators_.size(); ++k) {
    if (k > 0) {
      h = F::avg_pool2d(h, F::AvgPool2dFuncOptions(3).stride(2).padding(1).count_include_pad(false));
    }
    out.push_back(discriminators_[k]->forward(h));
  }
  last_ = out;
  return out;
}

std::vector<int64_t> DiscriminatorBankImpl::scales() const {
  std::vector<int64_t> s;
  for (int64_t k = 0; k < count(); ++k) s.push_back(int64_t{1} << k);
  return s;
}

}  // namespace hi::nn
