#include "hi/nn/blocks.hpp"

#include <algorithm>

namespace hi::nn {
namespace F = torch::nn::functional;

namespace {

torch::nn::Conv2d conv(int64_t in, int64_t out, int64_t k, int64_t stride = 1, int64_t pad = -1,
                       bool bias = true) {
  if (pad < 0) pad = k / 2;
  return torch::nn::Conv2d(
      torch::nn::Conv2dOptions(in, out, k).stride(stride).padding(pad).bias(bias));
}

torch::Tensor resize_to(const torch::Tensor& label, const torch::Tensor& like) {
  if (label.size(-1) == like.size(-1) && label.size(-2) == like.size(-2)) return label;
  return F::interpolate(label, F::InterpolateFuncOptions()
                                   .size(std::vector<int64_t>{like.size(-2), like.size(-1)})
                                   .mode(torch::kNearest));
}

}  // namespace

SpadeImpl::SpadeImpl(int64_t channels, int64_t label_channels, int64_t hidden)
    : norm_(register_module(
          "norm", torch::nn::InstanceNorm2d(torch::nn::InstanceNorm2dOptions(channels).affine(false)))),
      shared_(register_module("shared", conv(label_channels, hidden, 3))),
      gamma_(register_module("gamma", conv(hidden, channels, 3))),
      beta_(register_module("beta", conv(hidden, channels, 3))) {}

torch::Tensor SpadeImpl::forward(const torch::Tensor& x, const torch::Tensor& label) {
  const auto actv = torch::relu(shared_->forward(resize_to(label, x)));
  return norm_->forward(x) * (1 + gamma_->forward(actv)) + beta_->forward(actv);
}

SpadeResBlockImpl::SpadeResBlockImpl(int64_t in_channels, int64_t out_channels,
                                     int64_t label_channels, int64_t hidden)
    : mid_(std::min(in_channels, out_channels)), learned_shortcut_(in_channels != out_channels) {
  norm_0_ = register_module("norm_0", Spade(in_channels, label_channels, hidden));
  conv_0_ = register_module("conv_0", conv(in_channels, mid_, 3));
  norm_1_ = register_module("norm_1", Spade(mid_, label_channels, hidden));
  conv_1_ = register_module("conv_1", conv(mid_, out_channels, 3));
  if (learned_shortcut_) {
    norm_s_ = register_module("norm_s", Spade(in_channels, label_channels, hidden));
    conv_s_ = register_module("conv_s", conv(in_channels, out_channels, 1, 1, 0, false));
  }
}

torch::Tensor SpadeResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& label) {
  const auto shortcut = learned_shortcut_ ? conv_s_->forward(norm_s_->forward(x, label)) : x;
  auto dx = conv_0_->forward(torch::leaky_relu(norm_0_->forward(x, label), 0.2));
  dx = conv_1_->forward(torch::leaky_relu(norm_1_->forward(dx, label), 0.2));
  return shortcut + dx;
}

ResnetBlockImpl::ResnetBlockImpl(int64_t channels) {
  body_ = register_module(
      "body",
      torch::nn::Sequential(
          torch::nn::ReflectionPad2d(1), conv(channels, channels, 3, 1, 0),
          torch::nn::InstanceNorm2d(torch::nn::InstanceNorm2dOptions(channels)), torch::nn::ReLU(),
          torch::nn::ReflectionPad2d(1), conv(channels, channels, 3, 1, 0),
          torch::nn::InstanceNorm2d(torch::nn::InstanceNorm2dOptions(channels))));
}

torch::Tensor ResnetBlockImpl::forward(const torch::Tensor& x) { return x + body_->forward(x); }

GlobalGeneratorImpl::GlobalGeneratorImpl(const GlobalGeneratorOptions& o) {
  torch::nn::Sequential seq;
  seq->push_back(torch::nn::ReflectionPad2d(3));
  seq->push_back(conv(o.in_channels, o.base_width, 7, 1, 0));
  seq->push_back(torch::nn::InstanceNorm2d(torch::nn::InstanceNorm2dOptions(o.base_width)));
  seq->push_back(torch::nn::ReLU());
  int64_t width = o.base_width;
  for (int64_t i = 0; i < o.downsamples; ++i) {
    const int64_t next = std::min(width * 2, o.max_width);
    seq->push_back(conv(width, next, 3, 2, 1));
    seq->push_back(torch::nn::InstanceNorm2d(torch::nn::InstanceNorm2dOptions(next)));
    seq->push_back(torch::nn::ReLU());
    width = next;
  }
  for (int64_t i = 0; i < o.residual_blocks; ++i) seq->push_back(ResnetBlock(width));
  for (int64_t i = 0; i < o.downsamples; ++i) {
    const int64_t next = std::max<int64_t>(
        o.base_width, std::min(o.base_width << (o.downsamples - i - 1), o.max_width));
    seq->push_back(torch::nn::ConvTranspose2d(
        torch::nn::ConvTranspose2dOptions(width, next, 3).stride(2).padding(1).output_padding(1)));
    seq->push_back(torch::nn::InstanceNorm2d(torch::nn::InstanceNorm2dOptions(next)));
    seq->push_back(torch::nn::ReLU());
    width = next;
  }
  seq->push_back(torch::nn::ReflectionPad2d(3));
  seq->push_back(conv(width, o.out_channels, 7, 1, 0));
  seq->push_back(torch::nn::Tanh());
  model_ = register_module("model", seq);
}

torch::Tensor GlobalGeneratorImpl::forward(const torch::Tensor& x) { return model_->forward(x); }

}  // namespace hi::nn
