#include "hi/nn/losses.hpp"

#include <torch/torch.h>

#include "hi/core/error.hpp"
#include "hi/nn/perceptual.hpp"

namespace hi::nn {
namespace {

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (!a.sizes().equals(b.sizes())) {
    throw Error(ErrorCode::kShapeMismatch, std::string(what) + ": operand shapes differ");
  }
}

void require_spatial(const torch::Tensor& a) {
  if (a.dim() < 2 || a.size(-1) < 2 || a.size(-2) < 2) {
    throw Error(ErrorCode::kShapeMismatch, "grad_l1 needs at least 2x2 spatial extent");
  }
}

torch::Tensor dx(const torch::Tensor& a) {
  const int64_t w = a.size(-1);
  return a.narrow(-1, 1, w - 1) - a.narrow(-1, 0, w - 1);
}

torch::Tensor dy(const torch::Tensor& a) {
  const int64_t h = a.size(-2);
  return a.narrow(-2, 1, h - 1) - a.narrow(-2, 0, h - 1);
}

}  // namespace

torch::Tensor l1(const torch::Tensor& a, const torch::Tensor& b) {
  require_same_shape(a, b, "l1");
  return (a - b).abs().mean();
}

torch::Tensor grad_l1(const torch::Tensor& a) {
  require_spatial(a);
  return dx(a).abs().mean() + dy(a).abs().mean();
}

torch::Tensor grad_l1(const torch::Tensor& a, const torch::Tensor& b) {
  require_same_shape(a, b, "grad_l1");
  require_spatial(a);
  return (dx(a) - dx(b)).abs().mean() + (dy(a) - dy(b)).abs().mean();
}

torch::Tensor hinge_g(std::span<const torch::Tensor> fake_outputs) {
  if (fake_outputs.empty()) throw Error(ErrorCode::kValidation, "hinge_g: empty discriminator bank");
  torch::Tensor loss = -fake_outputs[0].mean();
  for (std::size_t k = 1; k < fake_outputs.size(); ++k) loss = loss - fake_outputs[k].mean();
  return loss;
}

torch::Tensor hinge_d(std::span<const torch::Tensor> real_outputs,
                      std::span<const torch::Tensor> fake_outputs) {
  if (real_outputs.empty() || real_outputs.size() != fake_outputs.size()) {
    throw Error(ErrorCode::kShapeMismatch, "hinge_d: real and fake banks differ");
  }
  torch::Tensor loss;
  for (std::size_t k = 0; k < real_outputs.size(); ++k) {
    require_same_shape(real_outputs[k], fake_outputs[k], "hinge_d");
    auto term = torch::relu(1.0 - real_outputs[k]).mean() + torch::relu(1.0 + fake_outputs[k]).mean();
    loss = loss.defined() ? loss + term : term;
  }
  return loss;
}

torch::Tensor fm_discriminator(const BankActivations& real, const BankActivations& fake) {
  if (real.size() != fake.size()) {
    throw Error(ErrorCode::kShapeMismatch, "fm_discriminator: discriminator counts differ");
  }
  torch::Tensor loss;
  for (std::size_t k = 0; k < real.size(); ++k) {
    if (real[k].size() != fake[k].size()) {
      throw Error(ErrorCode::kShapeMismatch, "fm_discriminator: layer counts differ");
    }
    for (std::size_t j = 0; j < real[k].size(); ++j) {
      require_same_shape(real[k][j], fake[k][j], "fm_discriminator");
      auto term = (real[k][j].detach() - fake[k][j]).abs().mean();
      loss = loss.defined() ? loss + term : term;
    }
  }
  if (!loss.defined()) throw Error(ErrorCode::kValidation, "fm_discriminator: no layers");
  return loss;
}

torch::Tensor fm_perceptual(const torch::Tensor& x, const torch::Tensor& o,
                            const PerceptualExtractor& extractor) {
  require_same_shape(x, o, "fm_perceptual");
  if (!extractor.has_backend()) {
    throw Error(ErrorCode::kBackendMissing, "fm_perceptual: no perceptual backend configured");
  }
  const auto fx = extractor.extract(x);
  const auto fo = extractor.extract(o);
  const auto& w = extractor.weights();
  torch::Tensor loss;
  for (std::size_t j = 0; j < fx.size(); ++j) {
    auto term = w[j] * (fx[j] - fo[j]).abs().mean();
    loss = loss.defined() ? loss + term : term;
  }
  return loss;
}

std::vector<torch::Tensor> patch_outputs(const BankActivations& bank) {
  std::vector<torch::Tensor> out;
  out.reserve(bank.size());
  for (const auto& layers : bank) out.push_back(layers.back());
  return out;
}

BankActivations intermediate_features(const BankActivations& bank) {
  BankActivations out;
  out.reserve(bank.size());
  for (const auto& layers : bank) out.emplace_back(layers.begin(), layers.end() - 1);
  return out;
}

}  // namespace hi::nn
