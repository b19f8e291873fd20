#include "hi/nn/perceptual.hpp"

#include <ATen/CPUGeneratorImpl.h>
#include <torch/script.h>

#include "hi/core/error.hpp"

namespace hi::nn {
namespace {

torch::Tensor kaiming(at::Generator& gen, int64_t out, int64_t in, int64_t k) {
  const double std = std::sqrt(2.0 / static_cast<double>(in * k * k));
  return torch::randn({out, in, k, k}, gen, torch::kFloat32) * std;
}

}  // namespace

RandomConvBackend::RandomConvBackend(std::uint64_t seed, std::vector<int64_t> stage_channels,
                                     int64_t in_channels) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  int64_t in = in_channels;
  for (int64_t out : stage_channels) {
    weights_.push_back(kaiming(gen, out, in, 3));
    biases_.push_back(torch::zeros({out}));
    in = out;
  }
}

std::vector<torch::Tensor> RandomConvBackend::features(const torch::Tensor& images) const {
  namespace F = torch::nn::functional;
  std::vector<torch::Tensor> taps;
  torch::Tensor h = images.dim() == 3 ? images.unsqueeze(0) : images;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    if (i > 0) h = F::avg_pool2d(h, F::AvgPool2dFuncOptions(2));
    h = torch::relu(F::conv2d(h, weights_[i].to(h.dtype()),
                              F::Conv2dFuncOptions().bias(biases_[i].to(h.dtype())).padding(1)));
    taps.push_back(h);
  }
  return taps;
}

LinearStubBackend::LinearStubBackend(std::uint64_t seed, int64_t in_channels, int64_t taps) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  int64_t in = in_channels;
  for (int64_t t = 0; t < taps; ++t) {
    const int64_t out = 4 * (t + 1);
    weights_.push_back(torch::randn({out, in, 3, 3}, gen, torch::kFloat64) / 3.0);
    in = out;
  }
}

std::vector<torch::Tensor> LinearStubBackend::features(const torch::Tensor& images) const {
  namespace F = torch::nn::functional;
  std::vector<torch::Tensor> taps;
  torch::Tensor h = images.dim() == 3 ? images.unsqueeze(0) : images;
  for (const auto& w : weights_) {
    h = F::conv2d(h, w.to(h.dtype()), F::Conv2dFuncOptions().stride(2).padding(1));
    taps.push_back(h);
  }
  return taps;
}

struct TorchScriptBackend::Impl {
  mutable torch::jit::script::Module module;
};

TorchScriptBackend::TorchScriptBackend(const std::filesystem::path& path)
    : impl_(std::make_unique<Impl>()) {
  try {
    impl_->module = torch::jit::load(path.string());
    impl_->module.eval();
  } catch (const std::exception& e) {
    throw Error(ErrorCode::kBackendMissing,
                "cannot load perceptual backend " + path.string() + ": " + e.what());
  }
}

TorchScriptBackend::~TorchScriptBackend() = default;

std::vector<torch::Tensor> TorchScriptBackend::features(const torch::Tensor& images) const {
  torch::Tensor batch = images.dim() == 3 ? images.unsqueeze(0) : images;
  const auto out = impl_->module.forward({batch});
  std::vector<torch::Tensor> taps;
  if (out.isTensorList()) {
    for (const auto& t : out.toTensorVector()) taps.push_back(t);
  } else if (out.isTuple()) {
    for (const auto& e : out.toTuple()->elements()) taps.push_back(e.toTensor());
  } else if (out.isList()) {
    for (const auto& e : out.toList()) taps.push_back(e.get().toTensor());
  } else {
    taps.push_back(out.toTensor());
  }
  return taps;
}

PerceptualExtractor::PerceptualExtractor(std::shared_ptr<const FeatureBackend> backend,
                                         std::vector<int> layer_ids, std::vector<double> weights)
    : backend_(std::move(backend)), layer_ids_(std::move(layer_ids)), weights_(std::move(weights)) {
  if (!backend_) throw Error(ErrorCode::kBackendMissing, "perceptual extractor needs a backend");
  if (layer_ids_.empty()) {
    const auto probe = backend_->features(torch::zeros({1, 3, 32, 32}));
    for (std::size_t j = 0; j < probe.size(); ++j) layer_ids_.push_back(static_cast<int>(j));
  }
  if (weights_.empty()) weights_.assign(layer_ids_.size(), 1.0);
  if (weights_.size() != layer_ids_.size()) {
    throw Error(ErrorCode::kValidation, "one weight per tapped layer is required");
  }
}

std::vector<torch::Tensor> PerceptualExtractor::extract(const torch::Tensor& images) const {
  if (!backend_) throw Error(ErrorCode::kBackendMissing, "no perceptual backend configured");
  const auto all = backend_->features(images);
  std::vector<torch::Tensor> taps;
  taps.reserve(layer_ids_.size());
  for (int id : layer_ids_) {
    if (id < 0 || id >= static_cast<int>(all.size())) {
      throw Error(ErrorCode::kValidation, "tapped layer " + std::to_string(id) + " does not exist");
    }
    taps.push_back(all[id]);
  }
  return taps;
}

std::vector<int64_t> PerceptualExtractor::element_counts(torch::IntArrayRef input_shape) const {
  torch::NoGradGuard no_grad;
  std::vector<int64_t> counts;
  for (const auto& t : extract(torch::zeros(input_shape))) counts.push_back(t.numel());
  return counts;
}

PerceptualExtractor PerceptualExtractor::scaled(double factor) const {
  PerceptualExtractor copy = *this;
  for (auto& w : copy.weights_) w *= factor;
  return copy;
}

}  // namespace hi::nn
