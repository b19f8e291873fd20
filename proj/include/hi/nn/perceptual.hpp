#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace hi::nn {

/// Image-in / feature-list-out network used for perceptual terms.
class FeatureBackend {
 public:
  virtual ~FeatureBackend() = default;
  virtual std::vector<torch::Tensor> features(const torch::Tensor& images) const = 0;
  virtual std::string name() const = 0;
};

/// Frozen random-weight conv stack with VGG-like taps (conv-relu pairs, a
/// tap at the end of each stage, 2x average pooling between stages).
class RandomConvBackend final : public FeatureBackend {
 public:
  explicit RandomConvBackend(std::uint64_t seed, std::vector<int64_t> stage_channels = {8, 16, 32},
                             int64_t in_channels = 3);
  std::vector<torch::Tensor> features(const torch::Tensor& images) const override;
  std::string name() const override { return "random_conv"; }

 private:
  std::vector<torch::Tensor> weights_;
  std::vector<torch::Tensor> biases_;
};

/// Fixed linear taps (strided convolutions without nonlinearity). Works in the
/// input's dtype, so it is usable in double-precision gradient checks.
class LinearStubBackend final : public FeatureBackend {
 public:
  explicit LinearStubBackend(std::uint64_t seed, int64_t in_channels = 3, int64_t taps = 2);
  std::vector<torch::Tensor> features(const torch::Tensor& images) const override;
  std::string name() const override { return "linear_stub"; }

 private:
  std::vector<torch::Tensor> weights_;
};

/// Pretrained classifier exported as TorchScript; forward must return a list
/// or tuple of feature maps. Throws Error(kBackendMissing) if the file cannot
/// be loaded.
class TorchScriptBackend final : public FeatureBackend {
 public:
  explicit TorchScriptBackend(const std::filesystem::path& path);
  ~TorchScriptBackend() override;
  std::vector<torch::Tensor> features(const torch::Tensor& images) const override;
  std::string name() const override { return "torchscript"; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Selects tapped layers of a backend and their weights. The effective
/// per-layer factor is weight_j / N'_j, realised through mean reduction.
class PerceptualExtractor {
 public:
  PerceptualExtractor() = default;
  PerceptualExtractor(std::shared_ptr<const FeatureBackend> backend, std::vector<int> layer_ids = {},
                      std::vector<double> weights = {});

  bool has_backend() const { return backend_ != nullptr; }
  /// Tapped activations in layer_ids order.
  std::vector<torch::Tensor> extract(const torch::Tensor& images) const;
  const std::vector<int>& layer_ids() const { return layer_ids_; }
  const std::vector<double>& weights() const { return weights_; }
  /// Element counts N'_j per tapped layer for a probe input shape.
  std::vector<int64_t> element_counts(torch::IntArrayRef input_shape) const;
  PerceptualExtractor scaled(double factor) const;

 private:
  std::shared_ptr<const FeatureBackend> backend_;
  std::vector<int> layer_ids_;
  std::vector<double> weights_;
};

}  // namespace hi::nn
