#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>
#include <torch/torch.h>

#include "hi/core/maps.hpp"
#include "hi/nn/checkpoint.hpp"
#include "hi/nn/discriminator.hpp"
#include "hi/nn/loss_report.hpp"

namespace hi::frn {

/// Face-recognition network used for conditioning and for the identity loss:
/// N x 3 x F x F in [-1, 1] -> N x dim.
class FaceBackend {
 public:
  virtual ~FaceBackend() = default;
  virtual torch::Tensor embed(const torch::Tensor& faces) const = 0;
  virtual int64_t dim() const = 0;
  virtual std::string name() const = 0;
};

/// Frozen random conv stack, global average pool, linear head.
class RandomFaceBackend final : public FaceBackend {
 public:
  RandomFaceBackend(std::uint64_t seed, int64_t dim = 128);
  torch::Tensor embed(const torch::Tensor& faces) const override;
  int64_t dim() const override { return dim_; }
  std::string name() const override { return "random_face"; }

 private:
  int64_t dim_;
  std::vector<torch::Tensor> weights_;
  torch::Tensor head_;
};

/// Fixed linear map of a 4x average-pooled face; runs in the input dtype.
class LinearFaceBackend final : public FaceBackend {
 public:
  LinearFaceBackend(std::uint64_t seed, int64_t dim, int64_t face_size);
  torch::Tensor embed(const torch::Tensor& faces) const override;
  int64_t dim() const override { return dim_; }
  std::string name() const override { return "linear_face"; }

 private:
  int64_t dim_;
  int64_t face_size_;
  torch::Tensor projection_;
};

/// Pretrained recognizer exported as TorchScript returning its penultimate
/// activations. Throws Error(kBackendMissing) if it cannot be loaded.
class TorchScriptFaceBackend final : public FaceBackend {
 public:
  TorchScriptFaceBackend(const std::filesystem::path& path, int64_t dim);
  ~TorchScriptFaceBackend() override;
  torch::Tensor embed(const torch::Tensor& faces) const override;
  int64_t dim() const override { return dim_; }
  std::string name() const override { return "torchscript_face"; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int64_t dim_;
};

struct FaceCrop {
  torch::Tensor pixels;  // 3 x F x F in [-1, 1]
  core::Box box;         // source rectangle, inside the frame
  double margin = 0.3;
};

/// Tight box of the face support, grown to round(w * (1 + margin)) by
/// round(h * (1 + margin)) about its centre, clipped to the frame.
core::Box expand_face_box(const core::Box& tight, double margin, cv::Size frame);

/// `image` is 3 x H x W in [-1, 1]. Throws Error(kNoFace) for an empty face
/// channel.
FaceCrop crop_face(const torch::Tensor& image, const core::FaceChannel& face, double margin = 0.3,
                   int64_t size = 128);

/// Throws Error(kBackendMissing) for a null backend.
torch::Tensor embed_face(const FaceCrop& crop, const FaceBackend* backend);

/// mean |e_a - e_b|.
torch::Tensor identity_loss(const torch::Tensor& e_a, const torch::Tensor& e_b);

/// Resizes a C x F x F tensor back to the box size (bilinear).
torch::Tensor uncrop(const torch::Tensor& chw, const core::Box& box);

/// w = o * (1 - m) + f * m inside `box`, w = o elsewhere. f and m are already
/// at box size. Throws Error(kOutOfRange) when the box leaves the frame.
torch::Tensor blend_face(const torch::Tensor& o, const torch::Tensor& f, const torch::Tensor& m,
                         const core::Box& box);

struct FrnConfig {
  int64_t face_size = 128;
  double margin = 0.3;
  std::vector<int64_t> encoder_widths = {64, 128, 256, 512, 512};
  int64_t latent = 256;
  int64_t bottleneck_channels = 512;
  std::vector<int64_t> decoder_widths = {512, 256, 128, 64, 32};
  int64_t descriptor_dim = 128;
  nn::DiscriminatorBankOptions bank{.patch = {.in_channels = 3, .base_width = 64, .layers = 3}, .count = 2};
  nn::LossWeights weights;
  /// Degradation applied to real crops to form training inputs: the crop is
  /// shrunk by this factor and enlarged again.
  int64_t degrade_factor = 4;
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  std::uint64_t seed = 0;
  /// TorchScript recognizer; empty selects the random stub.
  std::string face_model;
  std::uint64_t face_seed = 11;

  static FrnConfig full();
  static FrnConfig desk();
  nlohmann::json to_json() const;
  static FrnConfig from_json(const nlohmann::json& doc);
};

std::shared_ptr<const FaceBackend> make_face_backend(const FrnConfig& config);

struct RefineResult {
  torch::Tensor f;  // 3 x F x F in [-1, 1]
  torch::Tensor m;  // 1 x F x F in [0, 1]
};

/// Encoder to a base latent, descriptor concatenated onto it, decoder with
/// face and mask heads.
class FrnNetImpl : public torch::nn::Module {
 public:
  explicit FrnNetImpl(const FrnConfig& config);
  std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& faces, const torch::Tensor& descriptors);
  int64_t conditioned_latent() const { return conditioned_latent_; }

 private:
  torch::nn::Sequential encoder_{nullptr};
  torch::nn::Linear to_latent_{nullptr};
  torch::nn::Linear to_bottleneck_{nullptr};
  torch::nn::Sequential decoder_{nullptr};
  torch::nn::Conv2d to_f_{nullptr};
  torch::nn::Conv2d to_m_{nullptr};
  int64_t bottleneck_channels_;
  int64_t conditioned_latent_;
};
TORCH_MODULE(FrnNet);

struct FrnSample {
  torch::Tensor face;  // 3 x F x F real face crop of the target, [-1, 1]
};

class FrnModel {
 public:
  FrnModel(const FrnConfig& config, std::shared_ptr<const FaceBackend> backend);
  explicit FrnModel(const FrnConfig& config) : FrnModel(config, make_face_backend(config)) {}

  const FrnConfig& config() const { return config_; }
  const FaceBackend& backend() const { return *backend_; }
  int64_t conditioned_latent() const { return net_->conditioned_latent(); }

  /// Throws Error(kShapeMismatch) on a descriptor of the wrong width.
  RefineResult refine(const FaceCrop& face_in, const torch::Tensor& descriptor);
  /// Refines the face of `o` (3 x H x W) towards the identity of `target_face`.
  torch::Tensor refine_image(const torch::Tensor& o, const core::FaceChannel& face,
                             const FaceCrop& target_face);

  /// Degraded copy of a crop, the training input.
  torch::Tensor degrade(const torch::Tensor& faces) const;
  nn::LossReport training_step(std::span<const FrnSample> batch);

  void save(const std::filesystem::path& path, const nlohmann::json& extra = {}) const;
  static FrnModel load(const std::filesystem::path& path);
  void write_state(nn::Checkpoint& ckpt) const;
  void read_state(const nn::Checkpoint& ckpt);

  FrnNet& net() { return net_; }

 private:
  FrnConfig config_;
  std::shared_ptr<const FaceBackend> backend_;
  FrnNet net_{nullptr};
  nn::DiscriminatorBank bank_{nullptr};
  std::unique_ptr<torch::optim::Adam> opt_g_;
  std::unique_ptr<torch::optim::Adam> opt_d_;
};

}  // namespace hi::frn
