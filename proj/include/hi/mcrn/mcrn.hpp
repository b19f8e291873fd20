#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "hi/core/appearance.hpp"
#include "hi/core/maps.hpp"
#include "hi/nn/blocks.hpp"
#include "hi/nn/checkpoint.hpp"
#include "hi/nn/discriminator.hpp"
#include "hi/nn/loss_report.hpp"
#include "hi/nn/perceptual.hpp"

namespace hi::mcrn {

/// Channels of the decoder conditioning map: one-hot of the 8 groups plus
/// the face channel.
inline constexpr int64_t kLabelChannels = 9;
/// The six 128x128 part crops stacked along channels.
inline constexpr int64_t kAppearanceChannels = 18;

struct McrnConfig {
  int64_t resolution = 512;
  int64_t encoder_stages = 5;
  std::vector<int64_t> encoder_widths = {64, 128, 256, 512, 512};
  int64_t latent = 256;
  int64_t bottleneck_channels = 1024;
  /// Output width of each upsampling stage; its length is the stage count.
  std::vector<int64_t> decoder_widths = {1024, 512, 256, 128, 64, 32, 16};
  int64_t spade_hidden = 128;
  nn::DiscriminatorBankOptions bank{.patch = {.in_channels = 30, .base_width = 64, .layers = 3},
                                    .count = 2};
  nn::LossWeights weights;
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  std::uint64_t seed = 0;
  /// TorchScript classifier for the perceptual term; empty selects the
  /// frozen random stub seeded by perceptual_seed.
  std::string perceptual_model;
  std::uint64_t perceptual_seed = 7;

  /// 512 pixels, seven upsampling stages.
  static McrnConfig full();
  /// 128 pixels, five upsampling stages, narrow widths.
  static McrnConfig desk();
  int64_t decoder_stages() const { return static_cast<int64_t>(decoder_widths.size()); }
  nlohmann::json to_json() const;
  static McrnConfig from_json(const nlohmann::json& doc);
};

/// Five stride-2 conv + instance-norm stages (128 -> 4), FC to the latent,
/// leaky rectification, FC to the bottleneck.
class AppearanceEncoderImpl : public torch::nn::Module {
 public:
  explicit AppearanceEncoderImpl(const McrnConfig& config);
  /// N x 18 x 128 x 128 -> N x latent.
  torch::Tensor encode(const torch::Tensor& t);
  /// N x latent -> N x C x 4 x 4.
  torch::Tensor project(const torch::Tensor& latent);
  torch::Tensor forward(const torch::Tensor& t) { return project(encode(t)); }

 private:
  torch::nn::Sequential convs_{nullptr};
  torch::nn::Linear to_latent_{nullptr};
  torch::nn::Linear to_bottleneck_{nullptr};
  int64_t bottleneck_channels_;
};
TORCH_MODULE(AppearanceEncoder);

struct DecoderOutput {
  torch::Tensor z;  // N x 3 x S x S, tanh
  torch::Tensor m;  // N x 1 x S x S, logistic
};

class PoseDecoderImpl : public torch::nn::Module {
 public:
  explicit PoseDecoderImpl(const McrnConfig& config);
  DecoderOutput forward(const torch::Tensor& bottleneck, const torch::Tensor& label);
  int64_t stage_count() const { return static_cast<int64_t>(stages_.size()); }

 private:
  nn::SpadeResBlock head_{nullptr};
  std::vector<nn::SpadeResBlock> stages_;
  torch::nn::Conv2d to_z_{nullptr};
  torch::nn::Conv2d to_m_{nullptr};
};
TORCH_MODULE(PoseDecoder);

struct RenderResult {
  torch::Tensor z;  // 3 x S x S in [-1, 1]
  torch::Tensor m;  // 1 x S x S in [0, 1]
};

/// 9 x H x W conditioning map of a pose.
torch::Tensor pose_label(const core::PersonPose& pose);
/// 18 x 128 x 128.
torch::Tensor stack_appearance(const core::AppearanceTensor& t);

/// o = x * (1 - m) + z * m. x, z: C x H x W (or batched); m broadcast over
/// channels. Throws Error(kValidation) if m leaves [0, 1] and
/// Error(kShapeMismatch) on shape disagreement.
torch::Tensor composite(const torch::Tensor& x, const torch::Tensor& z, const torch::Tensor& m);

/// Mean |a - b| over the pixels where `mask` is 1, averaged over channels.
double masked_l1(const torch::Tensor& a, const torch::Tensor& b, const torch::Tensor& mask);

struct McrnSample {
  torch::Tensor x;  // 3 x S x S scene image, [-1, 1]
  core::AppearanceTensor t;
  core::PersonPose p;  // at S x S
};

class McrnModel {
 public:
  explicit McrnModel(const McrnConfig& config);

  const McrnConfig& config() const { return config_; }
  int64_t latent_size() const { return config_.latent; }
  std::vector<int64_t> bottleneck_shape() const { return {config_.bottleneck_channels, 4, 4}; }
  int64_t decoder_stages() const { return decoder_->stage_count(); }

  /// Throws Error(kShapeMismatch) when p is not at the model resolution.
  RenderResult render(const core::AppearanceTensor& t, const core::PersonPose& p);
  DecoderOutput forward(const torch::Tensor& t_stack, const torch::Tensor& label);

  nn::LossReport training_step(std::span<const McrnSample> batch);

  void save(const std::filesystem::path& path, const nlohmann::json& extra = {}) const;
  static McrnModel load(const std::filesystem::path& path);
  void write_state(nn::Checkpoint& ckpt) const;
  void read_state(const nn::Checkpoint& ckpt);

  AppearanceEncoder& encoder() { return encoder_; }
  PoseDecoder& decoder() { return decoder_; }
  nn::DiscriminatorBank& bank() { return bank_; }

 private:
  void check_pose(const core::PersonPose& p) const;

  McrnConfig config_;
  AppearanceEncoder encoder_{nullptr};
  PoseDecoder decoder_{nullptr};
  nn::DiscriminatorBank bank_{nullptr};
  nn::PerceptualExtractor perceptual_;
  std::unique_ptr<torch::optim::Adam> opt_g_;
  std::unique_ptr<torch::optim::Adam> opt_d_;
};

/// Appearance tensor taking `parts_to_swap` from the donor and every other
/// part from the scene person. Throws Error(kValidation) when the donor lacks
/// a requested part.
core::AppearanceTensor replace_component(const cv::Mat& person_rgb, const core::SemanticMap& person_parse,
                                         const cv::Mat& donor_rgb, const core::SemanticMap& donor_parse,
                                         std::span<const core::Part> parts_to_swap);

}  // namespace hi::mcrn
