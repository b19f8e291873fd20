#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "hi/core/maps.hpp"
#include "hi/nn/blocks.hpp"
#include "hi/nn/checkpoint.hpp"
#include "hi/nn/discriminator.hpp"
#include "hi/nn/loss_report.hpp"

namespace hi::egn {

/// kWithBBox: (s, f, b). kWithoutBBox: (s, f). kPoseTransfer: (source map,
/// source skeleton, target skeleton).
enum class Variant { kWithBBox, kWithoutBBox, kPoseTransfer };

int input_channels(Variant variant);
std::string to_string(Variant variant);
Variant variant_from_string(const std::string& name);

struct EgnConfig {
  Variant variant = Variant::kWithBBox;
  int resolution = 368;
  nn::GlobalGeneratorOptions generator{.in_channels = 3, .out_channels = 2, .base_width = 64,
                                       .downsamples = 4, .residual_blocks = 9, .max_width = 1024};
  nn::DiscriminatorBankOptions bank{.patch = {.in_channels = 5, .base_width = 64, .layers = 3},
                                    .count = 2};
  nn::LossWeights weights;
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  std::uint64_t seed = 0;

  static EgnConfig full(Variant variant);
  /// 96x96, narrow widths; runs on a CPU.
  static EgnConfig desk(Variant variant);
  nlohmann::json to_json() const;
  static EgnConfig from_json(const nlohmann::json& doc);
};

struct EgnInput {
  torch::Tensor tensor;  // CxRxR in [-1, 1]
  Variant variant = Variant::kWithBBox;
  std::string scene_id;
  std::optional<int> heldout;
};

struct TrainTight {};
struct InferenceBox {
  core::Box box;  // in scene pixel coordinates
};
struct NoBox {};
using BBoxMode = std::variant<TrainTight, InferenceBox, NoBox>;

/// Scene channels with the held-out person (if any) removed. TrainTight
/// boxes the held-out person; NoBox yields the two-channel variant. All
/// channels are resized to `resolution` with nearest-neighbour sampling.
/// Throws Error(kSampleRejected) when the held-out person has no facial
/// keypoints or an empty mask.
EgnInput build_egn_input(const core::SceneParse& scene, std::optional<int> heldout,
                         const BBoxMode& mode, int resolution, std::string scene_id = {});

/// Inference input from already composed scene channels. A box selects the
/// three-channel variant.
EgnInput build_egn_input(const core::SemanticMap& semantic, const core::FaceChannel& face,
                         const std::optional<core::Box>& box, int resolution);

struct EgnSample {
  EgnInput input;
  core::PersonPose target;  // at the input resolution
};

/// Held-out training pair for person `heldout`.
EgnSample build_egn_sample(const core::SceneParse& scene, int heldout, bool with_bbox,
                           int resolution, std::string scene_id = {});

/// Stick figure: joints plus limb index pairs.
struct StickSkeleton {
  std::vector<cv::Point2d> joints;
  std::vector<std::pair<int, int>> limbs;
};
/// Dense body-part index raster (0..24).
struct DenseSkeleton {
  cv::Mat indices;
};
using Skeleton = std::variant<StickSkeleton, DenseSkeleton>;

/// Stick figures are drawn as 1-pixel 255-valued lines on 0; dense rasters
/// are scaled so index 24 maps to 240.
cv::Mat rasterize_skeleton(const Skeleton& skeleton, cv::Size size);

/// [source map, source skeleton, target skeleton]. Throws
/// Error(kValidation) when the two skeletons are of different kinds.
EgnInput build_pose_transfer_input(const core::SemanticMap& source, const Skeleton& source_skeleton,
                                   const Skeleton& target_skeleton, int resolution);

/// Generator plus its discriminator bank and optimizers. The perceptual
/// feature-matching term is disabled for this network.
class EgnModel {
 public:
  explicit EgnModel(const EgnConfig& config);

  const EgnConfig& config() const { return config_; }
  Variant variant() const { return config_.variant; }

  /// Raw 2-channel output in [-1, 1] for a batch NxCxRxR.
  torch::Tensor forward_raw(const torch::Tensor& batch);
  /// Throws Error(kVariantMismatch) when the input does not match.
  core::PersonPose generate(const EgnInput& input);

  nn::LossReport training_step(std::span<const EgnSample> batch);

  void save(const std::filesystem::path& path, const nlohmann::json& extra = {}) const;
  static EgnModel load(const std::filesystem::path& path);
  void write_state(nn::Checkpoint& ckpt) const;
  void read_state(const nn::Checkpoint& ckpt);

  nn::GlobalGenerator& generator() { return generator_; }
  nn::DiscriminatorBank& bank() { return bank_; }

 private:
  void check_input(const torch::Tensor& tensor, Variant variant) const;

  EgnConfig config_;
  nn::GlobalGenerator generator_{nullptr};
  nn::DiscriminatorBank bank_{nullptr};
  std::unique_ptr<torch::optim::Adam> opt_g_;
  std::unique_ptr<torch::optim::Adam> opt_d_;
};

}  // namespace hi::egn
