#pragma once

#include <array>

#include <opencv2/core.hpp>
#include <torch/types.h>

#include "hi/core/maps.hpp"

namespace hi::core {

enum class Part : int { kHair = 0, kFace, kUpperWear, kLowerWear, kSkin, kShoes };

inline constexpr int kPartCount = 6;
inline constexpr int kPartSize = 128;

using PartMasks = std::array<cv::Mat, kPartCount>;

/// Segmented appearance of one person: 6x3x128x128 in [-1, 1].
struct AppearanceTensor {
  torch::Tensor parts;
  std::array<bool, kPartCount> present{};
};

/// Per-part binary (0/1) masks of a person's semantic map. Skin gathers the
/// torso/upper-limb and lower-limb groups.
PartMasks part_masks(const SemanticMap& person);

/// Minimal-bbox crop of `rgb` (CV_8UC3) with non-part pixels set to 0. Throws
/// Error(kEmptyPerson) for an empty mask.
cv::Mat crop_part(const cv::Mat& rgb, const cv::Mat& mask);

/// Crops, masks, and resizes every present part to 128x128 (bilinear for
/// colour, nearest for the mask). Pixels outside the resized mask are exactly
/// 0. Throws Error(kDegenerateTarget) when no part is present.
AppearanceTensor build_appearance_tensor(const cv::Mat& rgb, const PartMasks& masks);
AppearanceTensor build_appearance_tensor(const cv::Mat& rgb, const SemanticMap& person);

}  // namespace hi::core
