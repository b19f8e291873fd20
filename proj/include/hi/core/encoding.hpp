#pragma once

#include <span>

#include <opencv2/core.hpp>
#include <torch/types.h>

#include "hi/core/maps.hpp"
#include "hi/core/palette.hpp"

namespace hi::core {

/// Folds a raw parser label image (CV_8U or CV_32S) onto palette codes.
SemanticMap reduce_labels(const cv::Mat& raw_parse, const LabelPalette& palette);

struct FaceHullResult {
  FaceChannel channel;
  int skipped_sets = 0;  // sets with fewer than 3 points or zero area
};

/// Fills the convex hull of every keypoint set, boundary inclusive, measured
/// at pixel centres. Points are clipped to the frame first.
FaceHullResult face_hull_channel(std::span<const KeypointSet> keypoint_sets, cv::Size size);

/// Tight bounding box of the nonzero pixels; throws Error(kEmptyPerson).
BBoxChannel bbox_from_labels(const cv::Mat& person_mask);

/// Rasterizes a box into a {0,255} channel; throws Error(kOutOfRange) when
/// the box is not inside the frame.
BBoxChannel render_box(const Box& box, cv::Size size);

/// p^b: 1 where the semantic channel is nonzero.
cv::Mat binarize_pose(const PersonPose& pose);

// Real-valued encodings live in [-1, 1]; a palette code c maps to c/127.5-1
// and binary channels map 0 -> -1, 255 -> 1.
torch::Tensor encode_semantic(const SemanticMap& map);
torch::Tensor encode_binary(const BinaryChannel& channel);
/// 2xHxW tensor (semantic, face).
torch::Tensor encode_pose(const PersonPose& pose);

/// Snaps generator output back onto the data model: channel 0 to the nearest
/// palette code (exact midpoints go to the lower code), channel 1 to 255
/// where the value is above 0.
PersonPose discretize_pose(const torch::Tensor& raw);

/// Nearest-neighbour resize that keeps codes/binary values intact.
SemanticMap resize_nearest(const SemanticMap& map, cv::Size size);
BinaryChannel resize_nearest(const BinaryChannel& channel, cv::Size size);
PersonPose resize_nearest(const PersonPose& pose, cv::Size size);

}  // namespace hi::core
