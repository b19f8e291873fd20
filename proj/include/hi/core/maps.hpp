#pragma once

#include <optional>
#include <span>
#include <vector>

#include <opencv2/core.hpp>

namespace hi::core {

/// Inclusive pixel rectangle, origin top-left.
struct Box {
  int x_min = 0;
  int y_min = 0;
  int x_max = 0;
  int y_max = 0;

  int width() const { return x_max - x_min + 1; }
  int height() const { return y_max - y_min + 1; }
  bool inside(cv::Size frame) const {
    return x_min >= 0 && y_min >= 0 && x_max < frame.width && y_max < frame.height &&
           x_min <= x_max && y_min <= y_max;
  }
  cv::Rect rect() const { return {x_min, y_min, width(), height()}; }
  bool operator==(const Box&) const = default;
};

using KeypointSet = std::vector<cv::Point2d>;

/// Single-channel 8-bit image whose values are palette codes only.
class SemanticMap {
 public:
  SemanticMap() = default;
  /// Deep-copies and validates; throws Error(kValidation) on foreign values.
  explicit SemanticMap(const cv::Mat& pixels);
  static SemanticMap zeros(cv::Size size);

  const cv::Mat& pixels() const { return pixels_; }
  cv::Size size() const { return pixels_.size(); }
  bool empty() const;

 private:
  cv::Mat pixels_;
};

/// Single-channel 8-bit image with values in {0, 255}.
class BinaryChannel {
 public:
  BinaryChannel() = default;
  explicit BinaryChannel(const cv::Mat& pixels);
  static BinaryChannel zeros(cv::Size size);

  const cv::Mat& pixels() const { return pixels_; }
  cv::Size size() const { return pixels_.size(); }
  bool empty() const;

 private:
  cv::Mat pixels_;
};

using FaceChannel = BinaryChannel;

struct BBoxChannel {
  BinaryChannel channel;
  Box box;
};

/// Multi-person scene encoding. `persons[i]` is person i painted with palette
/// codes (0 elsewhere); `keypoints[i]` is empty when no face was detected.
struct SceneParse {
  SemanticMap semantic;
  FaceChannel face;
  std::optional<BBoxChannel> bbox;
  std::vector<SemanticMap> persons;
  std::vector<KeypointSet> keypoints;

  cv::Size size() const { return semantic.size(); }
};

struct PersonPose {
  SemanticMap semantic;
  FaceChannel face;
};

/// Paints persons in order (later persons overwrite earlier ones where they
/// overlap) and rasterizes every detected face into the shared face channel.
SceneParse compose_scene(std::span<const SemanticMap> persons,
                         std::span<const KeypointSet> keypoints);

/// Pose of person `index` of a scene: its map plus its own face hull.
PersonPose person_pose(const SceneParse& scene, int index);

/// True when the face support lies within the face-labelled region of the
/// semantic channel grown by `dilation_px` pixels.
bool face_within_region(const PersonPose& pose, int dilation_px);

}  // namespace hi::core
