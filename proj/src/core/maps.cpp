#include "hi/core/maps.hpp"

#include <opencv2/imgproc.hpp>

#include "hi/core/encoding.hpp"
#include "hi/core/error.hpp"
#include "hi/core/palette.hpp"

namespace hi::core {
namespace {

void require_u8c1(const cv::Mat& m, const char* what) {
  if (m.empty() || m.type() != CV_8UC1) {
    throw Error(ErrorCode::kValidation, std::string(what) + " must be a non-empty 8-bit single-channel image");
  }
}

}  // namespace

SemanticMap::SemanticMap(const cv::Mat& pixels) {
  require_u8c1(pixels, "semantic map");
  for (int y = 0; y < pixels.rows; ++y) {
    const auto* row = pixels.ptr<std::uint8_t>(y);
    for (int x = 0; x < pixels.cols; ++x) {
      if (!is_palette_code(row[x])) {
        throw Error(ErrorCode::kValidation, "semantic map value " + std::to_string(row[x]) +
                                                " is not a palette code");
      }
    }
  }
  pixels_ = pixels.clone();
}

SemanticMap SemanticMap::zeros(cv::Size size) {
  return SemanticMap(cv::Mat::zeros(size, CV_8UC1));
}

bool SemanticMap::empty() const { return pixels_.empty() || cv::countNonZero(pixels_) == 0; }

BinaryChannel::BinaryChannel(const cv::Mat& pixels) {
  require_u8c1(pixels, "binary channel");
  for (int y = 0; y < pixels.rows; ++y) {
    const auto* row = pixels.ptr<std::uint8_t>(y);
    for (int x = 0; x < pixels.cols; ++x) {
      if (row[x] != 0 && row[x] != 255) {
        throw Error(ErrorCode::kValidation,
                    "binary channel value " + std::to_string(row[x]) + " is not 0 or 255");
      }
    }
  }
  pixels_ = pixels.clone();
}

BinaryChannel BinaryChannel::zeros(cv::Size size) {
  return BinaryChannel(cv::Mat::zeros(size, CV_8UC1));
}

bool BinaryChannel::empty() const { return pixels_.empty() || cv::countNonZero(pixels_) == 0; }

SceneParse compose_scene(std::span<const SemanticMap> persons,
                         std::span<const KeypointSet> keypoints) {
  if (persons.empty()) throw Error(ErrorCode::kValidation, "scene has no persons");
  if (keypoints.size() != persons.size()) {
    throw Error(ErrorCode::kShapeMismatch, "one keypoint set per person is required");
  }
  const cv::Size size = persons.front().size();
  cv::Mat canvas = cv::Mat::zeros(size, CV_8UC1);
  for (const auto& person : persons) {
    if (person.size() != size) throw Error(ErrorCode::kShapeMismatch, "person maps differ in size");
    person.pixels().copyTo(canvas, person.pixels());
  }
  SceneParse scene;
  scene.semantic = SemanticMap(canvas);
  scene.face = face_hull_channel(keypoints, size).channel;
  scene.persons.assign(persons.begin(), persons.end());
  scene.keypoints.assign(keypoints.begin(), keypoints.end());
  return scene;
}

PersonPose person_pose(const SceneParse& scene, int index) {
  if (index < 0 || index >= static_cast<int>(scene.persons.size())) {
    throw Error(ErrorCode::kOutOfRange, "person index " + std::to_string(index) + " out of range");
  }
  const KeypointSet& kp = scene.keypoints[index];
  return {scene.persons[index],
          face_hull_channel(std::span<const KeypointSet>(&kp, 1), scene.size()).channel};
}

bool face_within_region(const PersonPose& pose, int dilation_px) {
  cv::Mat region;
  cv::compare(pose.semantic.pixels(), code_of(Group::kFace), region, cv::CMP_EQ);
  if (dilation_px > 0) {
    const auto kernel = cv::getStructuringElement(
        cv::MORPH_RECT, cv::Size(2 * dilation_px + 1, 2 * dilation_px + 1));
    cv::dilate(region, region, kernel);
  }
  cv::Mat outside;
  cv::bitwise_and(pose.face.pixels(), ~region, outside);
  return cv::countNonZero(outside) == 0;
}

}  // namespace hi::core
