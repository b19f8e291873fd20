#include "hi/core/appearance.hpp"

#include <opencv2/imgproc.hpp>
#include <torch/torch.h>

#include "hi/core/error.hpp"
#include "hi/core/palette.hpp"

namespace hi::core {
namespace {

cv::Mat group_mask(const cv::Mat& semantic, std::initializer_list<Group> groups) {
  cv::Mat mask = cv::Mat::zeros(semantic.size(), CV_8UC1);
  for (Group g : groups) {
    cv::Mat hit;
    cv::compare(semantic, code_of(g), hit, cv::CMP_EQ);
    mask.setTo(1, hit);
  }
  return mask;
}

}  // namespace

PartMasks part_masks(const SemanticMap& person) {
  const cv::Mat& s = person.pixels();
  return {group_mask(s, {Group::kHair}),
          group_mask(s, {Group::kFace}),
          group_mask(s, {Group::kUpperWear}),
          group_mask(s, {Group::kLowerWear}),
          group_mask(s, {Group::kTorsoUpperLimbs, Group::kLowerLimbs}),
          group_mask(s, {Group::kShoes})};
}

cv::Mat crop_part(const cv::Mat& rgb, const cv::Mat& mask) {
  std::vector<cv::Point> support;
  cv::findNonZero(mask, support);
  if (support.empty()) throw Error(ErrorCode::kEmptyPerson, "part mask is empty");
  const cv::Rect r = cv::boundingRect(support);
  cv::Mat crop = cv::Mat::zeros(r.size(), rgb.type());
  rgb(r).copyTo(crop, mask(r));
  return crop;
}

AppearanceTensor build_appearance_tensor(const cv::Mat& rgb, const PartMasks& masks) {
  if (rgb.empty() || rgb.type() != CV_8UC3) {
    throw Error(ErrorCode::kValidation, "appearance source must be an 8-bit RGB image");
  }
  AppearanceTensor out;
  out.parts = torch::zeros({kPartCount, 3, kPartSize, kPartSize});
  const cv::Size part_size(kPartSize, kPartSize);
  for (int i = 0; i < kPartCount; ++i) {
    const cv::Mat& mask = masks[i];
    if (mask.size() != rgb.size()) throw Error(ErrorCode::kShapeMismatch, "part mask size differs from image");
    std::vector<cv::Point> support;
    cv::findNonZero(mask, support);
    if (support.empty()) continue;
    out.present[i] = true;
    const cv::Rect r = cv::boundingRect(support);

    // Mask in the normalized domain so non-part pixels are 0 before the
    // bilinear resize and nothing leaks in from neighbouring parts.
    cv::Mat crop;
    rgb(r).convertTo(crop, CV_32FC3, 1.0 / 127.5, -1.0);
    cv::Mat part_mask = mask(r) != 0;
    cv::Mat masked = cv::Mat::zeros(crop.size(), CV_32FC3);
    crop.copyTo(masked, part_mask);

    cv::Mat resized;
    cv::Mat resized_mask;
    cv::resize(masked, resized, part_size, 0, 0, cv::INTER_LINEAR);
    cv::resize(part_mask, resized_mask, part_size, 0, 0, cv::INTER_NEAREST_EXACT);
    cv::Mat final_part = cv::Mat::zeros(part_size, CV_32FC3);
    resized.copyTo(final_part, resized_mask);

    auto hwc = torch::from_blob(final_part.data, {kPartSize, kPartSize, 3}, torch::kFloat32);
    out.parts[i].copy_(hwc.permute({2, 0, 1}));
  }
  if (std::none_of(out.present.begin(), out.present.end(), [](bool p) { return p; })) {
    throw Error(ErrorCode::kDegenerateTarget, "target person has none of the six parts");
  }
  return out;
}

AppearanceTensor build_appearance_tensor(const cv::Mat& rgb, const SemanticMap& person) {
  return build_appearance_tensor(rgb, part_masks(person));
}

}  // namespace hi::core
