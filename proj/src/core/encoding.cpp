#include "hi/core/encoding.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/imgproc.hpp>
#include <torch/torch.h>

#include "hi/core/error.hpp"

namespace hi::core {
namespace {

// Generator outputs within this distance (8-bit units) of a midpoint between
// two codes count as ties.
constexpr double kTieTolerance = 1e-4;

std::uint8_t snap_to_code(double raw) {
  const double value = (raw + 1.0) * 127.5;
  int k = 0;
  while (k + 1 < kGroupCount && value > k * kCodeStep + kCodeStep / 2.0 + kTieTolerance) ++k;
  return static_cast<std::uint8_t>(k * kCodeStep);
}

torch::Tensor u8_to_tensor(const cv::Mat& m) {
  cv::Mat contiguous = m.isContinuous() ? m : m.clone();
  return torch::from_blob(contiguous.data, {contiguous.rows, contiguous.cols}, torch::kUInt8)
      .clone();
}

}  // namespace

SemanticMap reduce_labels(const cv::Mat& raw_parse, const LabelPalette& palette) {
  if (raw_parse.empty() || raw_parse.channels() != 1) {
    throw Error(ErrorCode::kValidation, "raw parse must be a single-channel label image");
  }
  cv::Mat raw;
  raw_parse.convertTo(raw, CV_32S);
  cv::Mat out(raw.size(), CV_8UC1);
  for (int y = 0; y < raw.rows; ++y) {
    const auto* src = raw.ptr<int>(y);
    auto* dst = out.ptr<std::uint8_t>(y);
    for (int x = 0; x < raw.cols; ++x) dst[x] = palette.code_for(src[x]);
  }
  return SemanticMap(out);
}

FaceHullResult face_hull_channel(std::span<const KeypointSet> keypoint_sets, cv::Size size) {
  FaceHullResult result;
  cv::Mat canvas = cv::Mat::zeros(size, CV_8UC1);
  for (const auto& set : keypoint_sets) {
    if (set.size() < 3) {
      ++result.skipped_sets;
      continue;
    }
    std::vector<cv::Point2f> clipped;
    clipped.reserve(set.size());
    for (const auto& p : set) {
      clipped.emplace_back(static_cast<float>(std::clamp(p.x, 0.0, size.width - 1.0)),
                           static_cast<float>(std::clamp(p.y, 0.0, size.height - 1.0)));
    }
    std::vector<cv::Point2f> hull;
    cv::convexHull(clipped, hull);
    const double area = cv::contourArea(hull, true);
    if (hull.size() < 3 || std::abs(area) < 1e-9) {
      ++result.skipped_sets;
      continue;
    }
    // Orientation-independent inclusive test: a pixel centre belongs to the
    // hull when it is on the inner side of (or on) every edge.
    const double sign = area > 0 ? 1.0 : -1.0;
    const cv::Rect bounds = cv::boundingRect(hull) & cv::Rect(0, 0, size.width, size.height);
    for (int y = bounds.y; y < bounds.y + bounds.height; ++y) {
      auto* row = canvas.ptr<std::uint8_t>(y);
      for (int x = bounds.x; x < bounds.x + bounds.width; ++x) {
        bool inside = true;
        for (std::size_t i = 0; i < hull.size() && inside; ++i) {
          const cv::Point2d a = hull[i];
          const cv::Point2d b = hull[(i + 1) % hull.size()];
          const double cross = (b.x - a.x) * (y - a.y) - (b.y - a.y) * (x - a.x);
          inside = sign * cross >= -1e-9;
        }
        if (inside) row[x] = 255;
      }
    }
  }
  result.channel = BinaryChannel(canvas);
  return result;
}

BBoxChannel bbox_from_labels(const cv::Mat& person_mask) {
  if (person_mask.empty() || person_mask.channels() != 1) {
    throw Error(ErrorCode::kValidation, "person mask must be single-channel");
  }
  std::vector<cv::Point> nonzero;
  cv::findNonZero(person_mask, nonzero);
  if (nonzero.empty()) throw Error(ErrorCode::kEmptyPerson, "person mask has no labelled pixels");
  const cv::Rect r = cv::boundingRect(nonzero);
  return render_box({r.x, r.y, r.x + r.width - 1, r.y + r.height - 1}, person_mask.size());
}

BBoxChannel render_box(const Box& box, cv::Size size) {
  if (!box.inside(size)) throw Error(ErrorCode::kOutOfRange, "box lies outside the frame");
  cv::Mat canvas = cv::Mat::zeros(size, CV_8UC1);
  canvas(box.rect()).setTo(255);
  return {BinaryChannel(canvas), box};
}

cv::Mat binarize_pose(const PersonPose& pose) {
  cv::Mat out;
  cv::compare(pose.semantic.pixels(), 0, out, cv::CMP_NE);
  return out / 255;
}

torch::Tensor encode_semantic(const SemanticMap& map) {
  return u8_to_tensor(map.pixels()).to(torch::kFloat32).div(127.5).sub(1.0);
}

torch::Tensor encode_binary(const BinaryChannel& channel) {
  return u8_to_tensor(channel.pixels()).to(torch::kFloat32).div(127.5).sub(1.0);
}

torch::Tensor encode_pose(const PersonPose& pose) {
  return torch::stack({encode_semantic(pose.semantic), encode_binary(pose.face)});
}

PersonPose discretize_pose(const torch::Tensor& raw) {
  if (raw.dim() != 3 || raw.size(0) != 2) {
    throw Error(ErrorCode::kShapeMismatch, "pose tensor must be 2xHxW");
  }
  const auto values = raw.detach().to(torch::kCPU, torch::kFloat64).contiguous();
  const int h = static_cast<int>(values.size(1));
  const int w = static_cast<int>(values.size(2));
  const auto acc = values.accessor<double, 3>();
  cv::Mat semantic(h, w, CV_8UC1);
  cv::Mat face(h, w, CV_8UC1);
  for (int y = 0; y < h; ++y) {
    auto* s = semantic.ptr<std::uint8_t>(y);
    auto* f = face.ptr<std::uint8_t>(y);
    for (int x = 0; x < w; ++x) {
      s[x] = snap_to_code(acc[0][y][x]);
      f[x] = acc[1][y][x] > 0.0 ? 255 : 0;
    }
  }
  return {SemanticMap(semantic), BinaryChannel(face)};
}

SemanticMap resize_nearest(const SemanticMap& map, cv::Size size) {
  if (map.size() == size) return map;
  cv::Mat out;
  cv::resize(map.pixels(), out, size, 0, 0, cv::INTER_NEAREST_EXACT);
  return SemanticMap(out);
}

BinaryChannel resize_nearest(const BinaryChannel& channel, cv::Size size) {
  if (channel.size() == size) return channel;
  cv::Mat out;
  cv::resize(channel.pixels(), out, size, 0, 0, cv::INTER_NEAREST_EXACT);
  return BinaryChannel(out);
}

PersonPose resize_nearest(const PersonPose& pose, cv::Size size) {
  return {resize_nearest(pose.semantic, size), resize_nearest(pose.face, size)};
}

}  // namespace hi::core
