#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>
#include <torch/types.h>

#include "hi/core/maps.hpp"

namespace hi::core {

namespace fs = std::filesystem;

/// 8-bit PNG, returned exactly as stored (first channel for multi-channel).
cv::Mat read_gray_png(const fs::path& path);
SemanticMap read_semantic_png(const fs::path& path);
BinaryChannel read_binary_png(const fs::path& path);
/// Any format OpenCV decodes; returned as RGB (CV_8UC3).
cv::Mat read_rgb(const fs::path& path);

void write_png(const fs::path& path, const cv::Mat& image);
void write_png(const fs::path& path, const SemanticMap& map);
void write_png(const fs::path& path, const BinaryChannel& channel);
/// Writes an RGB image (CV_8UC3) as PNG.
void write_rgb_png(const fs::path& path, const cv::Mat& rgb);

std::vector<std::uint8_t> encode_png(const cv::Mat& image);
/// `channels` 1 or 3; 3-channel data is converted BGR<->RGB at the boundary.
cv::Mat decode_png(const std::vector<std::uint8_t>& bytes, int channels);
std::vector<std::uint8_t> encode_rgb_png(const cv::Mat& rgb);

/// `{persons: [{face_keypoints: [[x,y],...]}]}`, pixel coordinates.
std::vector<KeypointSet> keypoints_from_json(const nlohmann::json& doc);
nlohmann::json keypoints_to_json(const std::vector<KeypointSet>& sets);
std::vector<KeypointSet> read_keypoints(const fs::path& path);
void write_keypoints(const fs::path& path, const std::vector<KeypointSet>& sets);

/// RGB CV_8UC3 -> 3xHxW float in [-1, 1].
torch::Tensor image_to_tensor(const cv::Mat& rgb);
/// 3xHxW in [-1, 1] -> RGB CV_8UC3 (rounded, clamped).
cv::Mat tensor_to_image(const torch::Tensor& chw);
/// 1xHxW (or HxW) in [0, 1] -> CV_8UC1 (rounded, clamped).
cv::Mat mask_to_image(const torch::Tensor& mask);
/// CV_8UC1 -> 1xHxW float in [0, 1].
torch::Tensor image_to_mask(const cv::Mat& gray);

}  // namespace hi::core
