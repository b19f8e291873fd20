#include "hi/core/io.hpp"

#include <fstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <torch/torch.h>

#include "hi/core/error.hpp"

namespace hi::core {

cv::Mat read_gray_png(const fs::path& path) {
  cv::Mat img = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (img.empty()) throw Error(ErrorCode::kIo, "cannot read image " + path.string());
  if (img.depth() != CV_8U) throw Error(ErrorCode::kValidation, path.string() + " is not 8-bit");
  if (img.channels() == 1) return img;
  cv::Mat first;
  cv::extractChannel(img, first, 0);
  return first;
}

SemanticMap read_semantic_png(const fs::path& path) { return SemanticMap(read_gray_png(path)); }

BinaryChannel read_binary_png(const fs::path& path) { return BinaryChannel(read_gray_png(path)); }

cv::Mat read_rgb(const fs::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw Error(ErrorCode::kIo, "cannot read image " + path.string());
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  return rgb;
}

void write_png(const fs::path& path, const cv::Mat& image) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), image)) throw Error(ErrorCode::kIo, "cannot write " + path.string());
}

void write_png(const fs::path& path, const SemanticMap& map) { write_png(path, map.pixels()); }

void write_png(const fs::path& path, const BinaryChannel& channel) {
  write_png(path, channel.pixels());
}

void write_rgb_png(const fs::path& path, const cv::Mat& rgb) {
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  write_png(path, bgr);
}

std::vector<std::uint8_t> encode_png(const cv::Mat& image) {
  std::vector<std::uint8_t> bytes;
  if (!cv::imencode(".png", image, bytes)) throw Error(ErrorCode::kIo, "PNG encoding failed");
  return bytes;
}

std::vector<std::uint8_t> encode_rgb_png(const cv::Mat& rgb) {
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  return encode_png(bgr);
}

cv::Mat decode_png(const std::vector<std::uint8_t>& bytes, int channels) {
  const int flag = channels == 3 ? cv::IMREAD_COLOR : cv::IMREAD_UNCHANGED;
  cv::Mat img = cv::imdecode(bytes, flag);
  if (img.empty()) throw Error(ErrorCode::kValidation, "payload is not a decodable image");
  if (img.depth() != CV_8U) throw Error(ErrorCode::kValidation, "image is not 8-bit");
  if (channels == 3) {
    cv::Mat rgb;
    cv::cvtColor(img, rgb, cv::COLOR_BGR2RGB);
    return rgb;
  }
  if (img.channels() != 1) {
    cv::Mat first;
    cv::extractChannel(img, first, 0);
    return first;
  }
  return img;
}

std::vector<KeypointSet> keypoints_from_json(const nlohmann::json& doc) {
  std::vector<KeypointSet> sets;
  try {
    for (const auto& person : doc.at("persons")) {
      KeypointSet set;
      if (person.contains("face_keypoints")) {
        for (const auto& pt : person.at("face_keypoints")) {
          set.emplace_back(pt.at(0).get<double>(), pt.at(1).get<double>());
        }
      }
      sets.push_back(std::move(set));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kValidation, std::string("malformed keypoint document: ") + e.what());
  }
  return sets;
}

nlohmann::json keypoints_to_json(const std::vector<KeypointSet>& sets) {
  nlohmann::json persons = nlohmann::json::array();
  for (const auto& set : sets) {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : set) pts.push_back({p.x, p.y});
    persons.push_back({{"face_keypoints", pts}});
  }
  return {{"persons", persons}};
}

std::vector<KeypointSet> read_keypoints(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kValidation, path.string() + ": " + e.what());
  }
  return keypoints_from_json(doc);
}

void write_keypoints(const fs::path& path, const std::vector<KeypointSet>& sets) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << keypoints_to_json(sets).dump(2) << "\n";
}

torch::Tensor image_to_tensor(const cv::Mat& rgb) {
  if (rgb.type() != CV_8UC3) throw Error(ErrorCode::kValidation, "expected an RGB 8-bit image");
  cv::Mat contiguous = rgb.isContinuous() ? rgb : rgb.clone();
  return torch::from_blob(contiguous.data, {contiguous.rows, contiguous.cols, 3}, torch::kUInt8)
      .permute({2, 0, 1})
      .to(torch::kFloat32)
      .div(127.5)
      .sub(1.0)
      .contiguous();
}

cv::Mat tensor_to_image(const torch::Tensor& chw) {
  if (chw.dim() != 3 || chw.size(0) != 3) throw Error(ErrorCode::kShapeMismatch, "expected 3xHxW tensor");
  const auto hwc = chw.detach()
                       .to(torch::kCPU, torch::kFloat32)
                       .add(1.0)
                       .mul(127.5)
                       .round()
                       .clamp(0, 255)
                       .to(torch::kUInt8)
                       .permute({1, 2, 0})
                       .contiguous();
  cv::Mat out(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)), CV_8UC3);
  std::memcpy(out.data, hwc.data_ptr<std::uint8_t>(), hwc.numel());
  return out;
}

cv::Mat mask_to_image(const torch::Tensor& mask) {
  auto m = mask.detach().to(torch::kCPU, torch::kFloat32);
  if (m.dim() == 3) m = m.squeeze(0);
  if (m.dim() != 2) throw Error(ErrorCode::kShapeMismatch, "expected 1xHxW mask");
  m = m.mul(255.0).round().clamp(0, 255).to(torch::kUInt8).contiguous();
  cv::Mat out(static_cast<int>(m.size(0)), static_cast<int>(m.size(1)), CV_8UC1);
  std::memcpy(out.data, m.data_ptr<std::uint8_t>(), m.numel());
  return out;
}

torch::Tensor image_to_mask(const cv::Mat& gray) {
  if (gray.type() != CV_8UC1) throw Error(ErrorCode::kValidation, "expected an 8-bit mask");
  cv::Mat contiguous = gray.isContinuous() ? gray : gray.clone();
  return torch::from_blob(contiguous.data, {1, contiguous.rows, contiguous.cols}, torch::kUInt8)
      .to(torch::kFloat32)
      .div(255.0);
}

}  // namespace hi::core
