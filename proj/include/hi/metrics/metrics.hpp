#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>
#include <torch/types.h>

#include "hi/nn/perceptual.hpp"

namespace hi::metrics {

inline constexpr int kMaxDenseIndex = 24;
/// Per-image value of an IoU whose union is empty.
inline constexpr double kMaskedSentinel = -1.0;

/// CV_8UC1 body-part indices 0..24 (0 = no body).
class DenseIndexMap {
 public:
  DenseIndexMap() = default;
  /// Throws Error(kValidation) for a non 8-bit map or an index above 24.
  explicit DenseIndexMap(const cv::Mat& pixels);
  /// No range check; dpis validates the pair itself.
  static DenseIndexMap unchecked(const cv::Mat& pixels);
  const cv::Mat& pixels() const { return pixels_; }
  cv::Size size() const { return pixels_.size(); }

 private:
  cv::Mat pixels_;
};

/// IoU of (a > 0) and (b > 0); kMaskedSentinel when both are empty. Throws
/// Error(kShapeMismatch).
double binary_iou(const DenseIndexMap& a, const DenseIndexMap& b);
double dpbs(const DenseIndexMap& gt, const DenseIndexMap& gen);

/// kPresent averages per-index IoUs over indices 1..max(gt, gen) whose union
/// is nonempty; a pair with no body at all has no score.
/// kLiteral replays the published reference script, whose 24-slot buffer
/// also counts every index above max(gt, gen) as an IoU of 0.
enum class DpisConvention { kPresent, kLiteral };

/// Per-index IoU mean. Returns nullopt only under kPresent when every index
/// is masked. Throws Error(kValidation) when an index exceeds 24.
std::optional<double> dpis(const DenseIndexMap& gt, const DenseIndexMap& gen,
                           DpisConvention convention = DpisConvention::kPresent);

struct MetricStats {
  double mean = 0.0;
  double sd = 0.0;  // population (ddof 0)
  double median = 0.0;
  int masked_count = 0;
  int count = 0;  // unmasked entries
  nlohmann::json to_json() const;
};

/// Two-pass statistics over the entries that hold a value. With no values
/// at all, mean/sd/median are NaN.
MetricStats aggregate(const std::vector<std::optional<double>>& values);

/// Mean local SSIM with an 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, over the region where the window fits; channels averaged.
/// Accepts CV_8U or CV_64F, 1 or 3 channels. Throws Error(kValidation) when
/// the image is smaller than the window.
double ssim(const cv::Mat& a, const cv::Mat& b, double data_range = 255.0);

/// LPIPS-style distance: per tapped layer, channel-normalised features,
/// squared difference averaged over space and summed over channels; layers
/// combined with the extractor weights. Inputs 3 x H x W or N x 3 x H x W in
/// [-1, 1].
double perceptual_distance(const torch::Tensor& a, const torch::Tensor& b,
                           const nn::PerceptualExtractor& extractor);

enum class Pairing { kByName, kByOrder };

struct ImageScore {
  std::string gt_name;
  std::string gen_name;
  double dpbs = kMaskedSentinel;
  std::optional<double> dpis;
};

struct EvaluationReport {
  std::vector<ImageScore> images;
  MetricStats dpbs;
  MetricStats dpis;
  DpisConvention convention = DpisConvention::kPresent;
  nlohmann::json to_json() const;
  std::string to_csv() const;
};

/// Scores every ground-truth map against its generated counterpart (first
/// channel of each PNG). Files are taken in sorted name order. Throws
/// Error(kCountMismatch) when the folders hold different numbers of files,
/// Error(kIo) for unreadable or missing files, Error(kValidation) for an
/// index above 24. Nothing is returned on error.
EvaluationReport evaluate_directory(const std::filesystem::path& gt_dir,
                                    const std::filesystem::path& gen_dir, Pairing pairing,
                                    DpisConvention convention = DpisConvention::kPresent);

}  // namespace hi::metrics
