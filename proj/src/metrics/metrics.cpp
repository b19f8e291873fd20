#include "hi/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <opencv2/imgproc.hpp>
#include <torch/torch.h>

#include "hi/core/error.hpp"
#include "hi/core/io.hpp"

namespace hi::metrics {
namespace {

void require_same_shape(const DenseIndexMap& a, const DenseIndexMap& b) {
  if (a.size() != b.size()) throw Error(ErrorCode::kShapeMismatch, "dense index maps differ in size");
}

double iou_of(const cv::Mat& a_on, const cv::Mat& b_on) {
  cv::Mat both, either;
  cv::bitwise_and(a_on, b_on, both);
  cv::bitwise_or(a_on, b_on, either);
  const int union_count = cv::countNonZero(either);
  if (union_count == 0) return kMaskedSentinel;
  return static_cast<double>(cv::countNonZero(both)) / static_cast<double>(union_count);
}

int max_index(const cv::Mat& m) {
  double v = 0;
  cv::minMaxLoc(m, nullptr, &v);
  return static_cast<int>(v);
}

std::string format_value(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream out;
  out.precision(17);
  out << *v;
  return out.str();
}

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

std::vector<std::filesystem::path> sorted_files(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error(ErrorCode::kIo, dir.string() + " is not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(),
            [](const auto& a, const auto& b) { return a.filename().string() < b.filename().string(); });
  return files;
}

}  // namespace

DenseIndexMap::DenseIndexMap(const cv::Mat& pixels) : DenseIndexMap(unchecked(pixels)) {
  if (max_index(pixels_) > kMaxDenseIndex) {
    throw Error(ErrorCode::kValidation,
                "dense index " + std::to_string(max_index(pixels_)) + " is above " + std::to_string(kMaxDenseIndex));
  }
}

DenseIndexMap DenseIndexMap::unchecked(const cv::Mat& pixels) {
  if (pixels.type() != CV_8UC1) throw Error(ErrorCode::kValidation, "dense index map must be 8-bit single channel");
  DenseIndexMap m;
  m.pixels_ = pixels.clone();
  return m;
}

double binary_iou(const DenseIndexMap& a, const DenseIndexMap& b) {
  require_same_shape(a, b);
  return iou_of(a.pixels() > 0, b.pixels() > 0);
}

double dpbs(const DenseIndexMap& gt, const DenseIndexMap& gen) { return binary_iou(gt, gen); }

std::optional<double> dpis(const DenseIndexMap& gt, const DenseIndexMap& gen, DpisConvention convention) {
  require_same_shape(gt, gen);
  const int top = std::max(max_index(gt.pixels()), max_index(gen.pixels()));
  if (top > kMaxDenseIndex) {
    throw Error(ErrorCode::kValidation,
                "the maximum index value was " + std::to_string(top) + ", limit " + std::to_string(kMaxDenseIndex));
  }
  double sum = 0.0;
  int used = 0;
  for (int idx = 1; idx <= top; ++idx) {
    const double iou = iou_of(gt.pixels() == idx, gen.pixels() == idx);
    if (iou == kMaskedSentinel) continue;
    sum += iou;
    ++used;
  }
  if (convention == DpisConvention::kLiteral) {
    // Untouched buffer slots above `top` hold 0 and are not masked.
    used += kMaxDenseIndex - top;
  }
  if (used == 0) return std::nullopt;
  return sum / used;
}

nlohmann::json MetricStats::to_json() const {
  return {{"mean", number_or_null(mean)},
          {"sd", number_or_null(sd)},
          {"median", number_or_null(median)},
          {"count", count},
          {"masked_count", masked_count}};
}

MetricStats aggregate(const std::vector<std::optional<double>>& values) {
  MetricStats s;
  std::vector<double> v;
  for (const auto& x : values) {
    if (x) {
      v.push_back(*x);
    } else {
      ++s.masked_count;
    }
  }
  s.count = static_cast<int>(v.size());
  if (v.empty()) {
    s.mean = s.sd = s.median = std::numeric_limits<double>::quiet_NaN();
    return s;
  }
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  double sq = 0.0;
  for (double x : v) sq += (x - s.mean) * (x - s.mean);
  s.sd = std::sqrt(sq / static_cast<double>(v.size()));
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  s.median = n % 2 == 1 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
  return s;
}

double ssim(const cv::Mat& a, const cv::Mat& b, double data_range) {
  constexpr int kWindow = 11;
  constexpr int kPad = kWindow / 2;
  if (a.size() != b.size() || a.type() != b.type()) {
    throw Error(ErrorCode::kShapeMismatch, "SSIM inputs differ in size or type");
  }
  if (a.rows < kWindow || a.cols < kWindow) {
    throw Error(ErrorCode::kValidation, "image is smaller than the 11x11 SSIM window");
  }
  if (a.channels() != 1 && a.channels() != 3) {
    throw Error(ErrorCode::kValidation, "SSIM takes 1 or 3 channel images");
  }
  const double c1 = std::pow(0.01 * data_range, 2);
  const double c2 = std::pow(0.03 * data_range, 2);
  const cv::Mat kernel = cv::getGaussianKernel(kWindow, 1.5, CV_64F);
  const auto blur = [&](const cv::Mat& x) {
    cv::Mat out;
    cv::sepFilter2D(x, out, CV_64F, kernel, kernel, cv::Point(-1, -1), 0, cv::BORDER_REFLECT);
    return out;
  };
  std::vector<cv::Mat> as, bs;
  cv::split(a, as);
  cv::split(b, bs);
  const cv::Rect valid(kPad, kPad, a.cols - 2 * kPad, a.rows - 2 * kPad);
  double total = 0.0;
  for (std::size_t c = 0; c < as.size(); ++c) {
    cv::Mat x, y;
    as[c].convertTo(x, CV_64F);
    bs[c].convertTo(y, CV_64F);
    const cv::Mat mx = blur(x), my = blur(y);
    const cv::Mat vx = blur(x.mul(x)) - mx.mul(mx);
    const cv::Mat vy = blur(y.mul(y)) - my.mul(my);
    const cv::Mat vxy = blur(x.mul(y)) - mx.mul(my);
    const cv::Mat num = (2 * mx.mul(my) + c1).mul(2 * vxy + c2);
    const cv::Mat den = (mx.mul(mx) + my.mul(my) + c1).mul(vx + vy + c2);
    cv::Mat map;
    cv::divide(num, den, map);
    total += cv::mean(map(valid))[0];
  }
  return total / static_cast<double>(as.size());
}

double perceptual_distance(const torch::Tensor& a, const torch::Tensor& b,
                           const nn::PerceptualExtractor& extractor) {
  if (a.sizes() != b.sizes()) throw Error(ErrorCode::kShapeMismatch, "perceptual inputs differ in shape");
  torch::NoGradGuard no_grad;
  const auto fa = extractor.extract(a.dim() == 3 ? a.unsqueeze(0) : a);
  const auto fb = extractor.extract(b.dim() == 3 ? b.unsqueeze(0) : b);
  double total = 0.0;
  for (std::size_t j = 0; j < fa.size(); ++j) {
    const auto na = fa[j] / (fa[j].pow(2).sum(1, true).sqrt() + 1e-10);
    const auto nb = fb[j] / (fb[j].pow(2).sum(1, true).sqrt() + 1e-10);
    total += extractor.weights()[j] * (na - nb).pow(2).sum(1).mean().item<double>();
  }
  return total;
}

nlohmann::json EvaluationReport::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& img : images) {
    rows.push_back({{"gt", img.gt_name},
                    {"gen", img.gen_name},
                    {"dpbs", img.dpbs},
                    {"dpbs_masked", img.dpbs == kMaskedSentinel},
                    {"dpis", optional_json(img.dpis)}});
  }
  return {{"convention", convention == DpisConvention::kLiteral ? "literal" : "present"},
          {"images", rows},
          {"dpbs", dpbs.to_json()},
          {"dpis", dpis.to_json()}};
}

std::string EvaluationReport::to_csv() const {
  std::ostringstream out;
  out << "gt,gen,dpbs,dpis\n";
  for (const auto& img : images) {
    const std::optional<double> d =
        img.dpbs == kMaskedSentinel ? std::nullopt : std::optional<double>(img.dpbs);
    out << img.gt_name << ',' << img.gen_name << ',' << format_value(d) << ',' << format_value(img.dpis)
        << '\n';
  }
  const auto stat_row = [&](const char* name, const MetricStats& s) {
    out << "# " << name << " mean=" << format_value(s.mean) << " sd=" << format_value(s.sd)
        << " median=" << format_value(s.median) << " masked=" << s.masked_count << '\n';
  };
  stat_row("dpbs", dpbs);
  stat_row("dpis", dpis);
  return out.str();
}

EvaluationReport evaluate_directory(const std::filesystem::path& gt_dir, const std::filesystem::path& gen_dir,
                                    Pairing pairing, DpisConvention convention) {
  const auto gt_files = sorted_files(gt_dir);
  const auto gen_files = sorted_files(gen_dir);
  if (gt_files.size() != gen_files.size()) {
    throw Error(ErrorCode::kCountMismatch, "ground-truth and generated folders do not contain the same number "
                                           "of images (" + std::to_string(gt_files.size()) + " vs " +
                                               std::to_string(gen_files.size()) + ")");
  }
  if (gt_files.empty()) throw Error(ErrorCode::kEmptyDataset, "no images to evaluate in " + gt_dir.string());
  EvaluationReport report;
  report.convention = convention;
  std::vector<std::optional<double>> dpbs_values, dpis_values;
  for (std::size_t i = 0; i < gt_files.size(); ++i) {
    const auto gen_path = pairing == Pairing::kByOrder ? gen_files[i] : gen_dir / gt_files[i].filename();
    if (!std::filesystem::exists(gen_path)) {
      throw Error(ErrorCode::kIo, "no generated image named " + gt_files[i].filename().string());
    }
    const auto gt = DenseIndexMap::unchecked(core::read_gray_png(gt_files[i]));
    const auto gen = DenseIndexMap::unchecked(core::read_gray_png(gen_path));
    ImageScore score;
    score.gt_name = gt_files[i].filename().string();
    score.gen_name = gen_path.filename().string();
    try {
      score.dpis = dpis(gt, gen, convention);
    } catch (const Error& e) {
      throw Error(e.code(), score.gt_name + ": " + e.what());
    }
    score.dpbs = dpbs(gt, gen);
    dpbs_values.push_back(score.dpbs == kMaskedSentinel ? std::nullopt : std::optional<double>(score.dpbs));
    dpis_values.push_back(score.dpis);
    report.images.push_back(std::move(score));
  }
  report.dpbs = aggregate(dpbs_values);
  report.dpis = aggregate(dpis_values);
  return report;
}

}  // namespace hi::metrics
