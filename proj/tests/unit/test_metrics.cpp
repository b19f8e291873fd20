#include "doctest_torch.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <torch/torch.h>

#include "hi/core/error.hpp"
#include "hi/core/io.hpp"
#include "hi/metrics/metrics.hpp"
#include "hi/nn/perceptual.hpp"
#include "synthetic.hpp"

using namespace hi;
using namespace hi::metrics;
namespace fs = std::filesystem;

namespace {

ErrorCode code_of_call(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no hi::Error thrown");
  return ErrorCode::kValidation;
}

DenseIndexMap filled(int rows, int cols, cv::Rect r, int index) {
  cv::Mat m = cv::Mat::zeros(rows, cols, CV_8UC1);
  m(r).setTo(index);
  return DenseIndexMap(m);
}

cv::Mat random_indices(std::mt19937& rng, int rows, int cols, int max_index) {
  std::uniform_int_distribution<int> d(0, max_index);
  cv::Mat m(rows, cols, CV_8UC1);
  for (int y = 0; y < rows; ++y)
    for (int x = 0; x < cols; ++x) m.at<std::uint8_t>(y, x) = static_cast<std::uint8_t>(d(rng));
  return m;
}

}  // namespace

TEST_CASE("binary_iou") {
  const auto full = filled(8, 8, {0, 0, 8, 8}, 3);
  const auto top = filled(8, 8, {0, 0, 8, 4}, 7);
  CHECK(binary_iou(top, full) == 0.5);
  CHECK(binary_iou(full, full) == 1.0);
  const DenseIndexMap empty(cv::Mat::zeros(8, 8, CV_8UC1));
  CHECK(binary_iou(empty, empty) == kMaskedSentinel);
  CHECK(binary_iou(empty, full) == 0.0);
  CHECK(dpbs(top, full) == 0.5);
  CHECK(code_of_call([&] { binary_iou(full, filled(8, 9, {0, 0, 1, 1}, 1)); }) == ErrorCode::kShapeMismatch);
}

TEST_CASE("dpis examples") {
  cv::Mat a = cv::Mat::zeros(4, 4, CV_8UC1);
  a(cv::Rect(0, 0, 2, 4)).setTo(1);
  a(cv::Rect(2, 0, 2, 4)).setTo(5);
  const DenseIndexMap m(a);
  CHECK(dpis(m, m) == 1.0);
  // The published script averages over a 24-slot buffer: 2 of 21 slots hit.
  CHECK(dpis(m, m, DpisConvention::kLiteral).value() == doctest::Approx(2.0 / 21.0).epsilon(1e-15));

  cv::Mat swapped = cv::Mat::zeros(4, 4, CV_8UC1);
  swapped(cv::Rect(0, 0, 2, 4)).setTo(5);
  swapped(cv::Rect(2, 0, 2, 4)).setTo(1);
  CHECK(dpis(m, DenseIndexMap(swapped)) == 0.0);

  const auto left = filled(4, 4, {0, 0, 2, 4}, 2);
  const auto full = filled(4, 4, {0, 0, 4, 4}, 2);
  CHECK(dpis(left, full) == 0.5);

  const DenseIndexMap empty(cv::Mat::zeros(4, 4, CV_8UC1));
  CHECK_FALSE(dpis(empty, empty).has_value());
  CHECK(dpis(empty, empty, DpisConvention::kLiteral) == 0.0);

  cv::Mat big = cv::Mat::zeros(4, 4, CV_8UC1);
  big.at<std::uint8_t>(0, 0) = 25;
  CHECK(code_of_call([&] { DenseIndexMap bad(big); }) == ErrorCode::kValidation);
  CHECK(code_of_call([&] { dpis(DenseIndexMap::unchecked(big), empty); }) == ErrorCode::kValidation);
}

TEST_CASE("dpis and dpbs properties") {
  std::mt19937 rng(42);
  for (int trial = 0; trial < 50; ++trial) {
    const DenseIndexMap a(random_indices(rng, 12, 10, 6)), b(random_indices(rng, 12, 10, 6));
    // Symmetric in its arguments.
    CHECK(dpbs(a, b) == dpbs(b, a));
    CHECK(dpis(a, b).value() == doctest::Approx(dpis(b, a).value()).epsilon(1e-15));
    // Relabelling the part indices consistently leaves both scores unchanged
    // under the present convention.
    std::vector<std::uint8_t> perm{0, 1, 2, 3, 4, 5, 6};
    std::shuffle(perm.begin() + 1, perm.end(), rng);
    cv::Mat pa = a.pixels().clone(), pb = b.pixels().clone();
    for (auto* m : {&pa, &pb})
      for (auto it = m->begin<std::uint8_t>(); it != m->end<std::uint8_t>(); ++it) *it = perm[*it];
    CHECK(dpis(DenseIndexMap(pa), DenseIndexMap(pb)).value() == doctest::Approx(dpis(a, b).value()).epsilon(1e-12));
    CHECK(dpbs(DenseIndexMap(pa), DenseIndexMap(pb)) == dpbs(a, b));
    const double v = dpis(a, b).value();
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("aggregate") {
  const auto s = aggregate({1.0, std::nullopt, 3.0, 2.0});
  CHECK(s.mean == 2.0);
  CHECK(s.median == 2.0);
  CHECK(s.sd == doctest::Approx(std::sqrt(2.0 / 3.0)).epsilon(1e-15));
  CHECK(s.count == 3);
  CHECK(s.masked_count == 1);
  const auto even = aggregate({4.0, 1.0, 3.0, 2.0});
  CHECK(even.median == 2.5);
  const auto none = aggregate({std::nullopt});
  CHECK(std::isnan(none.mean));
  CHECK(none.to_json()["mean"].is_null());
}

TEST_CASE("ssim against frozen references") {
  nlohmann::json ref;
  std::ifstream(std::string(HI_ORACLE_DIR) + "/ssim/reference.json") >> ref;
  REQUIRE(ref.size() == 5);
  for (const auto& c : ref) {
    const std::string name = c["name"];
    CAPTURE(name);
    const auto dir = fs::path(HI_ORACLE_DIR) / "ssim";
    const cv::Mat a = cv::imread((dir / (name + "_a.png")).string(), cv::IMREAD_UNCHANGED);
    const cv::Mat b = cv::imread((dir / (name + "_b.png")).string(), cv::IMREAD_UNCHANGED);
    REQUIRE_FALSE(a.empty());
    CHECK(std::abs(ssim(a, b) - c["ssim"].get<double>()) <= 1e-6);
  }
}

TEST_CASE("ssim properties") {
  cv::Mat a(32, 32, CV_8UC3);
  cv::randu(a, 0, 256);
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  const cv::Mat black = cv::Mat::zeros(32, 32, CV_8UC1), white(32, 32, CV_8UC1, cv::Scalar(255));
  CHECK(ssim(black, white) < 0.05);
  cv::Mat b(32, 32, CV_8UC3);
  cv::randu(b, 0, 256);
  CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-12));
  CHECK(code_of_call([] { ssim(cv::Mat::zeros(10, 10, CV_8UC1), cv::Mat::zeros(10, 10, CV_8UC1)); }) ==
        ErrorCode::kValidation);
}

TEST_CASE("perceptual distance") {
  const nn::PerceptualExtractor ex(std::make_shared<nn::RandomConvBackend>(3));
  torch::manual_seed(1);
  const auto a = torch::rand({3, 32, 32}) * 2 - 1, b = torch::rand({3, 32, 32}) * 2 - 1;
  CHECK(perceptual_distance(a, a, ex) == 0.0);
  CHECK(perceptual_distance(a, b, ex) > 0.0);
  CHECK(perceptual_distance(a, b, ex) == doctest::Approx(perceptual_distance(b, a, ex)).epsilon(1e-6));
}

TEST_CASE("evaluate_directory") {
  const auto gt = fs::path(HI_ORACLE_DIR) / "dense" / "gt";
  const auto dir = testing::scratch_dir("metrics_dirs");

  SUBCASE("a copy of the ground truth scores perfectly") {
    fs::create_directories(dir / "copy");
    int n = 0;
    for (const auto& e : fs::directory_iterator(gt)) {
      fs::copy_file(e.path(), dir / "copy" / e.path().filename());
      ++n;
    }
    const auto r = evaluate_directory(gt, dir / "copy", Pairing::kByName);
    CHECK(static_cast<int>(r.images.size()) == n);
    CHECK(r.dpbs.mean == 1.0);
    CHECK(r.dpbs.sd == 0.0);
    CHECK(r.dpis.mean == 1.0);
    CHECK(r.dpbs.masked_count + r.dpbs.count == n);
    const auto j = r.to_json();
    CHECK(j["convention"] == "present");
    CHECK(j["images"].size() == static_cast<std::size_t>(n));
    const auto csv = r.to_csv();
    CHECK(csv.rfind("gt,gen,dpbs,dpis\n", 0) == 0);
    CHECK(csv.find("# dpbs mean=") != std::string::npos);
  }
  SUBCASE("count mismatch") {
    fs::create_directories(dir / "short");
    fs::copy_file(*fs::directory_iterator(gt), dir / "short" / "only.png");
    CHECK(code_of_call([&] { evaluate_directory(gt, dir / "short", Pairing::kByOrder); }) ==
          ErrorCode::kCountMismatch);
  }
  SUBCASE("missing partner under name pairing") {
    fs::create_directories(dir / "renamed");
    int i = 0;
    for (const auto& e : fs::directory_iterator(gt)) {
      fs::copy_file(e.path(), dir / "renamed" / ("x" + std::to_string(i++) + ".png"));
    }
    CHECK(code_of_call([&] { evaluate_directory(gt, dir / "renamed", Pairing::kByName); }) == ErrorCode::kIo);
    CHECK_NOTHROW(evaluate_directory(gt, dir / "renamed", Pairing::kByOrder));
  }
  SUBCASE("index above 24") {
    fs::create_directories(dir / "a");
    fs::create_directories(dir / "b");
    cv::Mat bad = cv::Mat::zeros(8, 8, CV_8UC1);
    bad.at<std::uint8_t>(2, 2) = 30;
    core::write_png(dir / "a" / "p.png", bad);
    core::write_png(dir / "b" / "p.png", cv::Mat::zeros(8, 8, CV_8UC1));
    CHECK(code_of_call([&] { evaluate_directory(dir / "a", dir / "b", Pairing::kByName); }) ==
          ErrorCode::kValidation);
  }
  fs::remove_all(dir);
}
