#include "doctest_torch.hpp"

#include <cmath>

#include <opencv2/imgproc.hpp>
#include <torch/torch.h>

#include "hi/core/encoding.hpp"
#include "hi/core/error.hpp"
#include "hi/egn/egn.hpp"
#include "synthetic.hpp"

using namespace hi;
using namespace hi::egn;

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

// Decodes a [-1, 1] channel back to 8-bit values.
cv::Mat channel_u8(const torch::Tensor& chw, int64_t c) {
  const auto u = chw[c].add(1.0).mul(127.5).round().to(torch::kUInt8).contiguous();
  return cv::Mat(static_cast<int>(u.size(0)), static_cast<int>(u.size(1)), CV_8UC1, u.data_ptr()).clone();
}

core::PersonPose two_blob_pose(cv::Size size) {
  cv::Mat s = cv::Mat::zeros(size, CV_8UC1), f = cv::Mat::zeros(size, CV_8UC1);
  s(cv::Rect(10, 10, 20, 30)).setTo(108);
  s(cv::Rect(14, 4, 8, 6)).setTo(72);
  f(cv::Rect(15, 5, 5, 4)).setTo(255);
  return {core::SemanticMap(s), core::BinaryChannel(f)};
}

}  // namespace

TEST_CASE("variant channel counts and names") {
  CHECK(input_channels(Variant::kWithBBox) == 3);
  CHECK(input_channels(Variant::kWithoutBBox) == 2);
  CHECK(input_channels(Variant::kPoseTransfer) == 3);
  for (auto v : {Variant::kWithBBox, Variant::kWithoutBBox, Variant::kPoseTransfer}) {
    CHECK(variant_from_string(to_string(v)) == v);
  }
  CHECK(variant_from_string("egn-prime") == Variant::kWithoutBBox);
  CHECK(code_of_call([] { variant_from_string("nope"); }) == ErrorCode::kValidation);
}

TEST_CASE("held-out person is removed from the scene channels") {
  const auto fx = testing::scene_fixture(testing::mini_dataset()[0]);
  const int r = 128;
  const auto in = build_egn_input(fx.scene, 1, TrainTight{}, r);
  REQUIRE(in.tensor.sizes() == torch::IntArrayRef({3, r, r}));
  CHECK(in.variant == Variant::kWithBBox);
  CHECK(in.heldout == 1);
  // Only person 0 remains in s and f.
  const auto expect_s = core::encode_semantic(fx.scene.persons[0]);
  CHECK(torch::equal(in.tensor[0], expect_s));
  const core::KeypointSet kp0 = fx.scene.keypoints[0];
  const auto f0 = core::face_hull_channel(std::span(&kp0, 1), fx.scene.size()).channel;
  CHECK(torch::equal(in.tensor[1], core::encode_binary(f0)));

  SUBCASE("tight box of the held-out person") {
    const cv::Mat b = channel_u8(in.tensor, 2);
    const auto mask = fx.scene.persons[1].pixels() > 0;
    cv::Rect tight = cv::boundingRect(mask);
    cv::Mat expect = cv::Mat::zeros(b.size(), CV_8UC1);
    expect(tight).setTo(255);
    CHECK(cv::countNonZero(b != expect) == 0);
  }
}

TEST_CASE("tight box at a hand-built mask") {
  cv::Mat labels = cv::Mat::zeros(100, 100, CV_8UC1);
  labels(cv::Range(10, 91), cv::Range(30, 61)).setTo(108);
  const std::vector<core::SemanticMap> persons{core::SemanticMap::zeros({100, 100}), core::SemanticMap(labels)};
  core::KeypointSet face{{40, 12}, {50, 12}, {45, 20}};
  const std::vector<core::KeypointSet> sets{{}, face};
  const auto scene = core::compose_scene(persons, sets);
  const auto in = build_egn_input(scene, 1, TrainTight{}, 100);
  const cv::Mat b = channel_u8(in.tensor, 2);
  // Rows 10..90, columns 30..60 inclusive.
  CHECK(cv::countNonZero(b) == 81 * 31);
  CHECK(b.at<std::uint8_t>(10, 30) == 255);
  CHECK(b.at<std::uint8_t>(90, 60) == 255);
  CHECK(b.at<std::uint8_t>(9, 30) == 0);
  CHECK(b.at<std::uint8_t>(90, 61) == 0);
  CHECK(cv::countNonZero(channel_u8(in.tensor, 0)) == 0);

  SUBCASE("halved resolution keeps the box nearest-neighbour") {
    const auto half = build_egn_input(scene, 1, TrainTight{}, 50);
    const cv::Mat hb = channel_u8(half.tensor, 2);
    cv::Mat full = cv::Mat::zeros(100, 100, CV_8UC1);
    full(cv::Range(10, 91), cv::Range(30, 61)).setTo(255);
    cv::Mat expect;
    cv::resize(full, expect, {50, 50}, 0, 0, cv::INTER_NEAREST_EXACT);
    CHECK(cv::countNonZero(hb != expect) == 0);
  }
}

TEST_CASE("rejected held-out samples") {
  const auto fx = testing::scene_fixture(testing::held_out_pair());
  // Person 0 has no face keypoints.
  CHECK(code_of_call([&] { build_egn_input(fx.scene, 0, TrainTight{}, 96); }) == ErrorCode::kSampleRejected);
  CHECK(code_of_call([&] { build_egn_input(fx.scene, 5, TrainTight{}, 96); }) == ErrorCode::kOutOfRange);
  CHECK(code_of_call([&] { build_egn_input(fx.scene, std::nullopt, TrainTight{}, 96); }) == ErrorCode::kValidation);
  const auto none = build_egn_input(fx.scene, std::nullopt, NoBox{}, 96);
  CHECK(none.tensor.size(0) == 2);
  CHECK(none.variant == Variant::kWithoutBBox);
}

TEST_CASE("egn sample target is the held-out pose") {
  const auto fx = testing::scene_fixture(testing::held_out_pair());
  const auto s = build_egn_sample(fx.scene, 1, false, 48);
  CHECK(s.input.tensor.sizes() == torch::IntArrayRef({2, 48, 48}));
  CHECK(s.target.semantic.size() == cv::Size(48, 48));
  const auto expect = core::resize_nearest(core::person_pose(fx.scene, 1), {48, 48});
  CHECK(cv::countNonZero(s.target.semantic.pixels() != expect.semantic.pixels()) == 0);
  CHECK(cv::countNonZero(s.target.face.pixels() != expect.face.pixels()) == 0);
  CHECK_FALSE(s.target.face.empty());
}

TEST_CASE("stick skeleton lines") {
  SUBCASE("axis-aligned and diagonal") {
    const StickSkeleton sk{{{2, 3}, {12, 3}, {12, 13}, {2, 13}}, {{0, 1}, {1, 2}, {0, 2}}};
    const cv::Mat r = rasterize_skeleton(sk, {16, 16});
    cv::Mat expect = cv::Mat::zeros(16, 16, CV_8UC1);
    for (int x = 2; x <= 12; ++x) expect.at<std::uint8_t>(3, x) = 255;
    for (int y = 3; y <= 13; ++y) expect.at<std::uint8_t>(y, 12) = 255;
    for (int i = 0; i <= 10; ++i) expect.at<std::uint8_t>(3 + i, 2 + i) = 255;
    CHECK(cv::countNonZero(r != expect) == 0);
  }
  SUBCASE("general slope is a thin digital line") {
    // One pixel per step of the major axis, each within half a pixel of the
    // ideal line.
    const cv::Point a(3, 4), b(27, 13);
    const StickSkeleton sk{{a, b}, {{0, 1}}};
    const cv::Mat r = rasterize_skeleton(sk, {32, 32});
    CHECK(r.at<std::uint8_t>(a) == 255);
    CHECK(r.at<std::uint8_t>(b) == 255);
    CHECK(cv::countNonZero(r) == b.x - a.x + 1);
    for (int x = a.x; x <= b.x; ++x) {
      int hits = 0;
      for (int y = 0; y < 32; ++y) {
        if (r.at<std::uint8_t>(y, x) == 0) continue;
        ++hits;
        const double ideal = a.y + double(b.y - a.y) * (x - a.x) / (b.x - a.x);
        CHECK(std::abs(y - ideal) <= 0.5 + 1e-9);
      }
      CHECK(hits == 1);
    }
  }
  CHECK(code_of_call([] { rasterize_skeleton(StickSkeleton{{{0, 0}}, {{0, 3}}}, {4, 4}); }) ==
        ErrorCode::kValidation);
}

TEST_CASE("dense skeleton scaling") {
  cv::Mat idx = cv::Mat::zeros(8, 8, CV_8UC1);
  idx.at<std::uint8_t>(1, 1) = 24;
  idx.at<std::uint8_t>(2, 2) = 3;
  const cv::Mat r = rasterize_skeleton(DenseSkeleton{idx}, {8, 8});
  CHECK(r.at<std::uint8_t>(1, 1) == 240);
  CHECK(r.at<std::uint8_t>(2, 2) == 30);
  idx.at<std::uint8_t>(0, 0) = 25;
  CHECK(code_of_call([&] { rasterize_skeleton(DenseSkeleton{idx}, {8, 8}); }) == ErrorCode::kValidation);
}

TEST_CASE("pose transfer input") {
  const auto pose = two_blob_pose({48, 48});
  const StickSkeleton src{{{5, 5}, {20, 25}}, {{0, 1}}}, dst{{{8, 2}, {8, 30}}, {{0, 1}}};
  const auto in = build_pose_transfer_input(pose.semantic, src, dst, 48);
  CHECK(in.tensor.sizes() == torch::IntArrayRef({3, 48, 48}));
  CHECK(in.variant == Variant::kPoseTransfer);
  CHECK(torch::equal(in.tensor[0], core::encode_semantic(pose.semantic)));
  CHECK(cv::countNonZero(channel_u8(in.tensor, 2)) == 29);
  CHECK(code_of_call([&] {
          build_pose_transfer_input(pose.semantic, src, DenseSkeleton{cv::Mat::zeros(48, 48, CV_8UC1)}, 48);
        }) == ErrorCode::kValidation);
}

TEST_CASE("generation is deterministic and palette-valid") {
  torch::manual_seed(1);
  auto cfg = EgnConfig::desk(Variant::kWithBBox);
  EgnModel a(cfg), b(cfg);
  const auto fx = testing::scene_fixture(testing::held_out_pair());
  const auto in = build_egn_input(fx.scene, 1, TrainTight{}, cfg.resolution);
  const auto pa = a.generate(in), pb = b.generate(in);
  CHECK(cv::countNonZero(pa.semantic.pixels() != pb.semantic.pixels()) == 0);
  CHECK(cv::countNonZero(pa.face.pixels() != pb.face.pixels()) == 0);
  CHECK(pa.semantic.size() == cv::Size(cfg.resolution, cfg.resolution));
  // SemanticMap construction already validated the codes; spot check anyway.
  const cv::Mat& s = pa.semantic.pixels();
  for (int y = 0; y < s.rows; ++y)
    for (int x = 0; x < s.cols; ++x) REQUIRE(core::is_palette_code(s.at<std::uint8_t>(y, x)));

  const auto raw = a.forward_raw(in.tensor.unsqueeze(0));
  CHECK(raw.sizes() == torch::IntArrayRef({1, 2, cfg.resolution, cfg.resolution}));
  CHECK(raw.abs().max().item<double>() <= 1.0);
}

TEST_CASE("variant mismatch") {
  EgnModel prime(EgnConfig::desk(Variant::kWithoutBBox));
  const auto fx = testing::scene_fixture(testing::held_out_pair());
  const auto boxed = build_egn_input(fx.scene, 1, TrainTight{}, prime.config().resolution);
  CHECK(code_of_call([&] { prime.generate(boxed); }) == ErrorCode::kVariantMismatch);
  EgnModel full(EgnConfig::desk(Variant::kWithBBox));
  const auto unboxed = build_egn_input(fx.scene, 1, NoBox{}, full.config().resolution);
  CHECK(code_of_call([&] { full.generate(unboxed); }) == ErrorCode::kVariantMismatch);
}

TEST_CASE("config presets and json") {
  const auto full = EgnConfig::full(Variant::kWithBBox);
  CHECK(full.resolution == 368);
  CHECK(full.generator.in_channels == 3);
  CHECK(full.bank.patch.in_channels == 5);
  const auto prime = EgnConfig::full(Variant::kWithoutBBox);
  CHECK(prime.generator.in_channels == 2);
  CHECK(prime.bank.patch.in_channels == 4);
  const auto back = EgnConfig::from_json(full.to_json());
  CHECK(back.to_json() == full.to_json());
}

TEST_CASE("training step and checkpoint round trip") {
  const auto dir = testing::scratch_dir("egn_ckpt");
  auto cfg = EgnConfig::desk(Variant::kWithBBox);
  cfg.seed = 9;
  EgnModel model(cfg);
  const auto fx = testing::scene_fixture(testing::held_out_pair());
  const auto sample = build_egn_sample(fx.scene, 1, true, cfg.resolution);
  const auto report = model.training_step(std::span(&sample, 1));
  CHECK(std::isfinite(report.total_g));
  CHECK(std::isfinite(report.total_d));
  CHECK(report.at("fm_perceptual") == 0.0);
  model.save(dir / "egn.ckpt");
  auto loaded = EgnModel::load(dir / "egn.ckpt");
  CHECK(loaded.variant() == Variant::kWithBBox);
  const auto pa = model.generate(sample.input), pb = loaded.generate(sample.input);
  CHECK(cv::countNonZero(pa.semantic.pixels() != pb.semantic.pixels()) == 0);
  std::filesystem::remove_all(dir);
}
