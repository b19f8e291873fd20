#include "synthetic.hpp"

#include <map>
#include <random>

#include <unistd.h>

#include <opencv2/imgproc.hpp>

#include "hi/core/encoding.hpp"
#include "hi/core/io.hpp"

namespace hi::testing {

namespace fs = std::filesystem;

namespace {

enum Raw : std::uint8_t {
  kHair = 2,
  kUpper = 4,
  kPants = 6,
  kLeftShoe = 9,
  kRightShoe = 10,
  kFace = 11,
  kLeftLeg = 12,
  kRightLeg = 13,
  kLeftArm = 14,
  kRightArm = 15,
};

cv::Rect span(const cv::Rect& b, double x0, double y0, double x1, double y1) {
  const int l = b.x + static_cast<int>(std::lround(b.width * x0));
  const int t = b.y + static_cast<int>(std::lround(b.height * y0));
  const int r = b.x + static_cast<int>(std::lround(b.width * x1));
  const int d = b.y + static_cast<int>(std::lround(b.height * y1));
  return {l, t, std::max(1, r - l), std::max(1, d - t)};
}

struct Head {
  cv::Point centre;
  int radius;
};

Head head_of(const cv::Rect& b) {
  return {{b.x + b.width / 2, b.y + static_cast<int>(std::lround(b.height * 0.1))},
          std::max(3, static_cast<int>(std::lround(b.height * 0.09)))};
}

cv::Vec3b colour(std::mt19937& rng) {
  std::uniform_int_distribution<int> d(30, 225);
  return {static_cast<std::uint8_t>(d(rng)), static_cast<std::uint8_t>(d(rng)), static_cast<std::uint8_t>(d(rng))};
}

}  // namespace

cv::Mat figure_labels(cv::Size frame, const cv::Rect& b) {
  cv::Mat labels = cv::Mat::zeros(frame, CV_8U);
  auto fill = [&](const cv::Rect& r, std::uint8_t id) { labels(r & cv::Rect({}, frame)).setTo(id); };
  fill(span(b, 0.0, 0.22, 0.2, 0.5), kLeftArm);
  fill(span(b, 0.8, 0.22, 1.0, 0.5), kRightArm);
  fill(span(b, 0.25, 0.2, 0.75, 0.55), kUpper);
  fill(span(b, 0.25, 0.55, 0.75, 0.7), kPants);
  fill(span(b, 0.25, 0.7, 0.48, 0.92), kLeftLeg);
  fill(span(b, 0.52, 0.7, 0.75, 0.92), kRightLeg);
  fill(span(b, 0.22, 0.92, 0.48, 1.0), kLeftShoe);
  fill(span(b, 0.52, 0.92, 0.78, 1.0), kRightShoe);
  const auto head = head_of(b);
  cv::circle(labels, head.centre, head.radius, kFace, cv::FILLED, cv::LINE_8);
  // Hair caps the upper 40% of the head.
  cv::Mat cap = cv::Mat::zeros(frame, CV_8U);
  cv::circle(cap, head.centre, head.radius, 255, cv::FILLED, cv::LINE_8);
  const int hair_bottom = head.centre.y - static_cast<int>(std::lround(head.radius * 0.2));
  if (hair_bottom + 1 < frame.height) cap.rowRange(std::max(0, hair_bottom + 1), frame.height).setTo(0);
  labels.setTo(kHair, cap);
  return labels;
}

core::KeypointSet figure_face(const cv::Rect& b) {
  const auto head = head_of(b);
  const double cx = head.centre.x;
  const double cy = head.centre.y + head.radius * 0.3;
  const double rx = head.radius * 0.6;
  const double ry = head.radius * 0.45;
  core::KeypointSet pts;
  for (int k = 0; k < 12; ++k) {
    const double a = 2.0 * CV_PI * k / 12.0;
    pts.emplace_back(cx + rx * std::cos(a), cy + ry * std::sin(a));
  }
  return pts;
}

cv::Mat scene_rgb(const SceneSpec& scene) {
  cv::Mat rgb(scene.size, CV_8UC3);
  for (int y = 0; y < rgb.rows; ++y) {
    for (int x = 0; x < rgb.cols; ++x) {
      rgb.at<cv::Vec3b>(y, x) = {static_cast<std::uint8_t>(60 + 120 * y / rgb.rows),
                                 static_cast<std::uint8_t>(140 - 40 * x / rgb.cols), 170};
    }
  }
  for (const auto& fig : scene.figures) {
    std::mt19937 rng(fig.look);
    std::map<std::uint8_t, cv::Vec3b> paint;
    const cv::Vec3b skin = {static_cast<std::uint8_t>(170 + rng() % 60), static_cast<std::uint8_t>(120 + rng() % 50),
                            static_cast<std::uint8_t>(90 + rng() % 40)};
    for (auto id : {kLeftArm, kRightArm, kLeftLeg, kRightLeg, kFace}) paint[id] = skin;
    paint[kHair] = colour(rng);
    paint[kUpper] = colour(rng);
    paint[kPants] = colour(rng);
    paint[kLeftShoe] = paint[kRightShoe] = colour(rng);
    const cv::Mat labels = figure_labels(scene.size, fig.body);
    for (int y = 0; y < rgb.rows; ++y) {
      for (int x = 0; x < rgb.cols; ++x) {
        const auto id = labels.at<std::uint8_t>(y, x);
        if (id == 0) continue;
        // Light vertical shading so parts are not flat.
        const int shade = (y - fig.body.y) * 24 / std::max(1, fig.body.height) - 12;
        cv::Vec3b c = paint[id];
        for (int ch = 0; ch < 3; ++ch) c[ch] = cv::saturate_cast<std::uint8_t>(c[ch] + shade);
        rgb.at<cv::Vec3b>(y, x) = c;
      }
    }
  }
  return rgb;
}

void write_dataset(const fs::path& root, const std::vector<SceneSpec>& scenes) {
  fs::create_directories(root / "images");
  fs::create_directories(root / "keypoints");
  for (const auto& scene : scenes) {
    core::write_rgb_png(root / "images" / (scene.id + ".png"), scene_rgb(scene));
    fs::create_directories(root / "parsing" / scene.id);
    std::vector<core::KeypointSet> sets;
    for (std::size_t k = 0; k < scene.figures.size(); ++k) {
      const auto& fig = scene.figures[k];
      core::write_png(root / "parsing" / scene.id / (std::to_string(k) + ".png"), figure_labels(scene.size, fig.body));
      sets.push_back(fig.face ? figure_face(fig.body) : core::KeypointSet{});
    }
    core::write_keypoints(root / "keypoints" / (scene.id + ".json"), sets);
  }
}

std::vector<SceneSpec> mini_dataset() {
  return {
      {"s000", {128, 128}, {{{10, 20, 30, 96}, true, 1}, {{60, 16, 34, 104}, true, 2}}},
      {"s001", {128, 128}, {{{20, 24, 28, 90}, true, 3}, {{70, 30, 26, 84}, false, 4}, {{96, 20, 28, 100}, true, 5}}},
      {"s002", {128, 128}, {{{40, 12, 40, 110}, true, 6}}},
      {"s003", {128, 128}, {{{8, 30, 24, 80}, true, 7}, {{50, 26, 28, 88}, false, 8}, {{88, 22, 30, 96}, true, 9}}},
      {"s004", {128, 128}, {{{30, 18, 30, 100}, true, 10}, {{74, 24, 30, 92}, true, 11}}},
  };
}

SceneSpec single_figure() { return {"solo", {128, 128}, {{{40, 10, 44, 112}, true, 21}}}; }

SceneSpec held_out_pair() {
  return {"pair", {96, 96}, {{{8, 14, 26, 76}, false, 31}, {{52, 10, 30, 82}, true, 32}}};
}

Fixture scene_fixture(const SceneSpec& scene) {
  const auto palette = core::LabelPalette::multi_human_parsing();
  std::vector<core::SemanticMap> persons;
  std::vector<core::KeypointSet> sets;
  for (const auto& fig : scene.figures) {
    persons.push_back(core::reduce_labels(figure_labels(scene.size, fig.body), palette));
    sets.push_back(fig.face ? figure_face(fig.body) : core::KeypointSet{});
  }
  return {scene_rgb(scene), core::compose_scene(persons, sets)};
}

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("hi_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace hi::testing
