#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>
#include <torch/types.h>

#include "hi/core/appearance.hpp"
#include "hi/core/maps.hpp"
#include "hi/egn/egn.hpp"
#include "hi/frn/frn.hpp"
#include "hi/mcrn/mcrn.hpp"
#include "hi/pipeline/dataset.hpp"

namespace hi::pipeline {

enum class Network { kEgn, kEgnPrime, kMcrn, kFrn };
std::string to_string(Network net);
/// Accepts egn, egn-prime (or egn_prime), mcrn, frn.
Network network_from_string(const std::string& name);

struct Schedule {
  int epochs = 1;
  int batch_size = 1;
  /// Stops early when positive.
  std::int64_t max_steps = 0;
};

/// Optional early stop on a report component, e.g. "monitor_masked_l1".
struct StopRule {
  std::string component;
  double below = 0.0;
  /// Consecutive steps the condition has to hold.
  int patience = 1;
};

struct RunConfig {
  std::string preset = "desk";
  egn::EgnConfig egn = egn::EgnConfig::desk(egn::Variant::kWithBBox);
  egn::EgnConfig egn_prime = egn::EgnConfig::desk(egn::Variant::kWithoutBBox);
  mcrn::McrnConfig mcrn = mcrn::McrnConfig::desk();
  frn::FrnConfig frn = frn::FrnConfig::desk();
  Schedule egn_schedule{.epochs = 50, .batch_size = 4};
  Schedule mcrn_schedule{.epochs = 50, .batch_size = 2};
  Schedule frn_schedule{.epochs = 50, .batch_size = 4};
  std::optional<StopRule> stop;
  std::uint64_t seed = 0;
  std::int64_t checkpoint_every = 500;
  std::filesystem::path out_dir = "runs";
  bool resume = true;

  static RunConfig desk();
  /// EGN 300 epochs at batch 64, MCRN 200 epochs at batch 32.
  static RunConfig full();
  nlohmann::json to_json() const;
  /// Starts from the preset named in "preset" and applies the other keys.
  static RunConfig from_json(const nlohmann::json& doc);
  static RunConfig load(const std::filesystem::path& path);
  const Schedule& schedule(Network net) const;
};

/// Uniform draws in [0, 1).
using UniformSource = std::function<double()>;

/// Box with height and vertical centre scaled by independent draws in
/// [0.9, 1.1] (width follows the height), horizontal centre uniform over the
/// frame, clipped to the frame. Throws Error(kEmptyPerson) for an empty
/// reference box.
core::BBoxChannel sample_inference_bbox(const core::Box& reference, cv::Size frame, const UniformSource& rng);

struct TrainResult {
  std::int64_t steps = 0;
  std::int64_t first_step = 1;
  std::filesystem::path checkpoint;
  std::filesystem::path log;
  nlohmann::json last_report;
  bool stopped_early = false;
};

/// Per-step callback; return false to stop.
using StepObserver = std::function<bool(std::int64_t step, const nn::LossReport& report)>;

/// Trains one network on the index. Writes <out_dir>/<net>/log.ndjson (one
/// record per step), periodic step_<n>.ckpt files and latest.ckpt. With
/// resume set and latest.ckpt present, continues from the stored step with
/// the stored sampler state. A non-finite loss writes abort.ckpt and
/// rethrows Error(kNonFinite).
TrainResult train(Network net, const RunConfig& config, const DatasetIndex& index,
                  const StepObserver& observer = {});

struct Models {
  std::shared_ptr<egn::EgnModel> egn;
  std::shared_ptr<mcrn::McrnModel> mcrn;
  std::shared_ptr<frn::FrnModel> frn;
};

struct InsertionRequest {
  cv::Mat scene_rgb;  // CV_8UC3
  core::SceneParse scene;
  cv::Mat target_rgb;
  core::SemanticMap target_parse;
  core::KeypointSet target_keypoints;
  std::optional<core::Box> bbox;  // scene pixel coordinates
  bool skip_frn = false;
  std::uint64_t seed = 0;
};

struct InsertionResult {
  core::PersonPose p;  // at the EGN resolution
  core::AppearanceTensor t;
  torch::Tensor x;  // scene at the rendering resolution
  torch::Tensor z;
  torch::Tensor m;
  torch::Tensor o;
  torch::Tensor w;
  std::optional<core::Box> bbox;
  std::optional<core::Box> face_box;  // at the rendering resolution
  int retries = 0;
  bool refined = false;
};

inline constexpr int kMaxBoxResamples = 3;

/// EGN -> MCRN -> FRN. Sampled boxes are redrawn up to kMaxBoxResamples
/// times when the EGN output holds no person; after that, or at once for a
/// caller-given box, Error(kEmptyGeneration) is thrown. The request is not
/// modified.
InsertionResult insert_person(const Models& models, const InsertionRequest& request);

/// Rendering-resolution scene tensor (bilinear resize of the RGB image).
torch::Tensor scene_tensor(const cv::Mat& rgb, int64_t size);

}  // namespace hi::pipeline
