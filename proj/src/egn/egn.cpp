#include "hi/egn/egn.hpp"

#include <cmath>

#include <opencv2/imgproc.hpp>

#include "hi/core/encoding.hpp"
#include "hi/core/error.hpp"
#include "hi/nn/losses.hpp"

namespace hi::egn {
namespace {

using core::BinaryChannel;
using core::SemanticMap;

int pose_channels() { return 2; }

nn::GlobalGeneratorOptions generator_for(Variant v, nn::GlobalGeneratorOptions g) {
  g.in_channels = input_channels(v);
  g.out_channels = pose_channels();
  return g;
}

nn::DiscriminatorBankOptions bank_for(Variant v, nn::DiscriminatorBankOptions b) {
  b.patch.in_channels = input_channels(v) + pose_channels();
  return b;
}

void check_finite(const nn::LossReport& report) {
  for (const auto& [name, value] : report.components) {
    if (!std::isfinite(value)) {
      throw Error(ErrorCode::kNonFinite,
                  "EGN step produced non-finite " + name + ": " + report.to_json().dump());
    }
  }
}

}  // namespace

int input_channels(Variant variant) { return variant == Variant::kWithoutBBox ? 2 : 3; }

std::string to_string(Variant variant) {
  switch (variant) {
    case Variant::kWithBBox: return "with_bbox";
    case Variant::kWithoutBBox: return "without_bbox";
    case Variant::kPoseTransfer: return "pose_transfer";
  }
  return "unknown";
}

Variant variant_from_string(const std::string& name) {
  if (name == "with_bbox" || name == "egn") return Variant::kWithBBox;
  if (name == "without_bbox" || name == "egn-prime" || name == "egn_prime") return Variant::kWithoutBBox;
  if (name == "pose_transfer") return Variant::kPoseTransfer;
  throw Error(ErrorCode::kValidation, "unknown EGN variant " + name);
}

EgnConfig EgnConfig::full(Variant variant) {
  EgnConfig c;
  c.variant = variant;
  c.generator = generator_for(variant, c.generator);
  c.bank = bank_for(variant, c.bank);
  return c;
}

EgnConfig EgnConfig::desk(Variant variant) {
  EgnConfig c;
  c.variant = variant;
  c.resolution = 96;
  c.generator = generator_for(variant, {.base_width = 16, .downsamples = 2, .residual_blocks = 3,
                                        .max_width = 128});
  c.bank = bank_for(variant, {.patch = {.base_width = 16, .layers = 3}, .count = 2});
  return c;
}

nlohmann::json EgnConfig::to_json() const {
  return {{"variant", to_string(variant)},
          {"resolution", resolution},
          {"generator",
           {{"base_width", generator.base_width},
            {"downsamples", generator.downsamples},
            {"residual_blocks", generator.residual_blocks},
            {"max_width", generator.max_width}}},
          {"discriminator",
           {{"base_width", bank.patch.base_width}, {"layers", bank.patch.layers}, {"count", bank.count}}},
          {"weights", weights.to_json()},
          {"lr", lr},
          {"beta1", beta1},
          {"beta2", beta2},
          {"seed", seed}};
}

EgnConfig EgnConfig::from_json(const nlohmann::json& doc) {
  const Variant v = variant_from_string(doc.value("variant", std::string("with_bbox")));
  EgnConfig c = doc.value("preset", std::string("full")) == "desk" ? desk(v) : full(v);
  c.resolution = doc.value("resolution", c.resolution);
  if (doc.contains("generator")) {
    const auto& g = doc.at("generator");
    c.generator.base_width = g.value("base_width", c.generator.base_width);
    c.generator.downsamples = g.value("downsamples", c.generator.downsamples);
    c.generator.residual_blocks = g.value("residual_blocks", c.generator.residual_blocks);
    c.generator.max_width = g.value("max_width", c.generator.max_width);
  }
  if (doc.contains("discriminator")) {
    const auto& d = doc.at("discriminator");
    c.bank.patch.base_width = d.value("base_width", c.bank.patch.base_width);
    c.bank.patch.layers = d.value("layers", c.bank.patch.layers);
    c.bank.count = d.value("count", c.bank.count);
  }
  if (doc.contains("weights")) c.weights = nn::LossWeights::from_json(doc.at("weights"));
  c.lr = doc.value("lr", c.lr);
  c.beta1 = doc.value("beta1", c.beta1);
  c.beta2 = doc.value("beta2", c.beta2);
  c.seed = doc.value("seed", c.seed);
  return c;
}

EgnInput build_egn_input(const core::SceneParse& scene, std::optional<int> heldout,
                         const BBoxMode& mode, int resolution, std::string scene_id) {
  const cv::Size size = scene.size();
  const int n = static_cast<int>(scene.persons.size());
  if (heldout) {
    const int k = *heldout;
    if (k < 0 || k >= n) throw Error(ErrorCode::kOutOfRange, "held-out person does not exist");
    if (scene.persons[k].empty()) {
      throw Error(ErrorCode::kSampleRejected, "held-out person has an empty mask");
    }
    const auto& kp = scene.keypoints[k];
    if (core::face_hull_channel(std::span<const core::KeypointSet>(&kp, 1), size).channel.empty()) {
      throw Error(ErrorCode::kSampleRejected, "held-out person has no detected facial keypoints");
    }
  }
  if (std::holds_alternative<TrainTight>(mode) && !heldout) {
    throw Error(ErrorCode::kValidation, "tight training boxes need a held-out person");
  }

  cv::Mat semantic = cv::Mat::zeros(size, CV_8UC1);
  std::vector<core::KeypointSet> faces;
  for (int i = 0; i < n; ++i) {
    if (heldout && i == *heldout) continue;
    scene.persons[i].pixels().copyTo(semantic, scene.persons[i].pixels());
    faces.push_back(scene.keypoints[i]);
  }
  std::optional<core::Box> box;
  if (std::holds_alternative<TrainTight>(mode)) {
    box = core::bbox_from_labels(scene.persons[*heldout].pixels()).box;
  } else if (const auto* given = std::get_if<InferenceBox>(&mode)) {
    box = given->box;
  }
  auto input = build_egn_input(SemanticMap(semantic), core::face_hull_channel(faces, size).channel, box,
                               resolution);
  input.scene_id = std::move(scene_id);
  input.heldout = heldout;
  return input;
}

EgnInput build_egn_input(const core::SemanticMap& semantic, const core::FaceChannel& face,
                         const std::optional<core::Box>& box, int resolution) {
  if (semantic.size() != face.size()) {
    throw Error(ErrorCode::kShapeMismatch, "semantic and face channels differ in size");
  }
  const cv::Size target(resolution, resolution);
  std::vector<torch::Tensor> channels = {core::encode_semantic(core::resize_nearest(semantic, target)),
                                         core::encode_binary(core::resize_nearest(face, target))};
  if (box) {
    const auto rendered = core::render_box(*box, semantic.size());
    channels.push_back(core::encode_binary(core::resize_nearest(rendered.channel, target)));
  }
  return {torch::stack(channels), box ? Variant::kWithBBox : Variant::kWithoutBBox, {}, std::nullopt};
}

EgnSample build_egn_sample(const core::SceneParse& scene, int heldout, bool with_bbox,
                           int resolution, std::string scene_id) {
  const BBoxMode mode = with_bbox ? BBoxMode{TrainTight{}} : BBoxMode{NoBox{}};
  auto input = build_egn_input(scene, heldout, mode, resolution, std::move(scene_id));
  auto target = core::resize_nearest(core::person_pose(scene, heldout), cv::Size(resolution, resolution));
  return {std::move(input), std::move(target)};
}

cv::Mat rasterize_skeleton(const Skeleton& skeleton, cv::Size size) {
  if (const auto* stick = std::get_if<StickSkeleton>(&skeleton)) {
    cv::Mat canvas = cv::Mat::zeros(size, CV_8UC1);
    for (const auto& [a, b] : stick->limbs) {
      if (a < 0 || b < 0 || a >= static_cast<int>(stick->joints.size()) ||
          b >= static_cast<int>(stick->joints.size())) {
        throw Error(ErrorCode::kValidation, "limb references a missing joint");
      }
      const cv::Point pa(static_cast<int>(std::lround(stick->joints[a].x)),
                         static_cast<int>(std::lround(stick->joints[a].y)));
      const cv::Point pb(static_cast<int>(std::lround(stick->joints[b].x)),
                         static_cast<int>(std::lround(stick->joints[b].y)));
      cv::line(canvas, pa, pb, cv::Scalar(255), 1, cv::LINE_8);
    }
    return canvas;
  }
  const auto& dense = std::get<DenseSkeleton>(skeleton);
  if (dense.indices.type() != CV_8UC1) throw Error(ErrorCode::kValidation, "dense skeleton must be 8-bit");
  double max_value = 0;
  cv::minMaxLoc(dense.indices, nullptr, &max_value);
  if (max_value > 24) throw Error(ErrorCode::kValidation, "dense skeleton index above 24");
  cv::Mat scaled = dense.indices * 10;
  if (scaled.size() != size) cv::resize(scaled, scaled, size, 0, 0, cv::INTER_NEAREST_EXACT);
  return scaled;
}

EgnInput build_pose_transfer_input(const core::SemanticMap& source, const Skeleton& source_skeleton,
                                   const Skeleton& target_skeleton, int resolution) {
  if (source_skeleton.index() != target_skeleton.index()) {
    throw Error(ErrorCode::kValidation, "source and target skeletons must be of the same kind");
  }
  const cv::Size target(resolution, resolution);
  const auto raster = [&](const Skeleton& s) {
    cv::Mat r = rasterize_skeleton(s, source.size());
    cv::resize(r, r, target, 0, 0, cv::INTER_NEAREST_EXACT);
    return torch::from_blob(r.data, {resolution, resolution}, torch::kUInt8)
        .to(torch::kFloat32)
        .div(127.5)
        .sub(1.0);
  };
  std::vector<torch::Tensor> channels = {
      core::encode_semantic(core::resize_nearest(source, target)), raster(source_skeleton),
      raster(target_skeleton)};
  return {torch::stack(channels), Variant::kPoseTransfer, {}, std::nullopt};
}

EgnModel::EgnModel(const EgnConfig& config) : config_(config) {
  config_.generator = generator_for(config_.variant, config_.generator);
  config_.bank = bank_for(config_.variant, config_.bank);
  // Perceptual feature matching is off for pose generation regardless of
  // what the caller configured.
  config_.weights.fm_perceptual = 0.0;
  torch::manual_seed(config_.seed);
  generator_ = nn::GlobalGenerator(config_.generator);
  bank_ = nn::DiscriminatorBank(config_.bank);
  opt_g_ = std::make_unique<torch::optim::Adam>(
      generator_->parameters(),
      torch::optim::AdamOptions(config_.lr).betas({config_.beta1, config_.beta2}));
  opt_d_ = std::make_unique<torch::optim::Adam>(
      bank_->parameters(), torch::optim::AdamOptions(config_.lr).betas({config_.beta1, config_.beta2}));
}

void EgnModel::check_input(const torch::Tensor& tensor, Variant variant) const {
  if (variant != config_.variant || tensor.size(-3) != input_channels(config_.variant)) {
    throw Error(ErrorCode::kVariantMismatch, "input variant " + to_string(variant) +
                                                 " does not match model variant " +
                                                 to_string(config_.variant));
  }
  if (tensor.size(-1) != config_.resolution || tensor.size(-2) != config_.resolution) {
    throw Error(ErrorCode::kShapeMismatch, "EGN input must be " + std::to_string(config_.resolution) +
                                               " pixels square");
  }
}

torch::Tensor EgnModel::forward_raw(const torch::Tensor& batch) { return generator_->forward(batch); }

core::PersonPose EgnModel::generate(const EgnInput& input) {
  check_input(input.tensor, input.variant);
  torch::NoGradGuard no_grad;
  const auto raw = forward_raw(input.tensor.unsqueeze(0));
  return core::discretize_pose(raw[0]);
}

nn::LossReport EgnModel::training_step(std::span<const EgnSample> batch) {
  if (batch.empty()) throw Error(ErrorCode::kValidation, "empty EGN batch");
  std::vector<torch::Tensor> inputs;
  std::vector<torch::Tensor> targets;
  for (const auto& sample : batch) {
    check_input(sample.input.tensor, sample.input.variant);
    inputs.push_back(sample.input.tensor);
    targets.push_back(core::encode_pose(sample.target));
  }
  const auto x = torch::stack(inputs);
  const auto real = torch::stack(targets);
  const auto& w = config_.weights;

  const auto fake = generator_->forward(x);

  nn::BankActivations real_bank;
  {
    torch::NoGradGuard no_grad;
    real_bank = bank_->forward(torch::cat({x, real}, 1));
  }
  const auto fake_bank = bank_->forward(torch::cat({x, fake}, 1));
  const auto adv_g = nn::hinge_g(nn::patch_outputs(fake_bank));
  const auto fm_d = nn::fm_discriminator(nn::intermediate_features(real_bank),
                                         nn::intermediate_features(fake_bank));
  const auto pose_grad = nn::grad_l1(fake.select(1, 0));
  const auto loss_g = w.adversarial * adv_g + w.fm_discriminator * fm_d + w.pose_grad * pose_grad;

  nn::LossReport report;
  report.set("adversarial_g", adv_g.item<double>(), w.adversarial);
  report.set("fm_discriminator", fm_d.item<double>(), w.fm_discriminator);
  report.set("fm_perceptual", 0.0, 0.0);
  report.set("pose_grad", pose_grad.item<double>(), w.pose_grad);
  check_finite(report);

  opt_g_->zero_grad();
  loss_g.backward();
  opt_g_->step();

  const auto real_out = nn::patch_outputs(bank_->forward(torch::cat({x, real}, 1)));
  const auto fake_out = nn::patch_outputs(bank_->forward(torch::cat({x, fake.detach()}, 1)));
  const auto adv_d = nn::hinge_d(real_out, fake_out);
  report.set("adversarial_d", adv_d.item<double>(), w.adversarial);
  check_finite(report);
  opt_d_->zero_grad();
  (w.adversarial * adv_d).backward();
  opt_d_->step();

  report.finalize();
  return report;
}

void EgnModel::write_state(nn::Checkpoint& ckpt) const {
  ckpt.header["network"] = "egn";
  ckpt.header["variant"] = to_string(config_.variant);
  ckpt.header["resolution"] = config_.resolution;
  ckpt.header["config"] = config_.to_json();
  ckpt.put_module("generator", *generator_);
  ckpt.put_module("discriminator", *bank_);
  ckpt.put_optimizer("opt_g", *opt_g_);
  ckpt.put_optimizer("opt_d", *opt_d_);
}

void EgnModel::read_state(const nn::Checkpoint& ckpt) {
  if (ckpt.header.value("network", std::string()) != "egn") {
    throw Error(ErrorCode::kValidation, "checkpoint does not hold an EGN");
  }
  ckpt.get_module("generator", *generator_);
  ckpt.get_module("discriminator", *bank_);
  if (ckpt.blobs.count("opt_g")) ckpt.get_optimizer("opt_g", *opt_g_);
  if (ckpt.blobs.count("opt_d")) ckpt.get_optimizer("opt_d", *opt_d_);
}

void EgnModel::save(const std::filesystem::path& path, const nlohmann::json& extra) const {
  nn::Checkpoint ckpt;
  if (extra.is_object()) ckpt.header.update(extra);
  write_state(ckpt);
  ckpt.save(path);
}

EgnModel EgnModel::load(const std::filesystem::path& path) {
  const auto ckpt = nn::Checkpoint::load(path);
  EgnModel model(EgnConfig::from_json(ckpt.header.at("config")));
  model.read_state(ckpt);
  return model;
}

}  // namespace hi::egn
