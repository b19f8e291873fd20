#include "hi/mcrn/mcrn.hpp"

#include <cmath>

#include "hi/core/encoding.hpp"
#include "hi/core/error.hpp"
#include "hi/core/palette.hpp"
#include "hi/nn/losses.hpp"

namespace hi::mcrn {
namespace F = torch::nn::functional;

namespace {

void check_finite(const nn::LossReport& report) {
  for (const auto& [name, value] : report.components) {
    if (!std::isfinite(value)) {
      throw Error(ErrorCode::kNonFinite,
                  "MCRN step produced non-finite " + name + ": " + report.to_json().dump());
    }
  }
}

torch::Tensor to_size(const torch::Tensor& x, int64_t size) {
  if (x.size(-1) == size && x.size(-2) == size) return x;
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<int64_t>{size, size})
                               .mode(torch::kBilinear)
                               .align_corners(false));
}

std::shared_ptr<const nn::FeatureBackend> perceptual_backend(const McrnConfig& c) {
  if (!c.perceptual_model.empty()) return std::make_shared<nn::TorchScriptBackend>(c.perceptual_model);
  return std::make_shared<nn::RandomConvBackend>(c.perceptual_seed);
}

}  // namespace

McrnConfig McrnConfig::full() { return {}; }

McrnConfig McrnConfig::desk() {
  McrnConfig c;
  c.resolution = 128;
  c.encoder_widths = {16, 32, 64, 128, 128};
  c.bottleneck_channels = 128;
  c.decoder_widths = {128, 64, 32, 32, 16};
  c.spade_hidden = 32;
  c.bank.patch.base_width = 16;
  return c;
}

nlohmann::json McrnConfig::to_json() const {
  return {{"resolution", resolution},
          {"encoder_widths", encoder_widths},
          {"latent", latent},
          {"bottleneck_channels", bottleneck_channels},
          {"decoder_widths", decoder_widths},
          {"spade_hidden", spade_hidden},
          {"discriminator",
           {{"base_width", bank.patch.base_width}, {"layers", bank.patch.layers}, {"count", bank.count}}},
          {"weights", weights.to_json()},
          {"lr", lr},
          {"beta1", beta1},
          {"beta2", beta2},
          {"seed", seed},
          {"perceptual_model", perceptual_model},
          {"perceptual_seed", perceptual_seed}};
}

McrnConfig McrnConfig::from_json(const nlohmann::json& doc) {
  McrnConfig c = doc.value("preset", std::string("full")) == "desk" ? desk() : full();
  c.resolution = doc.value("resolution", c.resolution);
  c.encoder_widths = doc.value("encoder_widths", c.encoder_widths);
  c.latent = doc.value("latent", c.latent);
  c.bottleneck_channels = doc.value("bottleneck_channels", c.bottleneck_channels);
  c.decoder_widths = doc.value("decoder_widths", c.decoder_widths);
  c.spade_hidden = doc.value("spade_hidden", c.spade_hidden);
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
  c.perceptual_model = doc.value("perceptual_model", c.perceptual_model);
  c.perceptual_seed = doc.value("perceptual_seed", c.perceptual_seed);
  return c;
}

AppearanceEncoderImpl::AppearanceEncoderImpl(const McrnConfig& config)
    : bottleneck_channels_(config.bottleneck_channels) {
  if (static_cast<int64_t>(config.encoder_widths.size()) != config.encoder_stages ||
      config.encoder_stages != 5) {
    throw Error(ErrorCode::kValidation, "the appearance encoder has exactly five stages");
  }
  convs_ = register_module("convs", torch::nn::Sequential());
  int64_t in = kAppearanceChannels;
  for (int64_t width : config.encoder_widths) {
    convs_->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(in, width, 4).stride(2).padding(1)));
    convs_->push_back(torch::nn::InstanceNorm2d(torch::nn::InstanceNorm2dOptions(width)));
    convs_->push_back(torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2)));
    in = width;
  }
  const int64_t side = core::kPartSize >> config.encoder_stages;
  to_latent_ = register_module("to_latent", torch::nn::Linear(in * side * side, config.latent));
  to_bottleneck_ =
      register_module("to_bottleneck", torch::nn::Linear(config.latent, config.bottleneck_channels * 16));
}

torch::Tensor AppearanceEncoderImpl::encode(const torch::Tensor& t) {
  return torch::leaky_relu(to_latent_->forward(convs_->forward(t).flatten(1)), 0.2);
}

torch::Tensor AppearanceEncoderImpl::project(const torch::Tensor& latent) {
  return to_bottleneck_->forward(latent).view({-1, bottleneck_channels_, 4, 4});
}

PoseDecoderImpl::PoseDecoderImpl(const McrnConfig& config) {
  if ((int64_t{4} << config.decoder_stages()) != config.resolution) {
    throw Error(ErrorCode::kValidation, "decoder stages must take 4x4 to the model resolution");
  }
  head_ = register_module("head", nn::SpadeResBlock(config.bottleneck_channels, config.bottleneck_channels,
                                                    kLabelChannels, config.spade_hidden));
  int64_t in = config.bottleneck_channels;
  for (std::size_t i = 0; i < config.decoder_widths.size(); ++i) {
    const int64_t out = config.decoder_widths[i];
    stages_.push_back(register_module("up_" + std::to_string(i),
                                      nn::SpadeResBlock(in, out, kLabelChannels, config.spade_hidden)));
    in = out;
  }
  to_z_ = register_module("to_z", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, 3, 3).padding(1)));
  to_m_ = register_module("to_m", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, 1, 3).padding(1)));
}

DecoderOutput PoseDecoderImpl::forward(const torch::Tensor& bottleneck, const torch::Tensor& label) {
  auto h = head_->forward(bottleneck, label);
  for (auto& stage : stages_) {
    h = F::interpolate(h, F::InterpolateFuncOptions()
                              .scale_factor(std::vector<double>{2.0, 2.0})
                              .mode(torch::kNearest));
    h = stage->forward(h, label);
  }
  h = torch::leaky_relu(h, 0.2);
  return {torch::tanh(to_z_->forward(h)), torch::sigmoid(to_m_->forward(h))};
}

torch::Tensor pose_label(const core::PersonPose& pose) {
  const cv::Mat& s = pose.semantic.pixels();
  const auto codes = torch::from_blob(const_cast<uchar*>(s.data), {s.rows, s.cols}, torch::kUInt8)
                         .to(torch::kLong)
                         .div(core::kCodeStep, "floor");
  auto label = F::one_hot(codes, core::kGroupCount).permute({2, 0, 1}).to(torch::kFloat32);
  const cv::Mat& f = pose.face.pixels();
  const auto face = torch::from_blob(const_cast<uchar*>(f.data), {1, f.rows, f.cols}, torch::kUInt8)
                        .to(torch::kFloat32)
                        .div(255.0);
  return torch::cat({label, face}, 0);
}

torch::Tensor stack_appearance(const core::AppearanceTensor& t) {
  return t.parts.reshape({kAppearanceChannels, core::kPartSize, core::kPartSize});
}

torch::Tensor composite(const torch::Tensor& x, const torch::Tensor& z, const torch::Tensor& m) {
  if (x.sizes() != z.sizes() || m.size(-1) != x.size(-1) || m.size(-2) != x.size(-2)) {
    throw Error(ErrorCode::kShapeMismatch, "composite needs x, z, m of one spatial size");
  }
  if (m.numel() > 0 && (m.min().item<double>() < 0.0 || m.max().item<double>() > 1.0)) {
    throw Error(ErrorCode::kValidation, "blending mask leaves [0, 1]");
  }
  return x * (1 - m) + z * m;
}

double masked_l1(const torch::Tensor& a, const torch::Tensor& b, const torch::Tensor& mask) {
  const auto weights = mask.expand_as(a).to(torch::kFloat64);
  const double count = weights.sum().item<double>();
  if (count == 0.0) return 0.0;
  return ((a.to(torch::kFloat64) - b.to(torch::kFloat64)).abs() * weights).sum().item<double>() / count;
}

McrnModel::McrnModel(const McrnConfig& config) : config_(config) {
  config_.bank.patch.in_channels = kAppearanceChannels + kLabelChannels + 3;
  torch::manual_seed(config_.seed);
  encoder_ = AppearanceEncoder(config_);
  decoder_ = PoseDecoder(config_);
  bank_ = nn::DiscriminatorBank(config_.bank);
  perceptual_ = nn::PerceptualExtractor(perceptual_backend(config_));
  std::vector<torch::Tensor> g_params = encoder_->parameters();
  for (auto& p : decoder_->parameters()) g_params.push_back(p);
  const auto options = torch::optim::AdamOptions(config_.lr).betas({config_.beta1, config_.beta2});
  opt_g_ = std::make_unique<torch::optim::Adam>(g_params, options);
  opt_d_ = std::make_unique<torch::optim::Adam>(bank_->parameters(), options);
}

void McrnModel::check_pose(const core::PersonPose& p) const {
  if (p.semantic.size() != cv::Size(static_cast<int>(config_.resolution), static_cast<int>(config_.resolution))) {
    throw Error(ErrorCode::kShapeMismatch,
                "pose must be " + std::to_string(config_.resolution) + " pixels square for this model");
  }
}

DecoderOutput McrnModel::forward(const torch::Tensor& t_stack, const torch::Tensor& label) {
  return decoder_->forward(encoder_->forward(t_stack), label);
}

RenderResult McrnModel::render(const core::AppearanceTensor& t, const core::PersonPose& p) {
  check_pose(p);
  torch::NoGradGuard no_grad;
  const auto out = forward(stack_appearance(t).unsqueeze(0), pose_label(p).unsqueeze(0));
  return {out.z[0], out.m[0]};
}

nn::LossReport McrnModel::training_step(std::span<const McrnSample> batch) {
  if (batch.empty()) throw Error(ErrorCode::kValidation, "empty MCRN batch");
  std::vector<torch::Tensor> xs, ts, labels, binaries;
  for (const auto& sample : batch) {
    check_pose(sample.p);
    xs.push_back(sample.x);
    ts.push_back(stack_appearance(sample.t));
    labels.push_back(pose_label(sample.p));
    const cv::Mat pb = core::binarize_pose(sample.p);
    binaries.push_back(torch::from_blob(const_cast<uchar*>(pb.data), {1, pb.rows, pb.cols}, torch::kUInt8)
                           .to(torch::kFloat32));
  }
  const auto x = torch::stack(xs);
  const auto t = torch::stack(ts);
  const auto label = torch::stack(labels);
  const auto pb = torch::stack(binaries);
  const auto& w = config_.weights;

  const auto out = forward(t, label);
  const auto o = x * (1 - out.m) + out.z * out.m;
  const auto zb = out.z * pb;
  const auto xb = x * pb;
  const auto condition = torch::cat({to_size(t, config_.resolution), label}, 1);

  nn::BankActivations real_bank;
  {
    torch::NoGradGuard no_grad;
    real_bank = bank_->forward(torch::cat({condition, xb}, 1));
  }
  const auto fake_bank = bank_->forward(torch::cat({condition, zb}, 1));
  const auto adv_g = nn::hinge_g(nn::patch_outputs(fake_bank));
  const auto fm_d =
      nn::fm_discriminator(nn::intermediate_features(real_bank), nn::intermediate_features(fake_bank));
  const auto fm_p = nn::fm_perceptual(x, o, perceptual_);
  const auto mask_l1 = nn::l1(out.m, pb);
  const auto mask_grad = nn::grad_l1(out.m);
  const auto recon_l1 = nn::l1(zb, xb);
  const auto recon_grad = nn::grad_l1(zb, xb);
  const auto loss_g = w.adversarial * adv_g + w.fm_discriminator * fm_d + w.fm_perceptual * fm_p +
                      w.mask_l1 * mask_l1 + w.mask_grad * mask_grad + w.recon_l1 * recon_l1 +
                      w.recon_grad * recon_grad;

  nn::LossReport report;
  report.set("adversarial_g", adv_g.item<double>(), w.adversarial);
  report.set("fm_discriminator", fm_d.item<double>(), w.fm_discriminator);
  report.set("fm_perceptual", fm_p.item<double>(), w.fm_perceptual);
  report.set("mask_l1", mask_l1.item<double>(), w.mask_l1);
  report.set("mask_grad", mask_grad.item<double>(), w.mask_grad);
  report.set("recon_l1", recon_l1.item<double>(), w.recon_l1);
  report.set("recon_grad", recon_grad.item<double>(), w.recon_grad);
  check_finite(report);

  opt_g_->zero_grad();
  loss_g.backward();
  opt_g_->step();

  const auto real_out = nn::patch_outputs(bank_->forward(torch::cat({condition, xb}, 1)));
  const auto fake_out = nn::patch_outputs(bank_->forward(torch::cat({condition, zb.detach()}, 1)));
  const auto adv_d = nn::hinge_d(real_out, fake_out);
  report.set("adversarial_d", adv_d.item<double>(), w.adversarial);
  check_finite(report);
  opt_d_->zero_grad();
  (w.adversarial * adv_d).backward();
  opt_d_->step();

  report.set("monitor_masked_l1", masked_l1(o.detach(), x, pb), 0.0);
  report.finalize();
  return report;
}

void McrnModel::write_state(nn::Checkpoint& ckpt) const {
  ckpt.header["network"] = "mcrn";
  ckpt.header["resolution"] = config_.resolution;
  ckpt.header["stages"] = config_.decoder_stages();
  ckpt.header["config"] = config_.to_json();
  ckpt.put_module("encoder", *encoder_);
  ckpt.put_module("decoder", *decoder_);
  ckpt.put_module("discriminator", *bank_);
  ckpt.put_optimizer("opt_g", *opt_g_);
  ckpt.put_optimizer("opt_d", *opt_d_);
}

void McrnModel::read_state(const nn::Checkpoint& ckpt) {
  if (ckpt.header.value("network", std::string()) != "mcrn") {
    throw Error(ErrorCode::kValidation, "checkpoint does not hold an MCRN");
  }
  ckpt.get_module("encoder", *encoder_);
  ckpt.get_module("decoder", *decoder_);
  ckpt.get_module("discriminator", *bank_);
  if (ckpt.blobs.count("opt_g")) ckpt.get_optimizer("opt_g", *opt_g_);
  if (ckpt.blobs.count("opt_d")) ckpt.get_optimizer("opt_d", *opt_d_);
}

void McrnModel::save(const std::filesystem::path& path, const nlohmann::json& extra) const {
  nn::Checkpoint ckpt;
  if (extra.is_object()) ckpt.header.update(extra);
  write_state(ckpt);
  ckpt.save(path);
}

McrnModel McrnModel::load(const std::filesystem::path& path) {
  const auto ckpt = nn::Checkpoint::load(path);
  McrnModel model(McrnConfig::from_json(ckpt.header.at("config")));
  model.read_state(ckpt);
  return model;
}

core::AppearanceTensor replace_component(const cv::Mat& person_rgb, const core::SemanticMap& person_parse,
                                         const cv::Mat& donor_rgb, const core::SemanticMap& donor_parse,
                                         std::span<const core::Part> parts_to_swap) {
  const auto donor_masks = core::part_masks(donor_parse);
  for (core::Part part : parts_to_swap) {
    if (cv::countNonZero(donor_masks[static_cast<int>(part)]) == 0) {
      throw Error(ErrorCode::kValidation,
                  "donor lacks requested part " + std::to_string(static_cast<int>(part)));
    }
  }
  const auto masks = core::part_masks(person_parse);
  bool person_has_parts = false;
  for (const auto& m : masks) person_has_parts |= cv::countNonZero(m) > 0;
  core::AppearanceTensor result =
      person_has_parts ? core::build_appearance_tensor(person_rgb, masks)
                       : core::AppearanceTensor{torch::zeros({core::kPartCount, 3, core::kPartSize, core::kPartSize}),
                                                {}};
  if (parts_to_swap.empty()) return result;
  const auto donor = core::build_appearance_tensor(donor_rgb, donor_masks);
  for (core::Part part : parts_to_swap) {
    const int i = static_cast<int>(part);
    result.parts[i].copy_(donor.parts[i]);
    result.present[i] = donor.present[i];
  }
  return result;
}

}  // namespace hi::mcrn
