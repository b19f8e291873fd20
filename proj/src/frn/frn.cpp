#include "hi/frn/frn.hpp"

#include <cmath>

#include <ATen/CPUGeneratorImpl.h>
#include <torch/script.h>

#include "hi/core/encoding.hpp"
#include "hi/core/error.hpp"
#include "hi/nn/losses.hpp"

namespace hi::frn {
namespace F = torch::nn::functional;

namespace {

torch::Tensor resize_bilinear(const torch::Tensor& nchw, int64_t h, int64_t w) {
  if (nchw.size(-2) == h && nchw.size(-1) == w) return nchw;
  return F::interpolate(nchw, F::InterpolateFuncOptions()
                                  .size(std::vector<int64_t>{h, w})
                                  .mode(torch::kBilinear)
                                  .align_corners(false));
}

int64_t stages_for(int64_t face_size) {
  int64_t stages = 0;
  for (int64_t s = face_size; s > 4; s /= 2) {
    if (s % 2 != 0) throw Error(ErrorCode::kValidation, "face size must be 4 times a power of two");
    ++stages;
  }
  return stages;
}

void check_finite(const nn::LossReport& report) {
  for (const auto& [name, value] : report.components) {
    if (!std::isfinite(value)) {
      throw Error(ErrorCode::kNonFinite,
                  "FRN step produced non-finite " + name + ": " + report.to_json().dump());
    }
  }
}

}  // namespace

RandomFaceBackend::RandomFaceBackend(std::uint64_t seed, int64_t dim) : dim_(dim) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  int64_t in = 3;
  for (int64_t out : {16, 32, 64}) {
    weights_.push_back(torch::randn({out, in, 3, 3}, gen, torch::kFloat32) *
                       std::sqrt(2.0 / static_cast<double>(in * 9)));
    in = out;
  }
  head_ = torch::randn({in, dim}, gen, torch::kFloat32) / std::sqrt(static_cast<double>(in));
}

torch::Tensor RandomFaceBackend::embed(const torch::Tensor& faces) const {
  torch::Tensor h = faces.dim() == 3 ? faces.unsqueeze(0) : faces;
  for (const auto& w : weights_) {
    h = torch::relu(F::conv2d(h, w.to(h.dtype()), F::Conv2dFuncOptions().stride(2).padding(1)));
  }
  return h.mean({2, 3}).matmul(head_.to(h.dtype()));
}

LinearFaceBackend::LinearFaceBackend(std::uint64_t seed, int64_t dim, int64_t face_size)
    : dim_(dim), face_size_(face_size) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  const int64_t side = face_size / 4;
  const int64_t in = 3 * side * side;
  projection_ = torch::randn({in, dim}, gen, torch::kFloat64) / std::sqrt(static_cast<double>(in));
}

torch::Tensor LinearFaceBackend::embed(const torch::Tensor& faces) const {
  torch::Tensor h = faces.dim() == 3 ? faces.unsqueeze(0) : faces;
  if (h.size(-1) != face_size_ || h.size(-2) != face_size_) {
    throw Error(ErrorCode::kShapeMismatch, "linear face backend expects " + std::to_string(face_size_) +
                                               " pixel crops");
  }
  h = F::avg_pool2d(h, F::AvgPool2dFuncOptions(4));
  return h.flatten(1).matmul(projection_.to(h.dtype()));
}

struct TorchScriptFaceBackend::Impl {
  mutable torch::jit::script::Module module;
};

TorchScriptFaceBackend::TorchScriptFaceBackend(const std::filesystem::path& path, int64_t dim)
    : impl_(std::make_unique<Impl>()), dim_(dim) {
  try {
    impl_->module = torch::jit::load(path.string());
    impl_->module.eval();
  } catch (const std::exception& e) {
    throw Error(ErrorCode::kBackendMissing, "cannot load face backend " + path.string() + ": " + e.what());
  }
}

TorchScriptFaceBackend::~TorchScriptFaceBackend() = default;

torch::Tensor TorchScriptFaceBackend::embed(const torch::Tensor& faces) const {
  torch::Tensor batch = faces.dim() == 3 ? faces.unsqueeze(0) : faces;
  auto out = impl_->module.forward({batch}).toTensor().flatten(1);
  if (out.size(1) != dim_) {
    throw Error(ErrorCode::kShapeMismatch, "face backend returned width " + std::to_string(out.size(1)) +
                                               ", declared " + std::to_string(dim_));
  }
  return out;
}

core::Box expand_face_box(const core::Box& tight, double margin, cv::Size frame) {
  const int w = tight.width();
  const int h = tight.height();
  const int ew = static_cast<int>(std::lround(w * (1.0 + margin)));
  const int eh = static_cast<int>(std::lround(h * (1.0 + margin)));
  core::Box box;
  box.x_min = tight.x_min - (ew - w) / 2;
  box.y_min = tight.y_min - (eh - h) / 2;
  box.x_max = box.x_min + ew - 1;
  box.y_max = box.y_min + eh - 1;
  box.x_min = std::max(box.x_min, 0);
  box.y_min = std::max(box.y_min, 0);
  box.x_max = std::min(box.x_max, frame.width - 1);
  box.y_max = std::min(box.y_max, frame.height - 1);
  return box;
}

FaceCrop crop_face(const torch::Tensor& image, const core::FaceChannel& face, double margin,
                   int64_t size) {
  if (face.empty()) throw Error(ErrorCode::kNoFace, "face channel is empty");
  if (image.dim() != 3 || image.size(1) != face.size().height || image.size(2) != face.size().width) {
    throw Error(ErrorCode::kShapeMismatch, "image and face channel differ in size");
  }
  const auto tight = core::bbox_from_labels(face.pixels()).box;
  const auto box = expand_face_box(tight, margin, face.size());
  const auto region = image.slice(1, box.y_min, box.y_max + 1).slice(2, box.x_min, box.x_max + 1);
  return {resize_bilinear(region.unsqueeze(0), size, size)[0], box, margin};
}

torch::Tensor embed_face(const FaceCrop& crop, const FaceBackend* backend) {
  if (backend == nullptr) throw Error(ErrorCode::kBackendMissing, "no face backend configured");
  torch::NoGradGuard no_grad;
  return backend->embed(crop.pixels.unsqueeze(0))[0];
}

torch::Tensor identity_loss(const torch::Tensor& e_a, const torch::Tensor& e_b) {
  return nn::l1(e_a, e_b);
}

torch::Tensor uncrop(const torch::Tensor& chw, const core::Box& box) {
  return resize_bilinear(chw.unsqueeze(0), box.height(), box.width())[0];
}

torch::Tensor blend_face(const torch::Tensor& o, const torch::Tensor& f, const torch::Tensor& m,
                         const core::Box& box) {
  const cv::Size frame(static_cast<int>(o.size(-1)), static_cast<int>(o.size(-2)));
  if (!box.inside(frame)) throw Error(ErrorCode::kOutOfRange, "face box leaves the frame");
  if (f.size(-2) != box.height() || f.size(-1) != box.width() || m.size(-2) != box.height() ||
      m.size(-1) != box.width()) {
    throw Error(ErrorCode::kShapeMismatch, "refined face and mask must be at box size");
  }
  auto w = o.clone();
  auto region = w.slice(-2, box.y_min, box.y_max + 1).slice(-1, box.x_min, box.x_max + 1);
  region.copy_(region * (1 - m) + f * m);
  return w;
}

FrnConfig FrnConfig::full() { return {}; }

FrnConfig FrnConfig::desk() {
  FrnConfig c;
  c.face_size = 64;
  c.encoder_widths = {16, 32, 64, 64};
  c.latent = 128;
  c.bottleneck_channels = 64;
  c.decoder_widths = {64, 32, 32, 16};
  c.descriptor_dim = 64;
  c.bank.patch.base_width = 16;
  c.bank.patch.layers = 2;
  return c;
}

nlohmann::json FrnConfig::to_json() const {
  return {{"face_size", face_size},
          {"margin", margin},
          {"encoder_widths", encoder_widths},
          {"latent", latent},
          {"bottleneck_channels", bottleneck_channels},
          {"decoder_widths", decoder_widths},
          {"descriptor_dim", descriptor_dim},
          {"discriminator",
           {{"base_width", bank.patch.base_width}, {"layers", bank.patch.layers}, {"count", bank.count}}},
          {"weights", weights.to_json()},
          {"degrade_factor", degrade_factor},
          {"lr", lr},
          {"beta1", beta1},
          {"beta2", beta2},
          {"seed", seed},
          {"face_model", face_model},
          {"face_seed", face_seed}};
}

FrnConfig FrnConfig::from_json(const nlohmann::json& doc) {
  FrnConfig c = doc.value("preset", std::string("full")) == "desk" ? desk() : full();
  c.face_size = doc.value("face_size", c.face_size);
  c.margin = doc.value("margin", c.margin);
  c.encoder_widths = doc.value("encoder_widths", c.encoder_widths);
  c.latent = doc.value("latent", c.latent);
  c.bottleneck_channels = doc.value("bottleneck_channels", c.bottleneck_channels);
  c.decoder_widths = doc.value("decoder_widths", c.decoder_widths);
  c.descriptor_dim = doc.value("descriptor_dim", c.descriptor_dim);
  if (doc.contains("discriminator")) {
    const auto& d = doc.at("discriminator");
    c.bank.patch.base_width = d.value("base_width", c.bank.patch.base_width);
    c.bank.patch.layers = d.value("layers", c.bank.patch.layers);
    c.bank.count = d.value("count", c.bank.count);
  }
  if (doc.contains("weights")) c.weights = nn::LossWeights::from_json(doc.at("weights"));
  c.degrade_factor = doc.value("degrade_factor", c.degrade_factor);
  c.lr = doc.value("lr", c.lr);
  c.beta1 = doc.value("beta1", c.beta1);
  c.beta2 = doc.value("beta2", c.beta2);
  c.seed = doc.value("seed", c.seed);
  c.face_model = doc.value("face_model", c.face_model);
  c.face_seed = doc.value("face_seed", c.face_seed);
  return c;
}

std::shared_ptr<const FaceBackend> make_face_backend(const FrnConfig& config) {
  if (!config.face_model.empty()) {
    return std::make_shared<TorchScriptFaceBackend>(config.face_model, config.descriptor_dim);
  }
  return std::make_shared<RandomFaceBackend>(config.face_seed, config.descriptor_dim);
}

FrnNetImpl::FrnNetImpl(const FrnConfig& config)
    : bottleneck_channels_(config.bottleneck_channels),
      conditioned_latent_(config.latent + config.descriptor_dim) {
  const int64_t stages = stages_for(config.face_size);
  if (static_cast<int64_t>(config.encoder_widths.size()) != stages ||
      static_cast<int64_t>(config.decoder_widths.size()) != stages) {
    throw Error(ErrorCode::kValidation, "encoder and decoder need one width per 2x stage of the face size");
  }
  encoder_ = register_module("encoder", torch::nn::Sequential());
  int64_t in = 3;
  for (int64_t width : config.encoder_widths) {
    encoder_->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(in, width, 4).stride(2).padding(1)));
    encoder_->push_back(torch::nn::InstanceNorm2d(torch::nn::InstanceNorm2dOptions(width)));
    encoder_->push_back(torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2)));
    in = width;
  }
  to_latent_ = register_module("to_latent", torch::nn::Linear(in * 16, config.latent));
  to_bottleneck_ =
      register_module("to_bottleneck", torch::nn::Linear(conditioned_latent_, config.bottleneck_channels * 16));
  decoder_ = register_module("decoder", torch::nn::Sequential());
  in = config.bottleneck_channels;
  for (int64_t width : config.decoder_widths) {
    decoder_->push_back(torch::nn::Upsample(
        torch::nn::UpsampleOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest)));
    decoder_->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(in, width, 3).padding(1)));
    decoder_->push_back(torch::nn::InstanceNorm2d(torch::nn::InstanceNorm2dOptions(width)));
    decoder_->push_back(torch::nn::ReLU());
    in = width;
  }
  to_f_ = register_module("to_f", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, 3, 3).padding(1)));
  to_m_ = register_module("to_m", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, 1, 3).padding(1)));
}

std::pair<torch::Tensor, torch::Tensor> FrnNetImpl::forward(const torch::Tensor& faces,
                                                            const torch::Tensor& descriptors) {
  auto latent = torch::leaky_relu(to_latent_->forward(encoder_->forward(faces).flatten(1)), 0.2);
  latent = torch::cat({latent, descriptors.to(latent.dtype())}, 1);
  auto h = to_bottleneck_->forward(latent).view({-1, bottleneck_channels_, 4, 4});
  h = decoder_->forward(h);
  return {torch::tanh(to_f_->forward(h)), torch::sigmoid(to_m_->forward(h))};
}

FrnModel::FrnModel(const FrnConfig& config, std::shared_ptr<const FaceBackend> backend)
    : config_(config), backend_(std::move(backend)) {
  if (!backend_) throw Error(ErrorCode::kBackendMissing, "FRN needs a face backend");
  if (backend_->dim() != config_.descriptor_dim) {
    throw Error(ErrorCode::kShapeMismatch, "face backend width differs from the descriptor width");
  }
  config_.bank.patch.in_channels = 3;
  torch::manual_seed(config_.seed);
  net_ = FrnNet(config_);
  bank_ = nn::DiscriminatorBank(config_.bank);
  const auto options = torch::optim::AdamOptions(config_.lr).betas({config_.beta1, config_.beta2});
  opt_g_ = std::make_unique<torch::optim::Adam>(net_->parameters(), options);
  opt_d_ = std::make_unique<torch::optim::Adam>(bank_->parameters(), options);
}

RefineResult FrnModel::refine(const FaceCrop& face_in, const torch::Tensor& descriptor) {
  if (descriptor.numel() != config_.descriptor_dim) {
    throw Error(ErrorCode::kShapeMismatch, "descriptor width " + std::to_string(descriptor.numel()) +
                                               " differs from the model's " +
                                               std::to_string(config_.descriptor_dim));
  }
  if (face_in.pixels.size(-1) != config_.face_size || face_in.pixels.size(-2) != config_.face_size) {
    throw Error(ErrorCode::kShapeMismatch, "face crop must be " + std::to_string(config_.face_size) +
                                               " pixels square");
  }
  torch::NoGradGuard no_grad;
  const auto [f, m] = net_->forward(face_in.pixels.unsqueeze(0), descriptor.reshape({1, -1}));
  return {f[0], m[0]};
}

torch::Tensor FrnModel::refine_image(const torch::Tensor& o, const core::FaceChannel& face,
                                     const FaceCrop& target_face) {
  const auto crop = crop_face(o, face, config_.margin, config_.face_size);
  const auto result = refine(crop, embed_face(target_face, backend_.get()));
  return blend_face(o, uncrop(result.f, crop.box), uncrop(result.m, crop.box), crop.box);
}

torch::Tensor FrnModel::degrade(const torch::Tensor& faces) const {
  const int64_t size = faces.size(-1);
  const int64_t small = std::max<int64_t>(1, size / config_.degrade_factor);
  return resize_bilinear(resize_bilinear(faces, small, small), size, size);
}

nn::LossReport FrnModel::training_step(std::span<const FrnSample> batch) {
  if (batch.empty()) throw Error(ErrorCode::kValidation, "empty FRN batch");
  std::vector<torch::Tensor> faces;
  for (const auto& s : batch) faces.push_back(s.face);
  const auto y = torch::stack(faces);
  const auto input = degrade(y);
  torch::Tensor target_embedding;
  {
    torch::NoGradGuard no_grad;
    target_embedding = backend_->embed(y);
  }
  const auto& w = config_.weights;
  const auto [f, m] = net_->forward(input, target_embedding);
  const auto blended = input * (1 - m) + f * m;

  nn::BankActivations real_bank;
  {
    torch::NoGradGuard no_grad;
    real_bank = bank_->forward(y);
  }
  const auto fake_bank = bank_->forward(blended);
  const auto adv_g = nn::hinge_g(nn::patch_outputs(fake_bank));
  const auto fm_d =
      nn::fm_discriminator(nn::intermediate_features(real_bank), nn::intermediate_features(fake_bank));
  const auto id = identity_loss(backend_->embed(f), target_embedding);
  const auto recon = nn::l1(blended, y);
  const auto mask_grad = nn::grad_l1(m);
  const auto loss_g = w.adversarial * adv_g + w.fm_discriminator * fm_d + w.face_identity * id +
                      w.recon_l1 * recon + w.mask_grad * mask_grad;

  nn::LossReport report;
  report.set("adversarial_g", adv_g.item<double>(), w.adversarial);
  report.set("fm_discriminator", fm_d.item<double>(), w.fm_discriminator);
  report.set("face_identity", id.item<double>(), w.face_identity);
  report.set("recon_l1", recon.item<double>(), w.recon_l1);
  report.set("mask_grad", mask_grad.item<double>(), w.mask_grad);
  check_finite(report);
  opt_g_->zero_grad();
  loss_g.backward();
  opt_g_->step();

  const auto real_out = nn::patch_outputs(bank_->forward(y));
  const auto fake_out = nn::patch_outputs(bank_->forward(blended.detach()));
  const auto adv_d = nn::hinge_d(real_out, fake_out);
  report.set("adversarial_d", adv_d.item<double>(), w.adversarial);
  check_finite(report);
  opt_d_->zero_grad();
  (w.adversarial * adv_d).backward();
  opt_d_->step();

  report.finalize();
  return report;
}

void FrnModel::write_state(nn::Checkpoint& ckpt) const {
  ckpt.header["network"] = "frn";
  ckpt.header["backend"] = backend_->name();
  ckpt.header["descriptor_dim"] = config_.descriptor_dim;
  ckpt.header["config"] = config_.to_json();
  ckpt.put_module("net", *net_);
  ckpt.put_module("discriminator", *bank_);
  ckpt.put_optimizer("opt_g", *opt_g_);
  ckpt.put_optimizer("opt_d", *opt_d_);
}

void FrnModel::read_state(const nn::Checkpoint& ckpt) {
  if (ckpt.header.value("network", std::string()) != "frn") {
    throw Error(ErrorCode::kValidation, "checkpoint does not hold an FRN");
  }
  if (ckpt.header.value("descriptor_dim", int64_t{0}) != config_.descriptor_dim) {
    throw Error(ErrorCode::kShapeMismatch, "checkpoint descriptor width differs from the model's");
  }
  ckpt.get_module("net", *net_);
  ckpt.get_module("discriminator", *bank_);
  if (ckpt.blobs.count("opt_g")) ckpt.get_optimizer("opt_g", *opt_g_);
  if (ckpt.blobs.count("opt_d")) ckpt.get_optimizer("opt_d", *opt_d_);
}

void FrnModel::save(const std::filesystem::path& path, const nlohmann::json& extra) const {
  nn::Checkpoint ckpt;
  if (extra.is_object()) ckpt.header.update(extra);
  write_state(ckpt);
  ckpt.save(path);
}

FrnModel FrnModel::load(const std::filesystem::path& path) {
  const auto ckpt = nn::Checkpoint::load(path);
  FrnModel model(FrnConfig::from_json(ckpt.header.at("config")));
  model.read_state(ckpt);
  return model;
}

}  // namespace hi::frn
