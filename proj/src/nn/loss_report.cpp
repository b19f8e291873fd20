#include "hi/nn/loss_report.hpp"

#include "hi/core/error.hpp"

namespace hi::nn {

nlohmann::json LossWeights::to_json() const {
  return {{"adversarial", adversarial},     {"fm_discriminator", fm_discriminator},
          {"fm_perceptual", fm_perceptual}, {"mask_l1", mask_l1},
          {"mask_grad", mask_grad},         {"recon_l1", recon_l1},
          {"recon_grad", recon_grad},       {"pose_grad", pose_grad},
          {"face_identity", face_identity}};
}

LossWeights LossWeights::from_json(const nlohmann::json& doc) {
  LossWeights w;
  w.adversarial = doc.value("adversarial", w.adversarial);
  w.fm_discriminator = doc.value("fm_discriminator", w.fm_discriminator);
  w.fm_perceptual = doc.value("fm_perceptual", w.fm_perceptual);
  w.mask_l1 = doc.value("mask_l1", w.mask_l1);
  w.mask_grad = doc.value("mask_grad", w.mask_grad);
  w.recon_l1 = doc.value("recon_l1", w.recon_l1);
  w.recon_grad = doc.value("recon_grad", w.recon_grad);
  w.pose_grad = doc.value("pose_grad", w.pose_grad);
  w.face_identity = doc.value("face_identity", w.face_identity);
  return w;
}

const std::vector<std::string>& LossReport::generator_terms() {
  static const std::vector<std::string> terms = {
      "adversarial_g", "fm_discriminator", "fm_perceptual", "mask_l1",       "mask_grad",
      "recon_l1",      "recon_grad",       "pose_grad",     "face_identity"};
  return terms;
}

void LossReport::set(const std::string& name, double value, double weight) {
  components[name] = value;
  weights[name] = weight;
}

double LossReport::at(const std::string& name) const {
  const auto it = components.find(name);
  if (it == components.end()) throw Error(ErrorCode::kValidation, "no loss component " + name);
  return it->second;
}

void LossReport::finalize() {
  total_g = 0.0;
  for (const auto& name : generator_terms()) {
    if (has(name)) total_g += weights.at(name) * components.at(name);
  }
  total_d = has("adversarial_d") ? weights.at("adversarial_d") * components.at("adversarial_d") : 0.0;
}

nlohmann::json LossReport::to_json() const {
  return {{"components", components}, {"weights", weights}, {"total_g", total_g}, {"total_d", total_d}};
}

}  // namespace hi::nn
