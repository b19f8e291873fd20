#pragma once

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace hi::nn {

struct LossWeights {
  double adversarial = 1.0;
  double fm_discriminator = 10.0;
  double fm_perceptual = 10.0;
  double mask_l1 = 1.0;
  double mask_grad = 5.0;
  double recon_l1 = 10.0;
  double recon_grad = 10.0;
  double pose_grad = 1.0;
  double face_identity = 1.0;

  nlohmann::json to_json() const;
  static LossWeights from_json(const nlohmann::json& doc);
};

/// Named loss components of one training step.
///
/// total_g = sum over generator terms of weight * component, and
/// total_d = weight("adversarial_d") * adversarial_d. Components a network
/// does not use are either absent or pinned at zero weight.
struct LossReport {
  std::map<std::string, double> components;
  std::map<std::string, double> weights;
  double total_g = 0.0;
  double total_d = 0.0;

  static const std::vector<std::string>& generator_terms();

  void set(const std::string& name, double value, double weight);
  bool has(const std::string& name) const { return components.count(name) != 0; }
  double at(const std::string& name) const;
  /// Recomputes the totals from the components.
  void finalize();
  nlohmann::json to_json() const;
};

}  // namespace hi::nn
