#include "hi/core/palette.hpp"

#include "hi/core/error.hpp"

namespace hi::core {
namespace {

std::array<std::string, kGroupCount> default_group_names() {
  return {"background",     "hair",           "face",        "torso_upper_limbs",
          "upper_body_wear", "lower_body_wear", "lower_limbs", "shoes"};
}

std::array<std::uint8_t, kGroupCount> default_codes() {
  std::array<std::uint8_t, kGroupCount> codes{};
  for (int k = 0; k < kGroupCount; ++k) codes[k] = static_cast<std::uint8_t>(k * kCodeStep);
  return codes;
}

void validate(const LabelPalette& palette) {
  for (int k = 0; k < kGroupCount; ++k) {
    if (palette.codes[k] != k * kCodeStep) {
      throw Error(ErrorCode::kValidation, "palette codes must be k*36 for k=0..7");
    }
  }
  for (const auto& [raw, group] : palette.source_map) {
    if (group < 0 || group >= kGroupCount) {
      throw Error(ErrorCode::kValidation,
                  "raw label " + std::to_string(raw) + " maps to invalid group " +
                      std::to_string(group));
    }
  }
}

}  // namespace

LabelPalette LabelPalette::multi_human_parsing() {
  LabelPalette p{default_group_names(), default_codes(), {}};
  const auto g = [](Group group) { return static_cast<int>(group); };
  p.source_map = {
      {0, g(Group::kBackground)},       // background
      {1, g(Group::kHair)},             // hat
      {2, g(Group::kHair)},             // hair
      {3, g(Group::kFace)},             // sunglasses
      {4, g(Group::kUpperWear)},        // upper clothes
      {5, g(Group::kLowerWear)},        // skirt
      {6, g(Group::kLowerWear)},        // pants
      {7, g(Group::kUpperWear)},        // dress
      {8, g(Group::kLowerWear)},        // belt
      {9, g(Group::kShoes)},            // left shoe
      {10, g(Group::kShoes)},           // right shoe
      {11, g(Group::kFace)},            // face
      {12, g(Group::kLowerLimbs)},      // left leg
      {13, g(Group::kLowerLimbs)},      // right leg
      {14, g(Group::kTorsoUpperLimbs)},  // left arm
      {15, g(Group::kTorsoUpperLimbs)},  // right arm
      {16, g(Group::kBackground)},      // bag
      {17, g(Group::kUpperWear)},       // scarf
      {18, g(Group::kTorsoUpperLimbs)},  // torso skin
  };
  return p;
}

LabelPalette LabelPalette::identity() {
  LabelPalette p{default_group_names(), default_codes(), {}};
  for (int k = 0; k < kGroupCount; ++k) p.source_map[k * kCodeStep] = k;
  return p;
}

LabelPalette LabelPalette::from_json(const nlohmann::json& doc) {
  LabelPalette p{default_group_names(), default_codes(), {}};
  if (doc.contains("groups")) {
    const auto names = doc.at("groups").get<std::vector<std::string>>();
    if (names.size() != kGroupCount) {
      throw Error(ErrorCode::kValidation, "palette must name exactly 8 groups");
    }
    std::copy(names.begin(), names.end(), p.groups.begin());
  }
  for (const auto& [raw, group] : doc.at("source_map").items()) {
    p.source_map[std::stoi(raw)] = group.get<int>();
  }
  validate(p);
  return p;
}

nlohmann::json LabelPalette::to_json() const {
  nlohmann::json doc;
  doc["groups"] = groups;
  doc["codes"] = codes;
  nlohmann::json table = nlohmann::json::object();
  for (const auto& [raw, group] : source_map) table[std::to_string(raw)] = group;
  doc["source_map"] = table;
  return doc;
}

std::uint8_t LabelPalette::code_for(int raw_id) const {
  const auto it = source_map.find(raw_id);
  if (it == source_map.end()) {
    throw Error(ErrorCode::kMapping, "unknown raw label id " + std::to_string(raw_id));
  }
  return codes[it->second];
}

std::uint64_t LabelPalette::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  const auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xffU;
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [raw, group] : source_map) {
    mix(static_cast<std::uint64_t>(raw));
    mix(static_cast<std::uint64_t>(group));
  }
  return h;
}

}  // namespace hi::core
