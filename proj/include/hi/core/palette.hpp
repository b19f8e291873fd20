#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

namespace hi::core {

/// The eight semantic groups a person is reduced to.
enum class Group : int {
  kBackground = 0,
  kHair = 1,
  kFace = 2,
  kTorsoUpperLimbs = 3,
  kUpperWear = 4,
  kLowerWear = 5,
  kLowerLimbs = 6,
  kShoes = 7,
};

inline constexpr int kGroupCount = 8;
inline constexpr int kCodeStep = 36;

constexpr std::uint8_t code_of(Group g) {
  return static_cast<std::uint8_t>(static_cast<int>(g) * kCodeStep);
}

constexpr bool is_palette_code(std::uint8_t v) {
  return v % kCodeStep == 0 && v / kCodeStep < kGroupCount;
}

/// Group index of a palette code. Precondition: is_palette_code(v).
constexpr int group_of_code(std::uint8_t v) { return v / kCodeStep; }

/// Raw human-parser label ids folded onto the eight groups.
///
/// The default table targets the Multi-Human-Parsing label set (v1 ids,
/// 0 = background ... 18 = torso-skin). Any other parser can be plugged in
/// through `from_json`.
struct LabelPalette {
  std::array<std::string, kGroupCount> groups;
  std::array<std::uint8_t, kGroupCount> codes;
  std::map<int, int> source_map;

  static LabelPalette multi_human_parsing();
  /// Maps each palette code onto its own group; reducing an already reduced
  /// map through it is the identity.
  static LabelPalette identity();
  static LabelPalette from_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;

  /// Throws Error(kMapping) naming the id when it has no entry.
  std::uint8_t code_for(int raw_id) const;
  /// FNV-1a over the mapping table; tags checkpoints so a model is never run
  /// against a differently reduced dataset.
  std::uint64_t hash() const;
};

}  // namespace hi::core
