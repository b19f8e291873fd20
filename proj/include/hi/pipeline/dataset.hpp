#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>

#include "hi/core/maps.hpp"
#include "hi/core/palette.hpp"

namespace hi::pipeline {

namespace fs = std::filesystem;

/// Dataset layout under a root directory:
///
///   images/<id>.png            scene photograph
///   parsing/<id>/<k>.png       raw parser labels of person k (k = 0, 1, ...)
///   keypoints/<id>.json        {persons: [{face_keypoints: [[x, y], ...]}, ...]}
///                              in the same order as the parsing files
///   split.json                 optional {"train": [ids], "test": [ids]}
///   palette.json               optional raw-label table, see LabelPalette
///
/// Person files are taken in numeric order of k. A person with fewer than
/// three usable keypoints counts as having no detected face.
struct SampleRecord {
  std::string id;
  fs::path image;
  std::vector<fs::path> parses;
  fs::path keypoints;
  std::vector<bool> has_face;
};

struct PersonRef {
  int sample = 0;
  int person = 0;
  bool operator==(const PersonRef&) const = default;
};

struct Reject {
  std::string id;
  std::string reason;
};

struct DatasetIndex {
  fs::path root;
  core::LabelPalette palette;
  std::vector<SampleRecord> samples;
  /// One per person with a detected face (that person held out).
  std::vector<PersonRef> egn_samples;
  /// One per person with a nonempty mask.
  std::vector<PersonRef> mcrn_samples;
  std::map<std::string, std::string> split;  // id -> "train" | "test"
  std::vector<Reject> rejects;

  /// FNV-1a over the serialized index.
  std::uint64_t hash() const;
  nlohmann::json to_json() const;
};

/// Throws Error(kLayout) when images/ or parsing/ are missing or an id is in
/// both splits, Error(kEmptyDataset) when no sample survives validation.
/// Unreadable or inconsistent samples are recorded as rejects.
DatasetIndex ingest(const fs::path& root);

struct LoadedScene {
  cv::Mat rgb;  // CV_8UC3
  core::SceneParse parse;
};

LoadedScene load_scene(const DatasetIndex& index, int sample);

}  // namespace hi::pipeline
