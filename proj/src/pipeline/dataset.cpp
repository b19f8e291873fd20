#include "hi/pipeline/dataset.hpp"

#include <algorithm>
#include <fstream>

#include <opencv2/imgcodecs.hpp>

#include "hi/core/encoding.hpp"
#include "hi/core/error.hpp"
#include "hi/core/io.hpp"

namespace hi::pipeline {
namespace {

std::vector<fs::path> person_files(const fs::path& dir) {
  std::vector<std::pair<long, fs::path>> numbered;
  if (!fs::is_directory(dir)) return {};
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".png") continue;
    const std::string stem = entry.path().stem().string();
    if (stem.empty() || !std::all_of(stem.begin(), stem.end(), ::isdigit)) continue;
    numbered.emplace_back(std::stol(stem), entry.path());
  }
  std::sort(numbered.begin(), numbered.end());
  std::vector<fs::path> out;
  for (auto& [k, p] : numbered) out.push_back(std::move(p));
  return out;
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kValidation, path.string() + ": " + e.what());
  }
}

bool face_detected(const core::KeypointSet& set, cv::Size size) {
  const auto hull = core::face_hull_channel(std::span<const core::KeypointSet>(&set, 1), size);
  return hull.skipped_sets == 0 && !hull.channel.empty();
}

}  // namespace

std::uint64_t DatasetIndex::hash() const {
  const std::string text = to_json().dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

nlohmann::json DatasetIndex::to_json() const {
  nlohmann::json samples_json = nlohmann::json::array();
  for (const auto& s : samples) {
    std::vector<std::string> parses;
    for (const auto& p : s.parses) parses.push_back(fs::relative(p, root).generic_string());
    samples_json.push_back({{"id", s.id},
                            {"image", fs::relative(s.image, root).generic_string()},
                            {"parses", parses},
                            {"keypoints", s.keypoints.empty() ? "" : fs::relative(s.keypoints, root).generic_string()},
                            {"has_face", s.has_face}});
  }
  const auto refs = [](const std::vector<PersonRef>& v) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& r : v) out.push_back({r.sample, r.person});
    return out;
  };
  nlohmann::json rejects_json = nlohmann::json::array();
  for (const auto& r : rejects) rejects_json.push_back({{"id", r.id}, {"reason", r.reason}});
  return {{"palette_hash", palette.hash()},
          {"samples", samples_json},
          {"egn_samples", refs(egn_samples)},
          {"mcrn_samples", refs(mcrn_samples)},
          {"split", split},
          {"rejects", rejects_json}};
}

DatasetIndex ingest(const fs::path& root) {
  if (!fs::is_directory(root / "images") || !fs::is_directory(root / "parsing")) {
    throw Error(ErrorCode::kLayout, root.string() + " lacks images/ or parsing/");
  }
  DatasetIndex index;
  index.root = root;
  index.palette = fs::exists(root / "palette.json")
                      ? core::LabelPalette::from_json(read_json(root / "palette.json"))
                      : core::LabelPalette::multi_human_parsing();

  if (fs::exists(root / "split.json")) {
    const auto doc = read_json(root / "split.json");
    for (const char* part : {"train", "test"}) {
      if (!doc.contains(part)) continue;
      for (const auto& id : doc.at(part)) {
        const auto [it, inserted] = index.split.emplace(id.get<std::string>(), part);
        if (!inserted && it->second != part) {
          throw Error(ErrorCode::kLayout, "sample " + it->first + " is in both splits");
        }
      }
    }
  }

  std::vector<fs::path> images;
  for (const auto& entry : fs::directory_iterator(root / "images")) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") images.push_back(entry.path());
  }
  std::sort(images.begin(), images.end());

  for (const auto& image : images) {
    SampleRecord rec;
    rec.id = image.stem().string();
    rec.image = image;
    rec.parses = person_files(root / "parsing" / rec.id);
    const auto kp_path = root / "keypoints" / (rec.id + ".json");
    try {
      if (rec.parses.empty()) throw Error(ErrorCode::kEmptyPerson, "no person parses");
      const cv::Mat rgb = cv::imread(image.string(), cv::IMREAD_COLOR);
      if (rgb.empty()) throw Error(ErrorCode::kIo, "unreadable image");
      std::vector<bool> nonempty;
      for (const auto& parse_path : rec.parses) {
        const cv::Mat raw = cv::imread(parse_path.string(), cv::IMREAD_UNCHANGED);
        if (raw.empty()) throw Error(ErrorCode::kIo, "unreadable parse " + parse_path.filename().string());
        if (raw.size() != rgb.size()) {
          throw Error(ErrorCode::kShapeMismatch, "parse " + parse_path.filename().string() + " differs in size");
        }
        cv::Mat first = raw;
        if (raw.channels() > 1) cv::extractChannel(raw, first, 0);
        nonempty.push_back(!core::reduce_labels(first, index.palette).empty());
      }
      std::vector<core::KeypointSet> keypoints;
      if (fs::exists(kp_path)) {
        rec.keypoints = kp_path;
        keypoints = core::keypoints_from_json(read_json(kp_path));
      }
      if (keypoints.size() > rec.parses.size()) {
        throw Error(ErrorCode::kCountMismatch, "more keypoint sets than persons");
      }
      keypoints.resize(rec.parses.size());
      const int sample = static_cast<int>(index.samples.size());
      for (std::size_t k = 0; k < rec.parses.size(); ++k) {
        rec.has_face.push_back(nonempty[k] && face_detected(keypoints[k], rgb.size()));
        if (nonempty[k]) index.mcrn_samples.push_back({sample, static_cast<int>(k)});
        if (rec.has_face[k]) index.egn_samples.push_back({sample, static_cast<int>(k)});
      }
      index.samples.push_back(std::move(rec));
    } catch (const Error& e) {
      index.rejects.push_back({rec.id, std::string(to_string(e.code())) + ": " + e.what()});
    }
  }
  if (index.samples.empty()) throw Error(ErrorCode::kEmptyDataset, "no usable samples under " + root.string());
  return index;
}

LoadedScene load_scene(const DatasetIndex& index, int sample) {
  const auto& rec = index.samples.at(sample);
  LoadedScene scene;
  scene.rgb = core::read_rgb(rec.image);
  std::vector<core::SemanticMap> persons;
  for (const auto& p : rec.parses) {
    const cv::Mat raw = cv::imread(p.string(), cv::IMREAD_UNCHANGED);
    cv::Mat first = raw;
    if (raw.channels() > 1) cv::extractChannel(raw, first, 0);
    persons.push_back(core::reduce_labels(first, index.palette));
  }
  std::vector<core::KeypointSet> keypoints;
  if (!rec.keypoints.empty()) keypoints = core::read_keypoints(rec.keypoints);
  keypoints.resize(persons.size());
  // Sets that cannot form a hull are not detections.
  for (std::size_t k = 0; k < keypoints.size(); ++k) {
    if (!rec.has_face[k]) keypoints[k].clear();
  }
  scene.parse = core::compose_scene(persons, keypoints);
  return scene;
}

}  // namespace hi::pipeline
