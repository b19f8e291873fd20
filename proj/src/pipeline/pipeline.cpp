#include "hi/pipeline/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include <opencv2/imgproc.hpp>

#include "hi/core/encoding.hpp"
#include "hi/core/error.hpp"
#include "hi/core/io.hpp"

namespace hi::pipeline {
namespace {

nlohmann::json schedule_json(const Schedule& s) {
  return {{"epochs", s.epochs}, {"batch_size", s.batch_size}, {"max_steps", s.max_steps}};
}

Schedule schedule_from(const nlohmann::json& doc, Schedule s) {
  s.epochs = doc.value("epochs", s.epochs);
  s.batch_size = doc.value("batch_size", s.batch_size);
  s.max_steps = doc.value("max_steps", s.max_steps);
  return s;
}

nlohmann::json with_preset(nlohmann::json doc, const std::string& preset) {
  if (!doc.contains("preset")) doc["preset"] = preset;
  return doc;
}

// Holds decoded scenes so an epoch over a small dataset does not re-read
// PNGs at every step.
class SceneCache {
 public:
  SceneCache(const DatasetIndex& index, std::size_t capacity) : index_(index), capacity_(capacity) {}

  const LoadedScene& get(int sample) {
    auto it = scenes_.find(sample);
    if (it != scenes_.end()) return it->second;
    if (scenes_.size() >= capacity_) scenes_.clear();
    return scenes_.emplace(sample, load_scene(index_, sample)).first->second;
  }

 private:
  const DatasetIndex& index_;
  std::size_t capacity_;
  std::map<int, LoadedScene> scenes_;
};

struct Trainable {
  std::function<nn::LossReport(const std::vector<PersonRef>&)> step;
  std::function<void(nn::Checkpoint&)> write_state;
  std::function<void(const nn::Checkpoint&)> read_state;
};

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::int64_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed * 1000003ULL + static_cast<std::uint64_t>(epoch));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

}  // namespace

std::string to_string(Network net) {
  switch (net) {
    case Network::kEgn: return "egn";
    case Network::kEgnPrime: return "egn-prime";
    case Network::kMcrn: return "mcrn";
    case Network::kFrn: return "frn";
  }
  return "unknown";
}

Network network_from_string(const std::string& name) {
  if (name == "egn") return Network::kEgn;
  if (name == "egn-prime" || name == "egn_prime") return Network::kEgnPrime;
  if (name == "mcrn") return Network::kMcrn;
  if (name == "frn") return Network::kFrn;
  throw Error(ErrorCode::kValidation, "unknown network " + name);
}

RunConfig RunConfig::desk() { return {}; }

RunConfig RunConfig::full() {
  RunConfig c;
  c.preset = "full";
  c.egn = egn::EgnConfig::full(egn::Variant::kWithBBox);
  c.egn_prime = egn::EgnConfig::full(egn::Variant::kWithoutBBox);
  c.mcrn = mcrn::McrnConfig::full();
  c.frn = frn::FrnConfig::full();
  c.egn_schedule = {.epochs = 300, .batch_size = 64};
  c.mcrn_schedule = {.epochs = 200, .batch_size = 32};
  c.frn_schedule = {.epochs = 100, .batch_size = 32};
  c.checkpoint_every = 5000;
  return c;
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json doc = {{"preset", preset},
                        {"egn", egn.to_json()},
                        {"egn_prime", egn_prime.to_json()},
                        {"mcrn", mcrn.to_json()},
                        {"frn", frn.to_json()},
                        {"egn_schedule", schedule_json(egn_schedule)},
                        {"mcrn_schedule", schedule_json(mcrn_schedule)},
                        {"frn_schedule", schedule_json(frn_schedule)},
                        {"seed", seed},
                        {"checkpoint_every", checkpoint_every},
                        {"out_dir", out_dir.string()},
                        {"resume", resume}};
  if (stop) doc["stop"] = {{"component", stop->component}, {"below", stop->below}, {"patience", stop->patience}};
  return doc;
}

RunConfig RunConfig::from_json(const nlohmann::json& doc) {
  const std::string preset = doc.value("preset", std::string("desk"));
  if (preset != "desk" && preset != "full") throw Error(ErrorCode::kValidation, "unknown preset " + preset);
  RunConfig c = preset == "full" ? full() : desk();
  if (doc.contains("egn")) {
    auto sub = with_preset(doc.at("egn"), preset);
    if (!sub.contains("variant")) sub["variant"] = "with_bbox";
    c.egn = egn::EgnConfig::from_json(sub);
  }
  if (doc.contains("egn_prime")) {
    auto sub = with_preset(doc.at("egn_prime"), preset);
    sub["variant"] = "without_bbox";
    c.egn_prime = egn::EgnConfig::from_json(sub);
  }
  if (doc.contains("mcrn")) c.mcrn = mcrn::McrnConfig::from_json(with_preset(doc.at("mcrn"), preset));
  if (doc.contains("frn")) c.frn = frn::FrnConfig::from_json(with_preset(doc.at("frn"), preset));
  if (doc.contains("egn_schedule")) c.egn_schedule = schedule_from(doc.at("egn_schedule"), c.egn_schedule);
  if (doc.contains("mcrn_schedule")) c.mcrn_schedule = schedule_from(doc.at("mcrn_schedule"), c.mcrn_schedule);
  if (doc.contains("frn_schedule")) c.frn_schedule = schedule_from(doc.at("frn_schedule"), c.frn_schedule);
  if (doc.contains("stop")) {
    const auto& s = doc.at("stop");
    c.stop = StopRule{s.at("component").get<std::string>(), s.at("below").get<double>(), s.value("patience", 1)};
  }
  c.seed = doc.value("seed", c.seed);
  c.checkpoint_every = doc.value("checkpoint_every", c.checkpoint_every);
  c.out_dir = doc.value("out_dir", c.out_dir.string());
  c.resume = doc.value("resume", c.resume);
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot read config " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kValidation, path.string() + ": " + e.what());
  }
}

const Schedule& RunConfig::schedule(Network net) const {
  switch (net) {
    case Network::kEgn:
    case Network::kEgnPrime: return egn_schedule;
    case Network::kMcrn: return mcrn_schedule;
    case Network::kFrn: return frn_schedule;
  }
  return egn_schedule;
}

core::BBoxChannel sample_inference_bbox(const core::Box& reference, cv::Size frame, const UniformSource& rng) {
  if (reference.width() <= 0 || reference.height() <= 0) {
    throw Error(ErrorCode::kEmptyPerson, "reference box is empty");
  }
  const double height_scale = 0.9 + 0.2 * rng();
  const double y_scale = 0.9 + 0.2 * rng();
  const double x_draw = rng();
  const double height = std::max(1.0, std::round(reference.height() * height_scale));
  const double width = std::max(1.0, std::round(reference.width() * height_scale));
  const double cy = (reference.y_min + reference.y_max) / 2.0 * y_scale;
  const double cx = x_draw * (frame.width - 1);
  core::Box box;
  box.x_min = static_cast<int>(std::lround(cx - (width - 1) / 2.0));
  box.y_min = static_cast<int>(std::lround(cy - (height - 1) / 2.0));
  box.x_max = box.x_min + static_cast<int>(width) - 1;
  box.y_max = box.y_min + static_cast<int>(height) - 1;
  box.x_min = std::clamp(box.x_min, 0, frame.width - 1);
  box.y_min = std::clamp(box.y_min, 0, frame.height - 1);
  box.x_max = std::clamp(box.x_max, 0, frame.width - 1);
  box.y_max = std::clamp(box.y_max, 0, frame.height - 1);
  return core::render_box(box, frame);
}

torch::Tensor scene_tensor(const cv::Mat& rgb, int64_t size) {
  cv::Mat resized;
  cv::resize(rgb, resized, cv::Size(static_cast<int>(size), static_cast<int>(size)), 0, 0, cv::INTER_LINEAR);
  return core::image_to_tensor(resized);
}

TrainResult train(Network net, const RunConfig& config, const DatasetIndex& index, const StepObserver& observer) {
  const auto dir = config.out_dir / to_string(net);
  std::filesystem::create_directories(dir);
  SceneCache cache(index, 512);
  const std::string palette_hash = std::to_string(index.palette.hash());

  std::vector<PersonRef> pool =
      net == Network::kMcrn ? index.mcrn_samples : index.egn_samples;
  if (!index.split.empty()) {
    std::erase_if(pool, [&](const PersonRef& r) {
      const auto it = index.split.find(index.samples[r.sample].id);
      return it != index.split.end() && it->second != "train";
    });
  }
  if (pool.empty()) throw Error(ErrorCode::kEmptyDataset, "no training samples for " + to_string(net));

  std::unique_ptr<egn::EgnModel> egn_model;
  std::unique_ptr<mcrn::McrnModel> mcrn_model;
  std::unique_ptr<frn::FrnModel> frn_model;
  Trainable model;
  switch (net) {
    case Network::kEgn:
    case Network::kEgnPrime: {
      const auto& cfg = net == Network::kEgn ? config.egn : config.egn_prime;
      egn_model = std::make_unique<egn::EgnModel>(cfg);
      const bool with_box = cfg.variant == egn::Variant::kWithBBox;
      model.step = [&, with_box](const std::vector<PersonRef>& refs) {
        std::vector<egn::EgnSample> batch;
        for (const auto& r : refs) {
          const auto& scene = cache.get(r.sample);
          batch.push_back(egn::build_egn_sample(scene.parse, r.person, with_box, egn_model->config().resolution,
                                                index.samples[r.sample].id));
        }
        return egn_model->training_step(batch);
      };
      model.write_state = [&](nn::Checkpoint& c) { egn_model->write_state(c); };
      model.read_state = [&](const nn::Checkpoint& c) { egn_model->read_state(c); };
      break;
    }
    case Network::kMcrn: {
      mcrn_model = std::make_unique<mcrn::McrnModel>(config.mcrn);
      model.step = [&](const std::vector<PersonRef>& refs) {
        std::vector<mcrn::McrnSample> batch;
        const int s = static_cast<int>(mcrn_model->config().resolution);
        for (const auto& r : refs) {
          const auto& scene = cache.get(r.sample);
          batch.push_back({scene_tensor(scene.rgb, s),
                           core::build_appearance_tensor(scene.rgb, scene.parse.persons[r.person]),
                           core::resize_nearest(core::person_pose(scene.parse, r.person), cv::Size(s, s))});
        }
        return mcrn_model->training_step(batch);
      };
      model.write_state = [&](nn::Checkpoint& c) { mcrn_model->write_state(c); };
      model.read_state = [&](const nn::Checkpoint& c) { mcrn_model->read_state(c); };
      break;
    }
    case Network::kFrn: {
      frn_model = std::make_unique<frn::FrnModel>(config.frn);
      model.step = [&](const std::vector<PersonRef>& refs) {
        std::vector<frn::FrnSample> batch;
        const auto& cfg = frn_model->config();
        for (const auto& r : refs) {
          const auto& scene = cache.get(r.sample);
          const auto pose = core::person_pose(scene.parse, r.person);
          batch.push_back({frn::crop_face(core::image_to_tensor(scene.rgb), pose.face, cfg.margin, cfg.face_size)
                               .pixels});
        }
        return frn_model->training_step(batch);
      };
      model.write_state = [&](nn::Checkpoint& c) { frn_model->write_state(c); };
      model.read_state = [&](const nn::Checkpoint& c) { frn_model->read_state(c); };
      break;
    }
  }

  const auto& schedule = config.schedule(net);
  const std::int64_t batch_size = std::max(1, schedule.batch_size);
  const std::int64_t per_epoch = (static_cast<std::int64_t>(pool.size()) + batch_size - 1) / batch_size;
  std::int64_t total = per_epoch * schedule.epochs;
  if (schedule.max_steps > 0) total = std::min(total, schedule.max_steps);

  TrainResult result;
  result.log = dir / "log.ndjson";
  const auto latest = dir / "latest.ckpt";
  std::int64_t step = 0;
  if (config.resume && std::filesystem::exists(latest)) {
    const auto ckpt = nn::Checkpoint::load(latest);
    if (ckpt.header.value("run_seed", std::uint64_t{0}) != config.seed) {
      throw Error(ErrorCode::kValidation, "checkpoint was written by a run with another seed");
    }
    model.read_state(ckpt);
    step = ckpt.header.value("step", std::int64_t{0});
  } else if (std::filesystem::exists(result.log)) {
    std::filesystem::remove(result.log);
  }
  result.first_step = step + 1;

  const auto save = [&](const std::filesystem::path& path) {
    nn::Checkpoint ckpt;
    model.write_state(ckpt);
    ckpt.header["step"] = step;
    ckpt.header["run_seed"] = config.seed;
    ckpt.header["palette_hash"] = palette_hash;
    ckpt.header["run_config"] = config.to_json();
    ckpt.save(path);
  };

  std::ofstream log(result.log, std::ios::app);
  if (!log) throw Error(ErrorCode::kIo, "cannot write " + result.log.string());
  int streak = 0;
  std::vector<std::size_t> order;
  std::int64_t order_epoch = -1;
  while (step < total) {
    const std::int64_t epoch = step / per_epoch;
    if (epoch != order_epoch) {
      order = epoch_order(pool.size(), config.seed, epoch);
      order_epoch = epoch;
    }
    const std::int64_t begin = (step % per_epoch) * batch_size;
    std::vector<PersonRef> refs;
    for (std::int64_t i = begin; i < std::min<std::int64_t>(begin + batch_size, pool.size()); ++i) {
      refs.push_back(pool[order[i]]);
    }
    nn::LossReport report;
    try {
      report = model.step(refs);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kNonFinite) save(dir / "abort.ckpt");
      throw;
    }
    ++step;
    nlohmann::json record = report.to_json();
    record["step"] = step;
    record["epoch"] = epoch;
    record["network"] = to_string(net);
    record["seed"] = config.seed;
    log << record.dump() << '\n';
    log.flush();
    result.last_report = record;
    if (config.checkpoint_every > 0 && step % config.checkpoint_every == 0) {
      save(dir / ("step_" + std::to_string(step) + ".ckpt"));
      save(latest);
    }
    bool stop = observer && !observer(step, report);
    if (config.stop && report.has(config.stop->component) &&
        report.at(config.stop->component) < config.stop->below) {
      stop = stop || ++streak >= config.stop->patience;
    } else {
      streak = 0;
    }
    if (stop) {
      result.stopped_early = true;
      break;
    }
  }
  save(latest);
  result.steps = step;
  result.checkpoint = latest;
  return result;
}

InsertionResult insert_person(const Models& models, const InsertionRequest& request) {
  if (!models.egn || !models.mcrn) throw Error(ErrorCode::kValidation, "insertion needs EGN and MCRN models");
  if (request.scene_rgb.type() != CV_8UC3 || request.target_rgb.type() != CV_8UC3) {
    throw Error(ErrorCode::kValidation, "scene and target images must be 8-bit RGB");
  }
  const cv::Size frame = request.scene_rgb.size();
  if (request.scene.size() != frame) throw Error(ErrorCode::kShapeMismatch, "scene parse and image differ in size");
  if (request.bbox && !request.bbox->inside(frame)) throw Error(ErrorCode::kOutOfRange, "bounding box leaves the frame");
  const auto& egn = *models.egn;
  const bool wants_box = egn.variant() == egn::Variant::kWithBBox;
  if (!wants_box && request.bbox) {
    throw Error(ErrorCode::kVariantMismatch, "the loaded pose generator takes no bounding box");
  }
  if (egn.variant() == egn::Variant::kPoseTransfer) {
    throw Error(ErrorCode::kVariantMismatch, "a pose-transfer generator cannot insert persons");
  }

  std::mt19937_64 rng(request.seed);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const UniformSource draw = [&] { return uniform(rng); };
  std::vector<core::Box> references;
  for (const auto& person : request.scene.persons) {
    if (!person.empty()) references.push_back(core::bbox_from_labels(person.pixels()).box);
  }

  InsertionResult result;
  const int r = models.egn->config().resolution;
  for (int attempt = 0;; ++attempt) {
    egn::BBoxMode mode = egn::NoBox{};
    if (request.bbox) {
      mode = egn::InferenceBox{*request.bbox};
      result.bbox = request.bbox;
    } else if (wants_box) {
      if (references.empty()) throw Error(ErrorCode::kEmptyPerson, "no scene person to size the box from");
      const auto& ref = references[std::min(references.size() - 1,
                                            static_cast<std::size_t>(draw() * references.size()))];
      result.bbox = sample_inference_bbox(ref, frame, draw).box;
      mode = egn::InferenceBox{*result.bbox};
    }
    const auto input = egn::build_egn_input(request.scene, std::nullopt, mode, r);
    result.p = models.egn->generate(input);
    if (!result.p.semantic.empty()) break;
    const bool can_resample = wants_box && !request.bbox;
    if (!can_resample || attempt >= kMaxBoxResamples) {
      throw Error(ErrorCode::kEmptyGeneration,
                  "pose generator produced no person after " + std::to_string(attempt) + " resamples");
    }
    result.retries = attempt + 1;
  }

  const auto s = models.mcrn->config().resolution;
  const cv::Size render_size(static_cast<int>(s), static_cast<int>(s));
  const auto p_render = core::resize_nearest(result.p, render_size);
  result.t = core::build_appearance_tensor(request.target_rgb, request.target_parse);
  result.x = scene_tensor(request.scene_rgb, s);
  const auto rendered = models.mcrn->render(result.t, p_render);
  result.z = rendered.z;
  result.m = rendered.m;
  result.o = mcrn::composite(result.x, result.z, result.m);
  result.w = result.o.clone();

  if (request.skip_frn || !models.frn || p_render.face.empty()) return result;
  const auto target_face = core::face_hull_channel(
      std::span<const core::KeypointSet>(&request.target_keypoints, 1), request.target_rgb.size());
  if (target_face.channel.empty()) return result;
  const auto& fcfg = models.frn->config();
  const auto target_crop =
      frn::crop_face(core::image_to_tensor(request.target_rgb), target_face.channel, fcfg.margin, fcfg.face_size);
  result.w = models.frn->refine_image(result.o, p_render.face, target_crop);
  result.face_box = frn::crop_face(result.o, p_render.face, fcfg.margin, fcfg.face_size).box;
  result.refined = true;
  return result;
}

}  // namespace hi::pipeline
