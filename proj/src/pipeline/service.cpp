#include "hi/pipeline/service.hpp"

#include <httplib.h>
#include <openssl/evp.h>

#include "hi/core/encoding.hpp"
#include "hi/core/io.hpp"

namespace hi::pipeline {
namespace {

core::Part part_from_name(const std::string& name) {
  static const std::map<std::string, core::Part> parts = {
      {"hair", core::Part::kHair},           {"face", core::Part::kFace},
      {"upper_wear", core::Part::kUpperWear}, {"lower_wear", core::Part::kLowerWear},
      {"skin", core::Part::kSkin},           {"shoes", core::Part::kShoes}};
  const auto it = parts.find(name);
  if (it == parts.end()) throw Error(ErrorCode::kValidation, "unknown part " + name);
  return it->second;
}

cv::Mat image_field(const nlohmann::json& body, const char* key, int channels) {
  if (!body.contains(key) || !body.at(key).is_string()) {
    throw Error(ErrorCode::kValidation, std::string("missing image field ") + key);
  }
  return core::decode_png(base64_decode(body.at(key).get<std::string>()), channels);
}

std::string png_field(const cv::Mat& image) { return base64_encode(core::encode_png(image)); }
std::string rgb_field(const torch::Tensor& chw) {
  return base64_encode(core::encode_rgb_png(core::tensor_to_image(chw)));
}

core::Box box_from_xywh(const nlohmann::json& v) {
  if (!v.is_array() || v.size() != 4) throw Error(ErrorCode::kValidation, "bbox must be [x, y, w, h]");
  const int x = v[0].get<int>(), y = v[1].get<int>(), w = v[2].get<int>(), h = v[3].get<int>();
  if (w <= 0 || h <= 0) throw Error(ErrorCode::kValidation, "bbox must have positive size");
  return {x, y, x + w - 1, y + h - 1};
}

nlohmann::json xywh(const core::Box& b) { return {b.x_min, b.y_min, b.width(), b.height()}; }

core::PersonPose pose_field(const nlohmann::json& body) {
  if (!body.contains("pose")) throw Error(ErrorCode::kValidation, "missing pose");
  const auto& p = body.at("pose");
  return {core::SemanticMap(image_field(p, "semantic", 1)), core::BinaryChannel(image_field(p, "face", 1))};
}

std::vector<core::KeypointSet> keypoint_sets(const nlohmann::json& v) {
  if (v.is_object()) return core::keypoints_from_json(v);
  // A bare [[x, y], ...] list is one person.
  nlohmann::json doc;
  doc["persons"] = nlohmann::json::array({nlohmann::json{{"face_keypoints", v}}});
  return core::keypoints_from_json(doc);
}

nlohmann::json error_body(ErrorCode code, const std::string& message) {
  return {{"code", to_string(code)}, {"message", message}};
}

}  // namespace

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  if (text.size() % 4 != 0) throw Error(ErrorCode::kValidation, "base64 length is not a multiple of 4");
  std::vector<std::uint8_t> out(3 * text.size() / 4);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) throw Error(ErrorCode::kValidation, "malformed base64");
  std::size_t size = static_cast<std::size_t>(n);
  // DecodeBlock keeps the bytes that padding stands for.
  if (!text.empty() && text.back() == '=') --size;
  if (text.size() > 1 && text[text.size() - 2] == '=') --size;
  out.resize(size);
  return out;
}

JobQueue::JobQueue(std::size_t depth) : depth_(depth), worker_([this] { run(); }) {}

JobQueue::~JobQueue() {
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
  }
  ready_.notify_all();
  worker_.join();
}

std::future<nlohmann::json> JobQueue::submit(std::function<nlohmann::json()> job) {
  std::packaged_task<nlohmann::json()> task(std::move(job));
  auto future = task.get_future();
  {
    std::lock_guard lock(mutex_);
    if (jobs_.size() >= depth_) throw Error(ErrorCode::kQueueFull, "job queue is full");
    jobs_.push_back(std::move(task));
  }
  ready_.notify_one();
  return future;
}

std::size_t JobQueue::pending() const {
  std::lock_guard lock(mutex_);
  return jobs_.size();
}

void JobQueue::run() {
  for (;;) {
    std::packaged_task<nlohmann::json()> task;
    {
      std::unique_lock lock(mutex_);
      ready_.wait(lock, [this] { return stopping_ || !jobs_.empty(); });
      if (jobs_.empty()) return;
      task = std::move(jobs_.front());
      jobs_.pop_front();
    }
    task();
  }
}

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::kQueueFull: return 503;
    case ErrorCode::kBackendMissing:
    case ErrorCode::kIo:
    case ErrorCode::kNonFinite: return 500;
    default: return 422;
  }
}

Service::Service(Models models, ServiceOptions options)
    : models_(std::move(models)),
      options_(options),
      server_(std::make_unique<httplib::Server>()),
      egn_queue_(options.queue_depth),
      mcrn_queue_(options.queue_depth),
      frn_queue_(options.queue_depth),
      chain_queue_(options.queue_depth) {
  server_->Get("/health", [this](const httplib::Request&, httplib::Response& res) {
    res.set_content(health().dump(), "application/json");
  });
  for (const char* path : {"/pose", "/render", "/refine", "/insert"}) {
    server_->Post(path, [this, path](const httplib::Request& req, httplib::Response& res) {
      nlohmann::json reply;
      try {
        nlohmann::json body;
        try {
          body = nlohmann::json::parse(req.body);
        } catch (const nlohmann::json::exception& e) {
          throw Error(ErrorCode::kValidation, std::string("request is not JSON: ") + e.what());
        }
        reply = handle(path, body);
        res.status = 200;
      } catch (const Error& e) {
        res.status = http_status(e.code());
        reply = error_body(e.code(), e.what());
      } catch (const std::exception& e) {
        res.status = 500;
        reply = {{"code", "internal_error"}, {"message", e.what()}};
      }
      res.set_content(reply.dump(), "application/json");
    });
  }
}

Service::~Service() { stop(); }

int Service::bind(const std::string& host, int port) {
  if (port == 0) return server_->bind_to_any_port(host);
  if (!server_->bind_to_port(host, port)) throw Error(ErrorCode::kIo, "cannot bind port " + std::to_string(port));
  return port;
}

void Service::serve() { server_->listen_after_bind(); }

void Service::stop() {
  if (server_) server_->stop();
}

JobQueue& Service::queue_for(const std::string& path) {
  if (path == "/pose") return egn_queue_;
  if (path == "/render") return mcrn_queue_;
  if (path == "/refine") return frn_queue_;
  return chain_queue_;
}

nlohmann::json Service::handle(const std::string& path, const nlohmann::json& body) {
  std::function<nlohmann::json()> job;
  if (path == "/pose") {
    job = [this, body] { return pose(body); };
  } else if (path == "/render") {
    job = [this, body] { return render(body); };
  } else if (path == "/refine") {
    job = [this, body] { return refine(body); };
  } else if (path == "/insert") {
    job = [this, body] { return insert(body); };
  } else {
    throw Error(ErrorCode::kValidation, "no endpoint " + path);
  }
  auto wrapped = [job]() -> nlohmann::json {
    try {
      return job();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kValidation, std::string("malformed request: ") + e.what());
    } catch (const cv::Exception& e) {
      throw Error(ErrorCode::kValidation, std::string("image error: ") + e.what());
    }
  };
  return queue_for(path).submit(wrapped).get();
}

nlohmann::json Service::health() const {
  return {{"status", "ok"},
          {"models", {{"egn", models_.egn != nullptr}, {"mcrn", models_.mcrn != nullptr}, {"frn", models_.frn != nullptr}}}};
}

nlohmann::json Service::pose(const nlohmann::json& body) {
  if (!models_.egn) throw Error(ErrorCode::kBackendMissing, "no pose generator loaded");
  const core::SemanticMap semantic(image_field(body, "semantic", 1));
  const core::BinaryChannel face(image_field(body, "face", 1));
  std::optional<core::Box> box;
  if (body.contains("bbox") && !body.at("bbox").is_null()) box = box_from_xywh(body.at("bbox"));
  std::lock_guard lock(egn_mutex_);
  const auto input = egn::build_egn_input(semantic, face, box, models_.egn->config().resolution);
  const auto p = models_.egn->generate(input);
  return {{"semantic", png_field(p.semantic.pixels())}, {"face", png_field(p.face.pixels())}};
}

nlohmann::json Service::render(const nlohmann::json& body) {
  if (!models_.mcrn) throw Error(ErrorCode::kBackendMissing, "no renderer loaded");
  const auto pose = pose_field(body);
  if (!body.contains("person")) throw Error(ErrorCode::kValidation, "missing person");
  const auto& person = body.at("person");
  const cv::Mat person_rgb = image_field(person, "image", 3);
  const core::SemanticMap person_parse(image_field(person, "parse", 1));
  core::AppearanceTensor t;
  if (body.contains("donor")) {
    const auto& donor = body.at("donor");
    std::vector<core::Part> swap;
    for (const auto& name : body.value("swap", nlohmann::json::array())) swap.push_back(part_from_name(name));
    t = mcrn::replace_component(person_rgb, person_parse, image_field(donor, "image", 3),
                                core::SemanticMap(image_field(donor, "parse", 1)), swap);
  } else {
    t = core::build_appearance_tensor(person_rgb, person_parse);
  }
  std::lock_guard lock(mcrn_mutex_);
  const auto s = models_.mcrn->config().resolution;
  const auto p = core::resize_nearest(pose, cv::Size(static_cast<int>(s), static_cast<int>(s)));
  const auto out = models_.mcrn->render(t, p);
  const auto x = body.contains("scene") ? scene_tensor(image_field(body, "scene", 3), s)
                                        : torch::full({3, s, s}, -1.0f);
  const auto o = mcrn::composite(x, out.z, out.m);
  return {{"z", rgb_field(out.z)}, {"m", png_field(core::mask_to_image(out.m))}, {"o", rgb_field(o)}};
}

nlohmann::json Service::refine(const nlohmann::json& body) {
  if (!models_.frn) throw Error(ErrorCode::kBackendMissing, "no face refiner loaded");
  const auto o = core::image_to_tensor(image_field(body, "o", 3));
  const core::BinaryChannel face(image_field(body, "face", 1));
  if (!body.contains("target")) throw Error(ErrorCode::kValidation, "missing target");
  const auto& target = body.at("target");
  const cv::Mat target_rgb = image_field(target, "image", 3);
  const auto sets = keypoint_sets(target.at("keypoints"));
  const auto target_face = core::face_hull_channel(sets, target_rgb.size());
  std::lock_guard lock(frn_mutex_);
  const auto& cfg = models_.frn->config();
  const auto target_crop =
      frn::crop_face(core::image_to_tensor(target_rgb), target_face.channel, cfg.margin, cfg.face_size);
  const auto w = models_.frn->refine_image(o, face, target_crop);
  return {{"w", rgb_field(w)}, {"face_box", xywh(frn::crop_face(o, face, cfg.margin, cfg.face_size).box)}};
}

nlohmann::json Service::insert(const nlohmann::json& body) {
  if (!body.contains("scene") || !body.contains("target")) {
    throw Error(ErrorCode::kValidation, "insert needs scene and target");
  }
  const auto& scene = body.at("scene");
  const auto& target = body.at("target");
  InsertionRequest req;
  req.scene_rgb = image_field(scene, "image", 3);
  std::vector<core::SemanticMap> persons;
  for (const auto& p : scene.value("persons", nlohmann::json::array())) {
    persons.push_back(core::SemanticMap(core::decode_png(base64_decode(p.get<std::string>()), 1)));
  }
  auto keypoints = scene.contains("keypoints") ? keypoint_sets(scene.at("keypoints")) : std::vector<core::KeypointSet>{};
  if (keypoints.size() > persons.size()) throw Error(ErrorCode::kValidation, "more keypoint sets than persons");
  keypoints.resize(persons.size());
  if (persons.empty()) {
    persons.push_back(core::SemanticMap::zeros(req.scene_rgb.size()));
    keypoints.resize(1);
  }
  req.scene = core::compose_scene(persons, keypoints);
  req.target_rgb = image_field(target, "image", 3);
  req.target_parse = core::SemanticMap(image_field(target, "parse", 1));
  if (target.contains("keypoints")) {
    const auto sets = keypoint_sets(target.at("keypoints"));
    if (!sets.empty()) req.target_keypoints = sets.front();
  }
  if (body.contains("bbox") && !body.at("bbox").is_null()) req.bbox = box_from_xywh(body.at("bbox"));
  req.skip_frn = body.value("skip_frn", false);
  req.seed = body.value("seed", options_.seed);

  std::scoped_lock lock(egn_mutex_, mcrn_mutex_, frn_mutex_);
  const auto r = insert_person(models_, req);
  nlohmann::json reply = {{"p", {{"semantic", png_field(r.p.semantic.pixels())}, {"face", png_field(r.p.face.pixels())}}},
                          {"z", rgb_field(r.z)},
                          {"m", png_field(core::mask_to_image(r.m))},
                          {"o", rgb_field(r.o)},
                          {"w", rgb_field(r.w)},
                          {"retries", r.retries},
                          {"refined", r.refined}};
  reply["bbox"] = r.bbox ? xywh(*r.bbox) : nlohmann::json(nullptr);
  return reply;
}

}  // namespace hi::pipeline
