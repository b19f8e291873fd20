#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <future>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "hi/core/error.hpp"
#include "hi/pipeline/pipeline.hpp"

namespace httplib {
class Server;
}

namespace hi::pipeline {

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
/// Throws Error(kValidation) for malformed input.
std::vector<std::uint8_t> base64_decode(const std::string& text);

/// Runs submitted jobs one at a time, in submission order, on its own thread.
/// At most `depth` jobs may wait; beyond that submit throws
/// Error(kQueueFull).
class JobQueue {
 public:
  explicit JobQueue(std::size_t depth);
  ~JobQueue();
  JobQueue(const JobQueue&) = delete;
  JobQueue& operator=(const JobQueue&) = delete;

  std::future<nlohmann::json> submit(std::function<nlohmann::json()> job);
  std::size_t pending() const;

 private:
  void run();

  std::size_t depth_;
  mutable std::mutex mutex_;
  std::condition_variable ready_;
  std::deque<std::packaged_task<nlohmann::json()>> jobs_;
  bool stopping_ = false;
  std::thread worker_;
};

/// HTTP status for an error code: 503 for a full queue, 500 for missing
/// backends and I/O faults, 422 otherwise.
int http_status(ErrorCode code);

struct ServiceOptions {
  std::size_t queue_depth = 8;
  std::uint64_t seed = 0;
};

/// JSON over HTTP; images travel as base64 PNG strings.
///
///   GET  /health   -> {status, models: {egn, mcrn, frn}}
///   POST /pose     {semantic, face, bbox?: [x, y, w, h]} -> {semantic, face}
///   POST /render   {pose: {semantic, face}, person: {image, parse},
///                   donor?: {image, parse}, swap?: [part names], scene?}
///                   -> {z, m, o}
///   POST /refine   {o, face, target: {image, keypoints}} -> {w, face_box}
///   POST /insert   {scene: {image, persons: [semantic PNGs], keypoints},
///                   target: {image, parse, keypoints}, bbox?, skip_frn?,
///                   seed?} -> {p: {semantic, face}, z, m, o, w, bbox, retries}
///
/// Part names: hair, face, upper_wear, lower_wear, skin, shoes. A render
/// without a scene composites over black. Failures answer {code, message}.
class Service {
 public:
  Service(Models models, ServiceOptions options = {});
  ~Service();

  /// Binds to host:port (port 0 picks a free one) and returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves until stop(); call after bind.
  void serve();
  void stop();

  /// The JSON handlers without the transport, for in-process use.
  nlohmann::json handle(const std::string& path, const nlohmann::json& body);

 private:
  nlohmann::json pose(const nlohmann::json& body);
  nlohmann::json render(const nlohmann::json& body);
  nlohmann::json refine(const nlohmann::json& body);
  nlohmann::json insert(const nlohmann::json& body);
  nlohmann::json health() const;
  JobQueue& queue_for(const std::string& path);

  Models models_;
  ServiceOptions options_;
  std::mutex egn_mutex_;
  std::mutex mcrn_mutex_;
  std::mutex frn_mutex_;
  std::unique_ptr<httplib::Server> server_;
  JobQueue egn_queue_;
  JobQueue mcrn_queue_;
  JobQueue frn_queue_;
  JobQueue chain_queue_;
};

}  // namespace hi::pipeline
