#include "doctest_torch.hpp"

#include <atomic>
#include <chrono>
#include <fstream>
#include <random>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <torch/torch.h>

#include "hi/core/encoding.hpp"
#include "hi/core/error.hpp"
#include "hi/core/io.hpp"
#include "hi/pipeline/dataset.hpp"
#include "hi/pipeline/pipeline.hpp"
#include "hi/pipeline/service.hpp"
#include "synthetic.hpp"

using namespace hi;
using namespace hi::pipeline;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

ErrorCode code_of_call(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no hi::Error thrown");
  return ErrorCode::kValidation;
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  return lines;
}

void write_json(const fs::path& path, const json& doc) { std::ofstream(path) << doc.dump(); }

// Untrained desk models with fixed seeds; built once per process.
const Models& desk_models() {
  static const Models models = [] {
    auto e = egn::EgnConfig::desk(egn::Variant::kWithBBox);
    e.seed = 3;
    auto m = mcrn::McrnConfig::desk();
    m.seed = 4;
    auto f = frn::FrnConfig::desk();
    f.seed = 5;
    return Models{std::make_shared<egn::EgnModel>(e), std::make_shared<mcrn::McrnModel>(m),
                  std::make_shared<frn::FrnModel>(f)};
  }();
  return models;
}

InsertionRequest insertion_request() {
  const auto scenes = testing::mini_dataset();
  const auto scene = testing::scene_fixture(scenes[0]);
  const auto target = testing::scene_fixture(scenes[2]);
  InsertionRequest req;
  req.scene_rgb = scene.rgb;
  req.scene = scene.scene;
  req.target_rgb = target.rgb;
  req.target_parse = target.scene.persons[0];
  req.target_keypoints = target.scene.keypoints[0];
  req.seed = 17;
  return req;
}

std::string png64(const cv::Mat& m) { return base64_encode(core::encode_png(m)); }
std::string rgb64(const cv::Mat& rgb) { return base64_encode(core::encode_rgb_png(rgb)); }

}  // namespace

TEST_CASE("ingest the mini dataset") {
  const auto root = testing::scratch_dir("ingest");
  testing::write_dataset(root, testing::mini_dataset());
  const auto index = ingest(root);
  CHECK(index.samples.size() == 5);
  CHECK(index.egn_samples.size() == 9);
  CHECK(index.mcrn_samples.size() == 11);
  CHECK(index.rejects.empty());
  CHECK(index.hash() == ingest(root).hash());
  // s001 person 1 has no face.
  CHECK(std::find(index.egn_samples.begin(), index.egn_samples.end(), PersonRef{1, 1}) == index.egn_samples.end());
  CHECK(index.samples[1].has_face == std::vector<bool>{true, false, true});

  const auto loaded = load_scene(index, 3);
  CHECK(loaded.rgb.size() == cv::Size(128, 128));
  CHECK(loaded.parse.persons.size() == 3);
  CHECK(loaded.parse.keypoints[1].empty());

  SUBCASE("a broken sample is rejected, not fatal") {
    cv::imwrite((root / "images" / "zz_bad.png").string(), cv::Mat::zeros(16, 16, CV_8UC3));
    fs::create_directories(root / "parsing" / "zz_bad");
    cv::imwrite((root / "parsing" / "zz_bad" / "0.png").string(), cv::Mat::zeros(8, 8, CV_8UC1));
    const auto with_bad = ingest(root);
    CHECK(with_bad.samples.size() == 5);
    REQUIRE(with_bad.rejects.size() == 1);
    CHECK(with_bad.rejects[0].id == "zz_bad");
    CHECK(with_bad.hash() != index.hash());
  }
  SUBCASE("split files") {
    write_json(root / "split.json", {{"train", {"s000", "s001"}}, {"test", {"s001"}}});
    CHECK(code_of_call([&] { ingest(root); }) == ErrorCode::kLayout);
    write_json(root / "split.json", {{"train", {"s000"}}, {"test", {"s004"}}});
    const auto split = ingest(root);
    CHECK(split.split.at("s004") == "test");
  }
  SUBCASE("layout errors") {
    CHECK(code_of_call([&] { ingest(root / "nowhere"); }) == ErrorCode::kLayout);
    const auto empty = testing::scratch_dir("ingest_empty");
    fs::create_directories(empty / "images");
    fs::create_directories(empty / "parsing");
    CHECK(code_of_call([&] { ingest(empty); }) == ErrorCode::kEmptyDataset);
    fs::remove_all(empty);
  }
  fs::remove_all(root);
}

TEST_CASE("sample_inference_bbox") {
  const core::Box ref{10, 20, 29, 59};  // 20 x 40
  const cv::Size frame(100, 100);
  SUBCASE("midpoint draws keep the size and centre the box") {
    const auto b = sample_inference_bbox(ref, frame, [] { return 0.5; }).box;
    CHECK(b == core::Box{40, 20, 59, 59});
  }
  SUBCASE("a left-edge draw is clipped to the frame") {
    std::vector<double> draws{0.5, 0.5, 0.0};
    std::size_t i = 0;
    const auto b = sample_inference_bbox(ref, frame, [&] { return draws[i++]; }).box;
    CHECK(b.x_min == 0);
    CHECK(b.x_max == 9);
    CHECK(b.height() == 40);
  }
  SUBCASE("distribution of 10k draws") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const UniformSource draw = [&] { return u(rng); };
    double height_sum = 0, cy_sum = 0;
    int left = 0, right = 0;
    const int n = 10000;
    for (int k = 0; k < n; ++k) {
      const auto c = sample_inference_bbox(ref, frame, draw);
      const auto& b = c.box;
      REQUIRE(b.inside(frame));
      CHECK(cv::countNonZero(c.channel.pixels()) == b.width() * b.height());
      REQUIRE(b.height() >= 36);
      REQUIRE(b.height() <= 44);
      height_sum += b.height();
      cy_sum += (b.y_min + b.y_max) / 2.0;
      left += b.x_min == 0;
      right += b.x_max == frame.width - 1;
    }
    // Uniform scale draws in [0.9, 1.1] average to 1.
    CHECK(std::abs(height_sum / n - 40.0) < 0.1);
    CHECK(std::abs(cy_sum / n - 39.5) < 0.15);
    // The horizontal centre spans the frame, so both edges get clipped.
    CHECK(left > n / 20);
    CHECK(right > n / 20);
  }
  CHECK(code_of_call([&] { sample_inference_bbox({5, 5, 4, 4}, frame, [] { return 0.5; }); }) ==
        ErrorCode::kEmptyPerson);
}

TEST_CASE("run configuration") {
  const auto full = RunConfig::full();
  CHECK(full.egn_schedule.epochs == 300);
  CHECK(full.egn_schedule.batch_size == 64);
  CHECK(full.mcrn_schedule.epochs == 200);
  CHECK(full.mcrn_schedule.batch_size == 32);
  CHECK(full.egn.resolution == 368);
  CHECK(full.mcrn.resolution == 512);
  CHECK(RunConfig::from_json(full.to_json()).to_json() == full.to_json());
  const auto desk = RunConfig::from_json({{"preset", "desk"}, {"seed", 9}});
  CHECK(desk.seed == 9);
  CHECK(desk.mcrn.resolution == 128);
  CHECK(&desk.schedule(Network::kMcrn) == &desk.mcrn_schedule);
  CHECK(network_from_string("egn_prime") == Network::kEgnPrime);
  CHECK(network_from_string(to_string(Network::kFrn)) == Network::kFrn);
}

TEST_CASE("training writes a log and resumes") {
  const auto root = testing::scratch_dir("train");
  testing::write_dataset(root / "data", testing::mini_dataset());
  const auto index = ingest(root / "data");
  auto cfg = RunConfig::desk();
  cfg.out_dir = root / "runs";
  cfg.checkpoint_every = 0;
  cfg.seed = 2;
  cfg.egn_schedule.max_steps = 2;
  const auto first = train(Network::kEgn, cfg, index);
  CHECK(first.steps == 2);
  CHECK(first.first_step == 1);
  CHECK(fs::exists(first.checkpoint));
  CHECK(read_lines(first.log).size() == 2);

  cfg.egn_schedule.max_steps = 4;
  const auto second = train(Network::kEgn, cfg, index);
  CHECK(second.first_step == 3);
  CHECK(second.steps == 4);
  const auto lines = read_lines(second.log);
  REQUIRE(lines.size() == 4);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto rec = json::parse(lines[i]);
    CHECK(rec["step"] == i + 1);
    CHECK(rec["network"] == "egn");
    CHECK(rec.contains("components"));
  }
  const auto ckpt = nn::Checkpoint::load(second.checkpoint);
  CHECK(ckpt.header["step"] == 4);
  CHECK(ckpt.header["palette_hash"] == std::to_string(index.palette.hash()));

  cfg.seed = 3;
  CHECK(code_of_call([&] { train(Network::kEgn, cfg, index); }) == ErrorCode::kValidation);

  SUBCASE("observer stops early") {
    cfg.seed = 2;
    cfg.resume = false;
    cfg.egn_schedule.max_steps = 10;
    const auto r = train(Network::kEgn, cfg, index, [](std::int64_t step, const nn::LossReport&) { return step < 1; });
    CHECK(r.stopped_early);
    CHECK(r.steps == 1);
    CHECK(read_lines(r.log).size() == 1);
  }
  fs::remove_all(root);
}

TEST_CASE("test-split samples never reach training") {
  const auto root = testing::scratch_dir("heldout");
  testing::write_dataset(root / "data", testing::mini_dataset());
  write_json(root / "data" / "split.json", {{"test", {"s000", "s001", "s002", "s003", "s004"}}});
  const auto index = ingest(root / "data");
  auto cfg = RunConfig::desk();
  cfg.out_dir = root / "runs";
  CHECK(code_of_call([&] { train(Network::kEgn, cfg, index); }) == ErrorCode::kEmptyDataset);
  CHECK(code_of_call([&] { train(Network::kMcrn, cfg, index); }) == ErrorCode::kEmptyDataset);
  fs::remove_all(root);
}

TEST_CASE("insert_person") {
  const auto& models = desk_models();
  auto req = insertion_request();
  const auto a = insert_person(models, req);
  CHECK(a.o.sizes() == torch::IntArrayRef({3, 128, 128}));
  CHECK(a.m.min().item<double>() >= 0.0);
  CHECK(a.m.max().item<double>() <= 1.0);
  REQUIRE(a.bbox.has_value());
  CHECK(a.bbox->inside(req.scene_rgb.size()));
  CHECK(torch::equal(a.o, mcrn::composite(a.x, a.z, a.m)));

  SUBCASE("same request, same output") {
    const auto b = insert_person(models, req);
    CHECK(torch::equal(a.w, b.w));
    CHECK(*a.bbox == *b.bbox);
  }
  SUBCASE("skipping the refiner returns o") {
    req.skip_frn = true;
    const auto b = insert_person(models, req);
    CHECK(torch::equal(b.w, b.o));
    CHECK_FALSE(b.refined);
  }
  SUBCASE("box-free generator rejects a box") {
    auto prime = models;
    prime.egn = std::make_shared<egn::EgnModel>(egn::EgnConfig::desk(egn::Variant::kWithoutBBox));
    req.bbox = core::Box{10, 10, 40, 100};
    CHECK(code_of_call([&] { insert_person(prime, req); }) == ErrorCode::kVariantMismatch);
  }
  SUBCASE("box outside the frame") {
    req.bbox = core::Box{100, 10, 140, 100};
    CHECK(code_of_call([&] { insert_person(models, req); }) == ErrorCode::kOutOfRange);
  }
  SUBCASE("missing models") {
    CHECK(code_of_call([&] { insert_person(Models{}, req); }) == ErrorCode::kValidation);
  }
}

TEST_CASE("base64") {
  std::mt19937 rng(3);
  for (std::size_t n = 0; n < 40; ++n) {
    std::vector<std::uint8_t> bytes(n);
    for (auto& b : bytes) b = static_cast<std::uint8_t>(rng());
    CHECK(base64_decode(base64_encode(bytes)) == bytes);
  }
  CHECK(base64_encode({'f', 'o', 'o', 'b'}) == "Zm9vYg==");
  CHECK(code_of_call([] { base64_decode("abc"); }) == ErrorCode::kValidation);
  CHECK(code_of_call([] { base64_decode("a$c!"); }) == ErrorCode::kValidation);
}

TEST_CASE("job queue") {
  CHECK(http_status(ErrorCode::kQueueFull) == 503);
  CHECK(http_status(ErrorCode::kBackendMissing) == 500);
  CHECK(http_status(ErrorCode::kValidation) == 422);
  CHECK(http_status(ErrorCode::kEmptyGeneration) == 422);

  JobQueue queue(1);
  std::promise<void> started, release;
  auto release_future = release.get_future().share();
  std::vector<int> order;
  std::mutex order_mutex;
  auto f1 = queue.submit([&] {
    started.set_value();
    release_future.wait();
    std::lock_guard lock(order_mutex);
    order.push_back(1);
    return json(1);
  });
  started.get_future().wait();
  auto f2 = queue.submit([&] {
    std::lock_guard lock(order_mutex);
    order.push_back(2);
    return json(2);
  });
  CHECK(queue.pending() == 1);
  CHECK(code_of_call([&] { queue.submit([] { return json(3); }); }) == ErrorCode::kQueueFull);
  release.set_value();
  CHECK(f1.get() == 1);
  CHECK(f2.get() == 2);
  CHECK(order == std::vector<int>{1, 2});
}

TEST_CASE("HTTP service") {
  Service service(desk_models());
  const int port = service.bind("127.0.0.1", 0);
  REQUIRE(port > 0);
  std::thread server([&] { service.serve(); });
  httplib::Client client("127.0.0.1", port);
  client.set_read_timeout(300, 0);
  httplib::Result health;
  for (int i = 0; i < 100 && !health; ++i) {
    health = client.Get("/health");
    if (!health) std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  REQUIRE(health);
  CHECK(health->status == 200);
  const auto h = json::parse(health->body);
  CHECK(h["status"] == "ok");
  CHECK(h["models"]["egn"] == true);

  const auto fx = testing::scene_fixture(testing::mini_dataset()[0]);
  const auto target = testing::scene_fixture(testing::mini_dataset()[2]);

  SUBCASE("/pose") {
    const json body = {{"semantic", png64(fx.scene.semantic.pixels())},
                       {"face", png64(fx.scene.face.pixels())},
                       {"bbox", {20, 20, 30, 90}}};
    const auto res = client.Post("/pose", body.dump(), "application/json");
    REQUIRE(res);
    CHECK(res->status == 200);
    const auto reply = json::parse(res->body);
    const auto s = core::decode_png(base64_decode(reply["semantic"]), 1);
    CHECK(s.size() == cv::Size(96, 96));
    CHECK_NOTHROW(core::SemanticMap{s});
  }
  SUBCASE("/pose with a missing field answers 422") {
    const json body = {{"semantic", png64(fx.scene.semantic.pixels())}};
    const auto res = client.Post("/pose", body.dump(), "application/json");
    REQUIRE(res);
    CHECK(res->status == 422);
    CHECK(json::parse(res->body)["code"] == std::string(to_string(ErrorCode::kValidation)));
    const auto bad = client.Post("/pose", "{not json", "application/json");
    REQUIRE(bad);
    CHECK(bad->status == 422);
  }
  SUBCASE("/render and /refine") {
    const auto pose = core::person_pose(fx.scene, 1);
    const json body = {{"pose", {{"semantic", png64(pose.semantic.pixels())}, {"face", png64(pose.face.pixels())}}},
                       {"person", {{"image", rgb64(target.rgb)}, {"parse", png64(target.scene.persons[0].pixels())}}},
                       {"scene", rgb64(fx.rgb)}};
    const auto res = client.Post("/render", body.dump(), "application/json");
    REQUIRE(res);
    REQUIRE(res->status == 200);
    const auto reply = json::parse(res->body);
    const auto o = core::decode_png(base64_decode(reply["o"]), 3);
    CHECK(o.size() == cv::Size(128, 128));

    json kp = json::array();
    for (const auto& p : target.scene.keypoints[0]) kp.push_back({p.x, p.y});
    const json refine = {{"o", reply["o"]},
                         {"face", png64(pose.face.pixels())},
                         {"target", {{"image", rgb64(target.rgb)}, {"keypoints", kp}}}};
    const auto rr = client.Post("/refine", refine.dump(), "application/json");
    REQUIRE(rr);
    CHECK(rr->status == 200);
    const auto rj = json::parse(rr->body);
    CHECK(rj["face_box"].size() == 4);
    CHECK(core::decode_png(base64_decode(rj["w"]), 3).size() == cv::Size(128, 128));
  }
  SUBCASE("/insert matches the in-process pipeline") {
    json persons = json::array();
    for (const auto& p : fx.scene.persons) persons.push_back(png64(p.pixels()));
    const json body = {
        {"scene", {{"image", rgb64(fx.rgb)}, {"persons", persons}, {"keypoints", core::keypoints_to_json(fx.scene.keypoints)}}},
        {"target",
         {{"image", rgb64(target.rgb)},
          {"parse", png64(target.scene.persons[0].pixels())},
          {"keypoints", core::keypoints_to_json({target.scene.keypoints[0]})}}},
        {"seed", 17}};
    const auto res = client.Post("/insert", body.dump(), "application/json");
    REQUIRE(res);
    REQUIRE(res->status == 200);
    const auto reply = json::parse(res->body);
    const auto direct = insert_person(desk_models(), insertion_request());
    CHECK(reply["retries"] == direct.retries);
    CHECK(reply["bbox"] == json{direct.bbox->x_min, direct.bbox->y_min, direct.bbox->width(), direct.bbox->height()});
    const auto w = core::decode_png(base64_decode(reply["w"]), 3);
    CHECK(cv::countNonZero(w.reshape(1) != core::tensor_to_image(direct.w).reshape(1)) == 0);
  }
  service.stop();
  server.join();
}
