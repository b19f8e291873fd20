#include <csignal>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <opencv2/imgcodecs.hpp>

#include "hi/core/encoding.hpp"
#include "hi/core/error.hpp"
#include "hi/core/io.hpp"
#include "hi/metrics/metrics.hpp"
#include "hi/pipeline/dataset.hpp"
#include "hi/pipeline/pipeline.hpp"
#include "hi/pipeline/service.hpp"

namespace fs = std::filesystem;
using namespace hi;

namespace {

pipeline::Service* g_service = nullptr;

void on_signal(int) {
  if (g_service) g_service->stop();
}

// An image inside a dataset root: <root>/images/<id>.png.
struct DatasetImage {
  fs::path root;
  std::string id;
};

DatasetImage locate(const fs::path& image) {
  if (!fs::exists(image)) throw Error(ErrorCode::kIo, "no such image " + image.string());
  return {image.parent_path().parent_path(), image.stem().string()};
}

std::vector<core::SemanticMap> read_persons(const DatasetImage& at, const core::LabelPalette& palette) {
  std::vector<std::pair<long, fs::path>> files;
  const auto dir = at.root / "parsing" / at.id;
  if (!fs::is_directory(dir)) throw Error(ErrorCode::kLayout, "no parsing directory " + dir.string());
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".png") files.emplace_back(std::stol(e.path().stem().string()), e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<core::SemanticMap> persons;
  for (const auto& [k, path] : files) persons.push_back(core::reduce_labels(core::read_gray_png(path), palette));
  return persons;
}

std::vector<core::KeypointSet> read_sets(const DatasetImage& at, std::size_t persons) {
  const auto path = at.root / "keypoints" / (at.id + ".json");
  auto sets = fs::exists(path) ? core::read_keypoints(path) : std::vector<core::KeypointSet>{};
  sets.resize(std::max(sets.size(), persons));
  return sets;
}

std::optional<core::Box> parse_bbox(const std::string& text) {
  if (text.empty()) return std::nullopt;
  int x, y, w, h;
  char c1, c2, c3;
  std::istringstream in(text);
  if (!(in >> x >> c1 >> y >> c2 >> w >> c3 >> h) || c1 != ',' || c2 != ',' || c3 != ',' || w <= 0 || h <= 0) {
    throw Error(ErrorCode::kValidation, "--bbox expects x,y,w,h");
  }
  return core::Box{x, y, x + w - 1, y + h - 1};
}

pipeline::Models load_models(const std::string& egn_path, const std::string& mcrn_path, const std::string& frn_path) {
  pipeline::Models models;
  if (!egn_path.empty()) models.egn = std::make_shared<egn::EgnModel>(egn::EgnModel::load(egn_path));
  if (!mcrn_path.empty()) models.mcrn = std::make_shared<mcrn::McrnModel>(mcrn::McrnModel::load(mcrn_path));
  if (!frn_path.empty()) models.frn = std::make_shared<frn::FrnModel>(frn::FrnModel::load(frn_path));
  return models;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Context-aware human insertion: pose generation, rendering, face refinement"};
  app.require_subcommand(1);

  auto* ingest_cmd = app.add_subcommand("ingest", "Index a dataset directory");
  std::string ingest_root, ingest_out;
  ingest_cmd->add_option("root", ingest_root, "Dataset root")->required();
  ingest_cmd->add_option("--out", ingest_out, "Write the index as JSON");

  auto* train_cmd = app.add_subcommand("train", "Train one network");
  std::string net_name, config_path, train_data, train_out;
  train_cmd->add_option("--net", net_name, "egn | egn-prime | mcrn | frn")
      ->required()
      ->check(CLI::IsMember({"egn", "egn-prime", "mcrn", "frn"}));
  train_cmd->add_option("--config", config_path, "Run configuration (JSON)")->required();
  train_cmd->add_option("--data", train_data, "Dataset root")->required();
  train_cmd->add_option("--out", train_out, "Output directory (overrides the config)");

  auto* insert_cmd = app.add_subcommand("insert", "Insert a target person into a scene");
  std::string scene_image, target_image, bbox_text, egn_ckpt, mcrn_ckpt, frn_ckpt, insert_out = "insert_out";
  int target_person = 0;
  bool skip_frn = false;
  std::uint64_t insert_seed = 0;
  insert_cmd->add_option("--scene", scene_image, "Scene image inside a dataset root (images/<id>.png)")->required();
  insert_cmd->add_option("--target", target_image, "Target image inside a dataset root")->required();
  insert_cmd->add_option("--target-person", target_person, "Person index in the target image");
  insert_cmd->add_option("--bbox", bbox_text, "x,y,w,h in scene pixels");
  insert_cmd->add_flag("--skip-frn", skip_frn, "Return the composite without face refinement");
  insert_cmd->add_option("--egn", egn_ckpt, "Pose generator checkpoint")->required();
  insert_cmd->add_option("--mcrn", mcrn_ckpt, "Renderer checkpoint")->required();
  insert_cmd->add_option("--frn", frn_ckpt, "Face refiner checkpoint");
  insert_cmd->add_option("--seed", insert_seed, "Seed for box sampling");
  insert_cmd->add_option("--out", insert_out, "Output directory");

  auto* metrics_cmd = app.add_subcommand("metrics", "DPBS / DPIS over two folders of dense index maps");
  std::string gt_dir, gen_dir, report_kind = "json", convention = "present", report_out;
  bool by_order = false;
  metrics_cmd->add_option("--gt", gt_dir, "Ground-truth folder")->required();
  metrics_cmd->add_option("--gen", gen_dir, "Generated folder")->required();
  metrics_cmd->add_flag("--by-order", by_order, "Pair files by sorted position instead of name");
  metrics_cmd->add_option("--report", report_kind, "json | csv")->check(CLI::IsMember({"json", "csv"}));
  metrics_cmd->add_option("--convention", convention, "present | literal")
      ->check(CLI::IsMember({"present", "literal"}));
  metrics_cmd->add_option("--output", report_out, "Write the report here instead of stdout");

  auto* serve_cmd = app.add_subcommand("serve", "Run the local HTTP service");
  int port = 8080;
  std::string host = "127.0.0.1";
  std::size_t queue_depth = 8;
  serve_cmd->add_option("--port", port, "Port (0 picks a free one)");
  serve_cmd->add_option("--host", host, "Bind address");
  serve_cmd->add_option("--queue-depth", queue_depth, "Waiting jobs per model");
  serve_cmd->add_option("--egn", egn_ckpt, "Pose generator checkpoint");
  serve_cmd->add_option("--mcrn", mcrn_ckpt, "Renderer checkpoint");
  serve_cmd->add_option("--frn", frn_ckpt, "Face refiner checkpoint");

  CLI11_PARSE(app, argc, argv);

  try {
    if (ingest_cmd->parsed()) {
      const auto index = pipeline::ingest(ingest_root);
      std::cout << "samples " << index.samples.size() << "\negn_samples " << index.egn_samples.size()
                << "\nmcrn_samples " << index.mcrn_samples.size() << "\nrejects " << index.rejects.size()
                << "\nhash " << index.hash() << '\n';
      for (const auto& r : index.rejects) std::cout << "reject " << r.id << ": " << r.reason << '\n';
      if (!ingest_out.empty()) std::ofstream(ingest_out) << index.to_json().dump(2) << '\n';
    } else if (train_cmd->parsed()) {
      auto config = pipeline::RunConfig::load(config_path);
      if (!train_out.empty()) config.out_dir = train_out;
      const auto index = pipeline::ingest(train_data);
      const auto result = pipeline::train(pipeline::network_from_string(net_name), config, index);
      std::cout << "steps " << result.first_step << ".." << result.steps << "\ncheckpoint "
                << result.checkpoint.string() << "\nlog " << result.log.string() << '\n';
    } else if (insert_cmd->parsed()) {
      const auto palette = core::LabelPalette::multi_human_parsing();
      const auto scene_at = locate(scene_image);
      const auto target_at = locate(target_image);
      pipeline::InsertionRequest req;
      req.scene_rgb = core::read_rgb(scene_image);
      const auto persons = read_persons(scene_at, palette);
      req.scene = core::compose_scene(persons, read_sets(scene_at, persons.size()));
      req.target_rgb = core::read_rgb(target_image);
      const auto target_persons = read_persons(target_at, palette);
      if (target_person < 0 || target_person >= static_cast<int>(target_persons.size())) {
        throw Error(ErrorCode::kOutOfRange, "target image has no person " + std::to_string(target_person));
      }
      req.target_parse = target_persons[target_person];
      req.target_keypoints = read_sets(target_at, target_persons.size())[target_person];
      req.bbox = parse_bbox(bbox_text);
      req.skip_frn = skip_frn;
      req.seed = insert_seed;
      const auto models = load_models(egn_ckpt, mcrn_ckpt, frn_ckpt);
      const auto r = pipeline::insert_person(models, req);
      fs::create_directories(insert_out);
      const fs::path out(insert_out);
      core::write_png(out / "p_semantic.png", r.p.semantic);
      core::write_png(out / "p_face.png", r.p.face);
      core::write_rgb_png(out / "z.png", core::tensor_to_image(r.z));
      core::write_png(out / "m.png", core::mask_to_image(r.m));
      core::write_rgb_png(out / "o.png", core::tensor_to_image(r.o));
      core::write_rgb_png(out / "w.png", core::tensor_to_image(r.w));
      std::cout << "retries " << r.retries << "\nrefined " << (r.refined ? "yes" : "no") << "\nout " << out.string()
                << '\n';
    } else if (metrics_cmd->parsed()) {
      const auto report = metrics::evaluate_directory(
          gt_dir, gen_dir, by_order ? metrics::Pairing::kByOrder : metrics::Pairing::kByName,
          convention == "literal" ? metrics::DpisConvention::kLiteral : metrics::DpisConvention::kPresent);
      const std::string text = report_kind == "csv" ? report.to_csv() : report.to_json().dump(2) + "\n";
      if (report_out.empty()) {
        std::cout << text;
      } else {
        std::ofstream(report_out) << text;
      }
    } else if (serve_cmd->parsed()) {
      pipeline::Service service(load_models(egn_ckpt, mcrn_ckpt, frn_ckpt), {.queue_depth = queue_depth});
      const int bound = service.bind(host, port);
      std::cout << "listening on " << host << ':' << bound << std::endl;
      g_service = &service;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      service.serve();
      g_service = nullptr;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << to_string(e.code()) << ": " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
