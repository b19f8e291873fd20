#include "doctest_torch.hpp"

#include <cmath>

#include <torch/torch.h>

#include "hi/core/encoding.hpp"
#include "hi/core/error.hpp"
#include "hi/core/io.hpp"
#include "hi/frn/frn.hpp"
#include "synthetic.hpp"

using namespace hi;
using namespace hi::frn;

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

core::FaceChannel square_face(cv::Size frame, cv::Rect r) {
  cv::Mat m = cv::Mat::zeros(frame, CV_8UC1);
  m(r).setTo(255);
  return core::FaceChannel(m);
}

}  // namespace

TEST_CASE("face box margin") {
  const core::Box tight{50, 60, 89, 99};  // 40 x 40
  const auto box = expand_face_box(tight, 0.3, {200, 200});
  CHECK(box.width() == 52);
  CHECK(box.height() == 52);
  CHECK(box.x_min == 44);
  CHECK(box.y_min == 54);
  CHECK(expand_face_box(tight, 0.0, {200, 200}) == tight);

  SUBCASE("clipped at the frame edge") {
    const auto edge = expand_face_box({0, 0, 39, 39}, 0.3, {200, 200});
    CHECK(edge.x_min == 0);
    CHECK(edge.y_min == 0);
    CHECK(edge.x_max == 45);
    CHECK(edge.inside({200, 200}));
    const auto corner = expand_face_box({170, 180, 199, 199}, 0.3, {200, 200});
    CHECK(corner.x_max == 199);
    CHECK(corner.y_max == 199);
  }
}

TEST_CASE("crop_face") {
  torch::manual_seed(2);
  const auto image = torch::rand({3, 64, 80}) * 2 - 1;
  const auto face = square_face({80, 64}, {20, 10, 16, 16});
  SUBCASE("margin zero at native size is the exact region") {
    const auto crop = crop_face(image, face, 0.0, 16);
    CHECK(crop.box == core::Box{20, 10, 35, 25});
    CHECK((crop.pixels - image.slice(1, 10, 26).slice(2, 20, 36)).abs().max().item<double>() <= 1e-6);
  }
  SUBCASE("default margin") {
    const auto crop = crop_face(image, face);
    CHECK(crop.pixels.sizes() == torch::IntArrayRef({3, 128, 128}));
    CHECK(crop.box.width() == 21);
    CHECK(crop.margin == 0.3);
  }
  CHECK(code_of_call([&] { crop_face(image, core::FaceChannel::zeros({80, 64})); }) == ErrorCode::kNoFace);
  CHECK(code_of_call([&] { crop_face(image, square_face({64, 64}, {1, 1, 4, 4})); }) ==
        ErrorCode::kShapeMismatch);
}

TEST_CASE("face backends") {
  const RandomFaceBackend a(5, 32), b(5, 32), c(6, 32);
  torch::manual_seed(3);
  const auto faces = torch::rand({2, 3, 64, 64}) * 2 - 1;
  const auto ea = a.embed(faces);
  CHECK(ea.sizes() == torch::IntArrayRef({2, 32}));
  CHECK(torch::equal(ea, b.embed(faces)));
  CHECK_FALSE(torch::equal(ea, c.embed(faces)));

  FaceCrop crop{faces[0], {0, 0, 63, 63}, 0.3};
  CHECK(embed_face(crop, &a).sizes() == torch::IntArrayRef({32}));
  CHECK(code_of_call([&] { embed_face(crop, nullptr); }) == ErrorCode::kBackendMissing);
  CHECK(code_of_call([] { TorchScriptFaceBackend("/nonexistent/model.pt", 128); }) == ErrorCode::kBackendMissing);
}

TEST_CASE("identity loss") {
  const auto a = torch::tensor({1.0, 2.0, -1.0, 0.5}, torch::kFloat64);
  const auto b = torch::tensor({0.0, 2.5, 1.0, 0.5}, torch::kFloat64);
  // (1 + 0.5 + 2 + 0) / 4
  CHECK(identity_loss(a, b).item<double>() == doctest::Approx(0.875).epsilon(1e-15));
  CHECK(identity_loss(a, b).item<double>() == identity_loss(b, a).item<double>());
  CHECK(identity_loss(a, a).item<double>() == 0.0);
}

TEST_CASE("blend_face") {
  torch::manual_seed(8);
  const auto o = torch::rand({3, 40, 50}) * 2 - 1;
  const core::Box box{10, 5, 29, 24};
  const auto f = torch::rand({3, 20, 20}) * 2 - 1;
  const auto m = torch::rand({1, 20, 20});
  const auto w = blend_face(o, f, m, box);
  auto outside = torch::ones({3, 40, 50}, torch::kBool);
  outside.slice(1, 5, 25).slice(2, 10, 30).fill_(false);
  CHECK(torch::equal(w.masked_select(outside), o.masked_select(outside)));
  const auto region = o.slice(1, 5, 25).slice(2, 10, 30);
  CHECK((w.slice(1, 5, 25).slice(2, 10, 30) - (region * (1 - m) + f * m)).abs().max().item<double>() <= 1e-6);
  CHECK(code_of_call([&] { blend_face(o, f, m, {35, 5, 54, 24}); }) == ErrorCode::kOutOfRange);
  CHECK(code_of_call([&] { blend_face(o, f, m, {10, 5, 30, 24}); }) == ErrorCode::kShapeMismatch);
}

TEST_CASE("refine") {
  auto cfg = FrnConfig::desk();
  cfg.seed = 4;
  FrnModel model(cfg);
  CHECK(model.conditioned_latent() == cfg.latent + cfg.descriptor_dim);
  torch::manual_seed(6);
  const FaceCrop crop{torch::rand({3, cfg.face_size, cfg.face_size}) * 2 - 1, {0, 0, 63, 63}, 0.3};
  const auto d = embed_face(crop, &model.backend());
  CHECK(d.numel() == cfg.descriptor_dim);
  const auto r = model.refine(crop, d);
  CHECK(r.f.sizes() == torch::IntArrayRef({3, cfg.face_size, cfg.face_size}));
  CHECK(r.m.sizes() == torch::IntArrayRef({1, cfg.face_size, cfg.face_size}));
  CHECK(r.m.min().item<double>() >= 0.0);
  CHECK(r.m.max().item<double>() <= 1.0);
  CHECK(code_of_call([&] { model.refine(crop, torch::zeros({cfg.descriptor_dim + 1})); }) ==
        ErrorCode::kShapeMismatch);

  SUBCASE("refine_image leaves everything outside the face box alone") {
    const auto fx = testing::scene_fixture(testing::single_figure());
    const auto o = core::image_to_tensor(fx.rgb);
    const auto w = model.refine_image(o, fx.scene.face, crop);
    const auto box = crop_face(o, fx.scene.face, cfg.margin, cfg.face_size).box;
    auto outside = torch::ones(o.sizes(), torch::kBool);
    outside.slice(1, box.y_min, box.y_max + 1).slice(2, box.x_min, box.x_max + 1).fill_(false);
    CHECK(torch::equal(w.masked_select(outside), o.masked_select(outside)));
  }
}

TEST_CASE("degrade keeps the size and removes detail") {
  FrnModel model(FrnConfig::desk());
  torch::manual_seed(9);
  const auto faces = torch::rand({2, 3, 64, 64}) * 2 - 1;
  const auto d = model.degrade(faces);
  CHECK(d.sizes() == faces.sizes());
  CHECK(d.var().item<double>() < faces.var().item<double>());
  const auto flat = torch::full({1, 3, 64, 64}, 0.25);
  CHECK((model.degrade(flat) - flat).abs().max().item<double>() <= 1e-6);
}

TEST_CASE("training step and checkpoint") {
  const auto dir = testing::scratch_dir("frn_ckpt");
  auto cfg = FrnConfig::desk();
  cfg.seed = 1;
  FrnModel model(cfg);
  torch::manual_seed(10);
  const FrnSample s{torch::rand({3, cfg.face_size, cfg.face_size}) * 2 - 1};
  const auto r = model.training_step(std::span(&s, 1));
  for (const char* name : {"adversarial_g", "fm_discriminator", "face_identity", "recon_l1", "mask_grad",
                           "adversarial_d"}) {
    CAPTURE(name);
    REQUIRE(r.has(name));
    CHECK(std::isfinite(r.at(name)));
  }
  CHECK(code_of_call([&] { model.training_step(std::span<const FrnSample>{}); }) == ErrorCode::kValidation);

  model.save(dir / "frn.ckpt");
  auto loaded = FrnModel::load(dir / "frn.ckpt");
  const FaceCrop crop{s.face, {0, 0, 63, 63}, 0.3};
  const auto d = embed_face(crop, &model.backend());
  CHECK(torch::equal(d, embed_face(crop, &loaded.backend())));
  CHECK(torch::equal(model.refine(crop, d).f, loaded.refine(crop, d).f));
  CHECK(FrnConfig::from_json(cfg.to_json()).to_json() == cfg.to_json());
  std::filesystem::remove_all(dir);
}
