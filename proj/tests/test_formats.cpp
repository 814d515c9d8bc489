#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>

#include "denet/binary_io.hpp"
#include "denet/checkpoint.hpp"
#include "denet/density.hpp"
#include "denet/errors.hpp"
#include "denet/image_io.hpp"
#include "denet/run_config.hpp"
#include "denet/schema.hpp"
#include "support.hpp"

using namespace denet;
using denet::testing::random_tensor;
using denet::testing::scratch_dir;

namespace {

// Expects a ValidationError whose message contains `needle`.
template <typename Fn>
void expect_violation(Fn fn, const std::string& needle) {
  try {
    fn();
    ADD_FAILURE() << "no ValidationError, expected one mentioning '" << needle << "'";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
  }
}

std::vector<double> awkward_values() {
  return {0.0, -0.0, 1.0, -1.5, std::numeric_limits<double>::denorm_min(), std::numeric_limits<double>::max(),
          std::numeric_limits<double>::infinity(), 1.0 / 3.0};
}

}  // namespace

TEST(Checkpoint, RoundTripBitExact) {
  Rng rng(1);
  NamedTensors t{{"a.weight", random_tensor(rng, {2, 3, 1, 4})},
                 {"b", Tensor({8}, awkward_values())},
                 {"unicode.\xc3\xa9", random_tensor(rng, {5})}};
  const auto dir = scratch_dir("ckpt");
  save_checkpoint(dir / "x.ckpt", t);
  const std::string bytes = binio::read_file(dir / "x.ckpt");
  EXPECT_EQ(bytes.substr(0, 10), "DENETCKPT1");
  const auto back = load_checkpoint(dir / "x.ckpt");
  ASSERT_EQ(back.size(), t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    EXPECT_EQ(back[i].first, t[i].first);
    EXPECT_EQ(back[i].second.shape(), t[i].second.shape());
    EXPECT_EQ(std::memcmp(back[i].second.data().data(), t[i].second.data().data(), 8 * t[i].second.numel()), 0);
  }
  EXPECT_EQ(encode_checkpoint(back), bytes);
}

TEST(Checkpoint, LittleEndianLayout) {
  const std::string b = encode_checkpoint({{"w", Tensor({2}, {1.0, -2.0})}});
  const std::string expect = std::string("DENETCKPT1") + std::string("\x01\x00\x00\x00", 4) + "w" +
                             std::string("\x01\x00\x00\x00", 4) + std::string("\x02\x00\x00\x00", 4) +
                             std::string("\x00\x00\x00\x00\x00\x00\xf0\x3f", 8) +
                             std::string("\x00\x00\x00\x00\x00\x00\x00\xc0", 8);
  EXPECT_EQ(b, expect);
}

TEST(Checkpoint, CorruptInputRejected) {
  const std::string good = encode_checkpoint({{"w", Tensor({3}, {1, 2, 3})}});
  expect_violation([&] { decode_checkpoint("NOTACKPT00" + good.substr(10)); }, "magic");
  expect_violation([&] { decode_checkpoint(good.substr(0, good.size() - 3)); }, "truncated");
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/x.ckpt"), IoError);
}

TEST(Grid, RoundTripBitExact) {
  DensityGrid g(3, 2);
  g.values = {0.0, -0.0, 1e-300, 0.125, 1.0 / 7.0, 5e-324};
  const auto dir = scratch_dir("grid");
  save_grid(dir / "g.bin", g);
  const std::string bytes = binio::read_file(dir / "g.bin");
  EXPECT_EQ(bytes.size(), 10u + 8u + 6u * 8u);
  const auto back = load_grid(dir / "g.bin");
  EXPECT_EQ(back.width, 3u);
  EXPECT_EQ(back.height, 2u);
  EXPECT_EQ(std::memcmp(back.values.data(), g.values.data(), 48), 0);
  EXPECT_EQ(encode_grid(back), bytes);
}

TEST(Grid, CorruptInputRejected) {
  const std::string good = encode_grid(DensityGrid(2, 2));
  expect_violation([&] { decode_grid("DENETGRIDX" + good.substr(10)); }, "magic");
  expect_violation([&] { decode_grid(good.substr(0, good.size() - 8)); }, "expected 4 values");
}

TEST(AnnotationJson, RoundTrip) {
  DotAnnotation a{"scene-1", 64, 48, {{1.5, 2.25}, {63.0, 0.0}}};
  EXPECT_EQ(annotation_from_json(annotation_to_json(a)), a);
  EXPECT_EQ(annotation_from_json(Json::parse(annotation_to_json(a).dump())), a);
}

TEST(AnnotationJson, NamedViolations) {
  const auto parse = [](const char* text) { return [text] { annotation_from_json(Json::parse(text)); }; };
  expect_violation(parse(R"({"image_id":"a","width":4,"height":4,"points":[],"extra":1})"), "unknown key 'extra'");
  expect_violation(parse(R"({"image_id":"a","width":4,"points":[]})"), "missing required key 'height'");
  expect_violation(parse(R"({"image_id":"a","width":0,"height":4,"points":[]})"), "'width' must be a positive integer");
  expect_violation(parse(R"({"image_id":"a","width":4,"height":4,"points":[[1,2],[3]]})"), "points[1] must be [x, y]");
  expect_violation(parse(R"({"image_id":"a","width":4,"height":4,"points":[[1,"y"]]})"), "points[0].y must be a number");
  expect_violation(parse(R"({"image_id":"a","width":4,"height":4,"points":[[1,1],[9,1]]})"), "point 1");
  expect_violation(parse(R"({"image_id":7,"width":4,"height":4,"points":[]})"), "'image_id' must be a string");
  expect_violation(parse(R"([1,2])"), "expected a JSON object");
}

TEST(DetectionJson, RoundTripWithMask) {
  DetectionSet ds{"img", {{{1, 2, 5, 9}, 0.75, RleMask{7, 4, {3, 10, 15}}, "person"}, {{0, 0, 3, 3}, 1.0, std::nullopt, "car"}}};
  EXPECT_EQ(detections_from_json(detections_to_json(ds)), ds);
  const auto j = detections_to_json(ds);
  EXPECT_EQ(j["detections"][0]["mask_rle"]["size"], Json::parse("[7,4]"));
}

TEST(DetectionJson, NamedViolations) {
  const auto parse = [](const char* text) { return [text] { detections_from_json(Json::parse(text)); }; };
  expect_violation(parse(R"({"image_id":"a","detections":[{"box":[0,0,1,1],"score":0.5,"colour":1}]})"),
                   "unknown key 'colour'");
  expect_violation(parse(R"({"image_id":"a","detections":[{"box":[0,0,1],"score":0.5}]})"),
                   "detections[0].box must be [x0, y0, x1, y1]");
  expect_violation(parse(R"({"image_id":"a","detections":[{"box":[0,0,1,1],"score":0.5},{"box":[4,0,1,1],"score":0.5}]})"),
                   "detections[1].box requires x0 < x1");
  expect_violation(parse(R"({"image_id":"a","detections":[{"box":[0,0,1,1],"score":1.5}]})"), "score must be in [0, 1]");
  expect_violation(parse(R"({"image_id":"a","detections":[{"box":[0,0,1,1],"score":0.5,"mask_rle":{"size":[2],"counts":[4]}}]})"),
                   "mask_rle.size must be [h, w]");
  expect_violation(parse(R"({"image_id":"a","detections":[{"box":[0,0,1,1],"score":0.5,"mask_rle":{"size":[2,2],"counts":[-1]}}]})"),
                   "counts must contain non-negative integers");
  expect_violation(parse(R"({"image_id":"a","detections":{}})"), "'detections' must be an array");
}

TEST(JsonFiles, SyntaxErrorNamesPath) {
  const auto dir = scratch_dir("json");
  std::ofstream(dir / "bad.json") << "{\"image_id\": ";
  expect_violation([&] { load_annotation(dir / "bad.json"); }, "bad.json");
  EXPECT_THROW(load_annotation(dir / "missing.json"), IoError);
}

TEST(Manifest, RoundTripRelativePaths) {
  const auto dir = scratch_dir("manifest");
  save_dataset_manifest(dir / "m.json", {{"a", dir / "img" / "a.png", dir / "ann" / "a.json"}});
  const Json raw = read_json_file(dir / "m.json");
  EXPECT_EQ(raw["items"][0]["image"], "img/a.png");
  const auto items = load_dataset_manifest(dir / "m.json");
  ASSERT_EQ(items.size(), 1u);
  EXPECT_EQ(items[0].image_id, "a");
  EXPECT_EQ(items[0].image, dir / "img" / "a.png");
  std::ofstream(dir / "bad.json") << R"({"items":[{"image_id":"a","image":"x","annotation":"y","z":1}]})";
  expect_violation([&] { load_dataset_manifest(dir / "bad.json"); }, "unknown key 'z'");
}

TEST(Images, PngRoundTripWithinQuantisation) {
  Rng rng(4);
  Tensor img = random_tensor(rng, {3, 5, 7}, 0.0, 1.0);
  const auto dir = scratch_dir("png");
  save_png_rgb(dir / "a.png", img);
  const Tensor back = load_image(dir / "a.png");
  ASSERT_EQ(back.shape(), img.shape());
  for (std::size_t i = 0; i < img.numel(); ++i) EXPECT_NEAR(back.data()[i], img.data()[i], 0.5 / 255.0 + 1e-12);
}

TEST(Images, NetpbmGrayAndColour) {
  const auto dir = scratch_dir("pnm");
  {
    std::ofstream f(dir / "g.pgm", std::ios::binary);
    f << "P5\n# comment\n2 1\n255\n";
    f.put(static_cast<char>(0));
    f.put(static_cast<char>(255));
  }
  const Tensor g = load_image(dir / "g.pgm");
  ASSERT_EQ(g.shape(), (Shape{3, 1, 2}));
  EXPECT_EQ(g.at(2, 0, 0), 0.0);
  EXPECT_EQ(g.at(0, 0, 1), 1.0);
  std::ofstream(dir / "c.ppm") << "P3 1 1 255 51 102 255\n";
  const Tensor c = load_image(dir / "c.ppm");
  EXPECT_EQ(c.at(0, 0, 0), 0.2);
  EXPECT_EQ(c.at(1, 0, 0), 0.4);
  std::ofstream(dir / "x.txt") << "hello";
  EXPECT_THROW(load_image(dir / "x.txt"), ValidationError);
}

TEST(RunConfig, EmptyObjectGivesModuleDefaults) {
  const auto c = run_config_from_json(Json::object());
  EXPECT_EQ(c.model, EnetConfig{});
  EXPECT_EQ(c.loss.alpha, LossConfig{}.alpha);
  EXPECT_EQ(c.fusion.score_threshold, FusionConfig{}.score_threshold);
  EXPECT_EQ(c.train.lr_initial, TrainConfig{}.lr_initial);
  EXPECT_EQ(c.kernel.mode, KernelMode::Fixed);
}

TEST(RunConfig, JsonRoundTrip) {
  const auto j = Json::parse(R"({"model": {"middle_blocks": 2, "dilated_stack": [{"channels": 16, "dilation": 3}]},
    "loss": {"alpha": 0.25}, "fusion": {"mask_dilation_px": 0}, "train": {"epochs": 7, "seed": 12345678901},
    "kernel": {"mode": "adaptive", "beta": 0.5}, "paths": {"dataset": "d.json"}})");
  const auto c = run_config_from_json(j);
  EXPECT_EQ(c.model.middle_blocks, 2u);
  ASSERT_EQ(c.model.dilated_stack.size(), 1u);
  EXPECT_EQ(c.model.dilated_stack[0].dilation, 3u);
  EXPECT_EQ(c.loss.alpha, 0.25);
  EXPECT_EQ(c.train.seed, 12345678901ull);
  EXPECT_EQ(c.kernel.mode, KernelMode::Adaptive);
  EXPECT_EQ(c.paths.dataset, "d.json");
  EXPECT_EQ(run_config_to_json(run_config_from_json(run_config_to_json(c))), run_config_to_json(c));
}

TEST(RunConfig, RejectsWithNamedViolation) {
  auto parse = [](const char* s) { return [s] { run_config_from_json(Json::parse(s)); }; };
  expect_violation(parse(R"({"optimiser": {}})"), "unknown key 'optimiser'");
  expect_violation(parse(R"({"train": {"epoch": 3}})"), "train: unknown key 'epoch'");
  expect_violation(parse(R"({"train": {"epochs": -1}})"), "train.epochs must be a non-negative integer");
  expect_violation(parse(R"({"train": {"epochs": 1.5}})"), "train.epochs must be a non-negative integer");
  expect_violation(parse(R"({"loss": {"alpha": "x"}})"), "loss.alpha must be a number");
  expect_violation(parse(R"({"loss": []})"), "loss: expected a JSON object");
  expect_violation(parse(R"({"kernel": {"mode": "box"}})"), "kernel.mode");
  expect_violation(parse(R"({"model": {"dilated_stack": [{"channels": 8}]}})"), "dilated_stack[0]");
  expect_violation(parse(R"({"model": {"output_activation": "sigmoid"}})"), "model.output_activation");
  expect_violation(parse(R"({"fusion": {"score_threshold": 0}})"), "score_threshold");
}

TEST(RunConfig, LoadNamesTheFile) {
  const auto dir = scratch_dir("runcfg");
  binio::write_file(dir / "cfg.json", R"({"train": {"lr_initial": -1}})");
  expect_violation([&] { load_run_config(dir / "cfg.json"); }, "cfg.json");
}
