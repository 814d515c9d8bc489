#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "denet/binary_io.hpp"
#include "denet/checkpoint.hpp"
#include "denet/errors.hpp"
#include "denet/synth.hpp"
#include "denet/trainer.hpp"
#include "support.hpp"

using namespace denet;
using denet::testing::scratch_dir;

namespace {

EnetConfig tiny_config() {
  EnetConfig c;
  c.base_channels = 2;
  c.middle_blocks = 1;
  c.decoder_channels = {4, 4, 4};
  c.dilated_stack = {{4, 2}};
  return c;
}

KernelPolicy sigma(double s) {
  KernelPolicy p;
  p.sigma_fixed = s;
  return p;
}

SceneInput scene_input(std::uint64_t seed, std::size_t size, double recall) {
  SynthConfig sc;
  sc.width = sc.height = size;
  sc.min_dots = 5;
  sc.max_dots = 12;
  const auto s = synthesize_scene(sc, seed, "img" + std::to_string(seed));
  return {s.annotation.image_id, s.image, s.annotation, mock_detect(s.annotation, recall, size / 4, seed)};
}

std::vector<TrainSample> samples_for(const SceneInput& in, std::uint64_t seed) {
  Rng rng(seed);
  return prepare_training_set({in}, FusionConfig{}, sigma(2.0), rng);
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST(Augment, FourSamplesPerScene) {
  const auto s = samples_for(scene_input(1, 32, 0.3), 1);
  ASSERT_EQ(s.size(), 4u);
  EXPECT_EQ(s[2].image.shape(), (Shape{3, 24, 24}));
  EXPECT_EQ(s[3].gt.width, 24u);
}

TEST(Augment, FlipIsAnInvolution) {
  const auto s = samples_for(scene_input(2, 32, 0.3), 2);
  const TrainSample twice = flip_horizontal(flip_horizontal(s[0]));
  EXPECT_EQ(values(twice.image), values(s[0].image));
  EXPECT_EQ(twice.gt, s[0].gt);
  EXPECT_EQ(twice.region_mask, s[0].region_mask);
  ASSERT_EQ(twice.residual.points.size(), s[0].residual.points.size());
  for (std::size_t i = 0; i < twice.residual.points.size(); ++i) {
    EXPECT_NEAR(twice.residual.points[i].x, s[0].residual.points[i].x, 1e-12);
    EXPECT_EQ(twice.residual.points[i].y, s[0].residual.points[i].y);
  }
}

TEST(Augment, FlipMirrorsImageGtAndMask) {
  const auto s = samples_for(scene_input(3, 32, 0.5), 3);
  const auto& f = s[1];
  for (std::size_t y = 0; y < 32; ++y)
    for (std::size_t x = 0; x < 32; ++x) {
      EXPECT_EQ(f.image.at(1, y, x), s[0].image.at(1, y, 31 - x));
      EXPECT_EQ(f.gt.at(x, y), s[0].gt.at(31 - x, y));
      EXPECT_EQ(f.region_mask.at(x, y), s[0].region_mask.at(31 - x, y));
    }
  EXPECT_EQ(f.counts.n_gt, s[0].counts.n_gt);
  EXPECT_EQ(f.counts.n_d, s[0].counts.n_d);
}

TEST(Augment, CropGtSumsToResidualDotsInside) {
  for (std::uint64_t seed = 10; seed < 20; ++seed) {
    const auto in = scene_input(seed, 48, 0.4);
    const auto s = samples_for(in, seed);
    const auto retained = filter_detections(in.detections, FusionConfig{}, 48, 48);
    const auto scene = apply_masks(in.image, in.annotation, retained, FusionConfig{});
    for (int k = 2; k < 4; ++k) {
      // Find the crop window by matching the image against the masked scene.
      const auto& c = s[k];
      std::size_t found = 0, left = 0, top = 0;
      for (std::size_t t = 0; t + 36 <= 48; ++t)
        for (std::size_t l = 0; l + 36 <= 48; ++l) {
          bool same = true;
          for (std::size_t y = 0; y < 36 && same; ++y)
            for (std::size_t x = 0; x < 36 && same; ++x)
              same = c.image.at(0, y, x) == scene.masked_image.at(0, t + y, l + x);
          if (same) ++found, left = l, top = t;
        }
      ASSERT_EQ(found, 1u);
      std::size_t inside = 0;
      for (const auto& p : scene.residual.points)
        inside += p.x >= left && p.x < left + 36.0 && p.y >= top && p.y < top + 36.0;
      EXPECT_NEAR(c.gt.sum(), static_cast<double>(inside), 1e-3);
    }
  }
}

TEST(Augment, TinyImageFallsBackToDuplicates) {
  const auto in = scene_input(4, 8, 0.0);
  const auto s = samples_for(in, 4);
  ASSERT_EQ(s.size(), 4u);
  EXPECT_EQ(values(s[2].image), values(s[0].image));
  EXPECT_EQ(values(s[3].image), values(s[0].image));
}

TEST(Schedule, ClosedFormAndNonIncreasing) {
  TrainConfig c;
  c.lr_initial = 3e-3;
  c.lr_decay_factor = 0.7;
  c.lr_decay_every = 3;
  double prev = c.learning_rate(0);
  for (std::size_t e = 0; e < 40; ++e) {
    const double lr = c.learning_rate(e);
    EXPECT_EQ(lr, 3e-3 * std::pow(0.7, static_cast<double>(e / 3)));
    EXPECT_LE(lr, prev);
    prev = lr;
  }
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  c.lr_decay_factor = 1.5;
  EXPECT_THROW(c.validate(), ValidationError);
  c = {};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = {};
  c.lr_initial = 0.0;
  EXPECT_THROW(c.validate(), ValidationError);
}

TEST(TrainStep, StationaryPointLeavesParametersUnchanged) {
  auto model = EnetModel::build(tiny_config(), 1);
  for (auto& [name, t] : model.parameters())
    if (name.starts_with("head.")) std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0);
  // Output is exactly zero; GT is empty and the count is fully explained by detections.
  TrainSample s;
  s.id = "zero";
  s.image = Tensor::full({3, 16, 16}, 0.5);
  s.gt = DensityGrid(16, 16);
  s.region_mask = BinaryMask(16, 16);
  s.counts = {3, 3};
  const auto before = encode_checkpoint(model.parameters());
  auto state = TrainState::init(model, 0);
  const auto r = train_step(model, {&s}, LossConfig{}, state, TrainConfig{});
  EXPECT_EQ(r.loss_total, 0.0);
  const auto after = model.parameters();
  const auto ref = decode_checkpoint(before);
  for (std::size_t i = 0; i < ref.size(); ++i)
    for (std::size_t k = 0; k < ref[i].second.numel(); ++k)
      ASSERT_LT(std::abs(after[i].second.data()[k] - ref[i].second.data()[k]), 1e-12);
}

TEST(TrainStep, MomentShapesMirrorParameters) {
  auto model = EnetModel::build(tiny_config(), 2);
  const auto samples = samples_for(scene_input(5, 16, 0.3), 5);
  auto state = TrainState::init(model, 0);
  train_step(model, {&samples[0], &samples[1]}, LossConfig{}, state, TrainConfig{});
  EXPECT_EQ(state.step, 1u);
  for (std::size_t i = 0; i < model.parameters().size(); ++i) {
    EXPECT_EQ(state.first_moment[i].second.shape(), model.parameters()[i].second.shape());
    EXPECT_EQ(state.second_moment[i].second.shape(), model.parameters()[i].second.shape());
  }
}

TEST(TrainStep, NonFiniteLossNamesSample) {
  auto model = EnetModel::build(tiny_config(), 3);
  auto samples = samples_for(scene_input(6, 16, 0.0), 6);
  samples[0].gt.values[5] = std::nan("");
  auto state = TrainState::init(model, 0);
  try {
    train_step(model, {&samples[0]}, LossConfig{}, state, TrainConfig{});
    FAIL();
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find(samples[0].id), std::string::npos);
  }
}

TEST(Train, ZeroEpochsKeepsInitialisation) {
  auto model = EnetModel::build(tiny_config(), 4);
  const auto init = encode_checkpoint(model.parameters());
  TrainConfig cfg;
  cfg.epochs = 0;
  const auto dir = scratch_dir("zero_epochs");
  const auto r = train(model, {scene_input(7, 16, 0.3)}, FusionConfig{}, sigma(2.0), LossConfig{}, cfg, {dir, {}});
  EXPECT_TRUE(r.curve.empty());
  EXPECT_EQ(binio::read_file(dir / "checkpoint.ckpt"), init);
}

TEST(Train, IdenticalRunsGiveIdenticalBytes) {
  const std::vector<SceneInput> data{scene_input(8, 16, 0.3), scene_input(9, 24, 0.3)};
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.seed = 11;
  cfg.lr_initial = 1e-3;
  std::string ckpt[2], curve[2];
  for (int run = 0; run < 2; ++run) {
    auto model = EnetModel::build(tiny_config(), 5);
    const auto dir = scratch_dir("determinism" + std::to_string(run));
    const auto r = train(model, data, FusionConfig{}, sigma(2.0), LossConfig{}, cfg, {dir, {}});
    EXPECT_EQ(r.curve.size(), 16u);
    for (const auto& row : r.curve) EXPECT_TRUE(std::isfinite(row.loss_total));
    ckpt[run] = binio::read_file(dir / "checkpoint.ckpt") + binio::read_file(dir / "optimizer.ckpt") +
                binio::read_file(dir / "checkpoint.json");
    curve[run] = binio::read_file(dir / "loss_curve.csv");
  }
  EXPECT_EQ(ckpt[0], ckpt[1]);
  EXPECT_EQ(curve[0], curve[1]);
  EXPECT_EQ(curve[0].substr(0, curve[0].find('\n')), kLossCsvHeader);
  EXPECT_EQ(std::count(curve[0].begin(), curve[0].end(), '\n'), 17);
}

TEST(Train, ResumeMatchesUninterruptedRun) {
  const std::vector<SceneInput> data{scene_input(12, 16, 0.3)};
  TrainConfig cfg;
  cfg.seed = 3;
  cfg.lr_initial = 1e-3;

  auto straight = EnetModel::build(tiny_config(), 6);
  cfg.epochs = 2;
  train(straight, data, FusionConfig{}, sigma(2.0), LossConfig{}, cfg);

  auto resumed = EnetModel::build(tiny_config(), 6);
  const auto dir = scratch_dir("resume");
  cfg.epochs = 1;
  train(resumed, data, FusionConfig{}, sigma(2.0), LossConfig{}, cfg, {dir, {}});
  TrainState state = load_training_checkpoint(dir, resumed);
  EXPECT_EQ(state.epoch, 1u);
  Rng prep(cfg.seed);
  const auto samples = prepare_training_set(data, FusionConfig{}, sigma(2.0), prep);
  cfg.epochs = 2;
  run_epochs(resumed, samples, LossConfig{}, state, cfg, {});

  EXPECT_EQ(encode_checkpoint(resumed.parameters()), encode_checkpoint(straight.parameters()));
}

TEST(Train, CorruptOptimizerStateRejected) {
  auto model = EnetModel::build(tiny_config(), 7);
  const auto dir = scratch_dir("corrupt_opt");
  save_training_checkpoint(dir, model, TrainState::init(model, 0), TrainConfig{});
  auto moments = load_checkpoint(dir / "optimizer.ckpt");
  moments[0].second = Tensor({1});
  save_checkpoint(dir / "optimizer.ckpt", moments);
  EXPECT_THROW(load_training_checkpoint(dir, model), ValidationError);
}

TEST(Train, EmptyDatasetRejected) {
  auto model = EnetModel::build(tiny_config(), 8);
  EXPECT_THROW(train(model, {}, FusionConfig{}, KernelPolicy{}, LossConfig{}, TrainConfig{}), ContractError);
}

// Regression values frozen from the first converged run: 32x32 scene, no
// detections, sigma 4, default model and learning rate.
TEST(Train, OverfitsSingleScene) {
  SynthConfig sc;
  sc.width = sc.height = 32;
  sc.min_dots = 8;
  sc.max_dots = 16;
  const auto scene = synthesize_scene(sc, 7, "overfit");
  const auto masked = apply_masks(scene.image, scene.annotation, {"overfit", {}}, FusionConfig{});
  const TrainSample sample = make_sample(masked, scene.annotation, sigma(4.0));

  auto model = EnetModel::build(EnetConfig{}, 42);
  TrainConfig cfg;
  cfg.lr_decay_every = 1000;
  auto state = TrainState::init(model, 42);
  StepResult r;
  for (int i = 0; i < 500; ++i) {
    r = train_step(model, {&sample}, LossConfig{}, state, cfg);
    ASSERT_TRUE(std::isfinite(r.loss_total));
  }
  Tape off(false);
  double n_e = 0.0;
  for (double v : model.forward(off, sample.image).data()) n_e += v;
  const double count = static_cast<double>(sample.residual.points.size());
  EXPECT_LT(r.loss_total, 1e-4);
  EXPECT_LT(std::abs(n_e - count) / std::max(count, 1.0), 0.05);
}
