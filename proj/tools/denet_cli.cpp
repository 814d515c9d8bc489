// denet: command-line front end for the counting pipeline.
//
// Exit codes: 0 success, 1 invalid input or config, 2 runtime failure.

#include <spdlog/spdlog.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "denet/binary_io.hpp"
#include "denet/checkpoint.hpp"
#include "denet/density.hpp"
#include "denet/enet.hpp"
#include "denet/errors.hpp"
#include "denet/eval.hpp"
#include "denet/fusion.hpp"
#include "denet/gradcheck.hpp"
#include "denet/image_io.hpp"
#include "denet/run_config.hpp"
#include "denet/synth.hpp"
#include "denet/trainer.hpp"

namespace fs = std::filesystem;
using namespace denet;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 1;
constexpr int kExitRuntime = 2;

/// Flags shared by every subcommand; unset optionals leave the config alone.
struct Overrides {
  std::string config;
  std::string out;
  std::optional<double> alpha, sigma, score_threshold, min_box_frac, lr;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs, dilation;
  std::optional<std::string> kernel, dataset, detections, checkpoint;

  void add_to(CLI::App* app, bool out_required = true) {
    app->add_option("--config", config, "RunConfig JSON");
    auto* o = app->add_option("--out", out, "Output directory");
    if (out_required) o->required();
    app->add_option("--alpha", alpha, "Counting-loss weight");
    app->add_option("--seed", seed, "Seed for init, shuffling and mock detection");
    app->add_option("--sigma", sigma, "Fixed Gaussian kernel sigma (px)");
    app->add_option("--kernel", kernel, "Kernel mode: fixed or adaptive");
    app->add_option("--score-threshold", score_threshold, "Detection score threshold");
    app->add_option("--min-box-frac", min_box_frac, "Minimum box height as a fraction of the image height");
    app->add_option("--mask-dilation", dilation, "Mask dilation radius (px)");
    app->add_option("--epochs", epochs, "Training epochs");
    app->add_option("--lr", lr, "Initial learning rate");
    app->add_option("--dataset", dataset, "Dataset manifest JSON");
    app->add_option("--detections", detections, "Directory of <image_id>.json detection files");
    app->add_option("--checkpoint", checkpoint, "Parameter checkpoint (DENETCKPT1)");
  }

  RunConfig resolve() const {
    RunConfig c;
    if (!config.empty()) {
      if (!fs::exists(config) || fs::is_directory(config)) throw ValidationError("config file not found: " + config);
      c = load_run_config(config);
    }
    if (alpha) c.loss.alpha = *alpha;
    if (sigma) c.kernel.sigma_fixed = *sigma;
    if (kernel) {
      if (*kernel == "fixed")
        c.kernel.mode = KernelMode::Fixed;
      else if (*kernel == "adaptive")
        c.kernel.mode = KernelMode::Adaptive;
      else
        throw ValidationError("--kernel must be fixed or adaptive");
    }
    if (score_threshold) c.fusion.score_threshold = *score_threshold;
    if (min_box_frac) c.fusion.min_box_height_frac = *min_box_frac;
    if (dilation) c.fusion.mask_dilation_px = *dilation;
    if (seed) c.train.seed = *seed;
    if (epochs) c.train.epochs = *epochs;
    if (lr) c.train.lr_initial = *lr;
    if (dataset) c.paths.dataset = *dataset;
    if (detections) c.paths.detections = *detections;
    if (checkpoint) c.paths.checkpoint = *checkpoint;
    for (std::string* p : {&c.paths.dataset, &c.paths.detections, &c.paths.checkpoint})
      if (!p->empty()) *p = fs::absolute(*p).lexically_normal().string();
    c.validate();
    return c;
  }
};

std::string require(const std::string& value, const char* what) {
  if (value.empty()) throw ValidationError(std::string(what) + " is required (flag or config paths section)");
  return value;
}

void write_manifest(const fs::path& out, const std::string& command, const RunConfig& cfg, const Json& args,
                    const Json& outputs) {
  const Json m = {{"command", command},
                  {"seed", cfg.train.seed},
                  {"config", run_config_to_json(cfg)},
                  {"args", args},
                  {"outputs", outputs}};
  write_json_file(out / "manifest.json", m);
}

DetectionSet detections_for(const std::string& dir, const std::string& image_id) {
  const fs::path p = fs::path(dir) / (image_id + ".json");
  if (!fs::exists(p)) throw ValidationError("no detection record for image '" + image_id + "' (expected " + p.string() + ")");
  auto ds = load_detections(p);
  if (ds.image_id != image_id)
    throw ValidationError(p.string() + ": image_id '" + ds.image_id + "' does not match '" + image_id + "'");
  return ds;
}

struct LoadedItem {
  EvalItem item;
  DetectionSet detections;
};

std::vector<LoadedItem> load_dataset(const RunConfig& cfg, bool need_detections) {
  std::vector<LoadedItem> out;
  for (const auto& d : load_dataset_manifest(require(cfg.paths.dataset, "--dataset"))) {
    LoadedItem li;
    li.item.image_id = d.image_id;
    li.item.image = load_image(d.image);
    li.item.annotation = load_annotation(d.annotation);
    if (li.item.annotation.image_id != d.image_id)
      throw ValidationError(d.annotation.string() + ": image_id does not match manifest entry '" + d.image_id + "'");
    const auto& s = li.item.image.shape();
    if (s[1] != li.item.annotation.height || s[2] != li.item.annotation.width)
      throw ValidationError("image '" + d.image_id + "' is " + std::to_string(s[2]) + "x" + std::to_string(s[1]) +
                            " but its annotation says " + std::to_string(li.item.annotation.width) + "x" +
                            std::to_string(li.item.annotation.height));
    if (need_detections) li.detections = detections_for(require(cfg.paths.detections, "--detections"), d.image_id);
    out.push_back(std::move(li));
  }
  return out;
}

EnetModel load_model(const RunConfig& cfg) {
  auto model = EnetModel::build(cfg.model, 0);
  model.load(load_checkpoint(require(cfg.paths.checkpoint, "--checkpoint")));
  return model;
}

// ---------------------------------------------------------------- subcommands

int cmd_gen_gt(const Overrides& ov, const std::vector<std::string>& annotations) {
  const RunConfig cfg = ov.resolve();
  const fs::path out(ov.out);
  Json outputs = Json::array();
  for (const auto& a : annotations) {
    const auto ann = load_annotation(a);
    const auto grid = generate_density_map(ann, cfg.kernel);
    const fs::path p = out / (ann.image_id + ".grid");
    save_grid(p, grid);
    std::printf("%s: %zux%zu, %zu dots, sum %.9f\n", ann.image_id.c_str(), grid.width, grid.height,
                ann.points.size(), grid.sum());
    outputs.push_back({{"image_id", ann.image_id},
                       {"grid", p.string()},
                       {"width", grid.width},
                       {"height", grid.height},
                       {"dots", ann.points.size()},
                       {"sum", grid.sum()}});
  }
  write_manifest(out, "gen-gt", cfg, {{"annotations", annotations}}, outputs);
  return kExitOk;
}

int cmd_mock_detect(const Overrides& ov, const std::vector<std::string>& annotations, double recall,
                    std::size_t box_size) {
  const RunConfig cfg = ov.resolve();
  if (!(recall >= 0.0 && recall <= 1.0)) throw ValidationError("--recall must be in [0, 1]");
  std::vector<std::string> files = annotations;
  if (!cfg.paths.dataset.empty())
    for (const auto& d : load_dataset_manifest(cfg.paths.dataset)) files.push_back(d.annotation.string());
  if (files.empty()) throw ValidationError("mock-detect needs --annotation or --dataset");
  const fs::path out(ov.out);
  Json outputs = Json::array();
  for (const auto& f : files) {
    const auto ann = load_annotation(f);
    // Boxes must survive the default height filter.
    const std::size_t box = box_size ? box_size
                                     : std::max<std::size_t>(8, static_cast<std::size_t>(std::ceil(
                                                                    cfg.fusion.min_box_height_frac * ann.height)));
    const auto ds = mock_detect(ann, recall, box, cfg.train.seed);
    const fs::path p = out / (ann.image_id + ".json");
    write_json_file(p, detections_to_json(ds));
    std::printf("%s: %zu of %zu dots detected (box %zu px)\n", ann.image_id.c_str(), ds.detections.size(),
                ann.points.size(), box);
    outputs.push_back({{"image_id", ann.image_id}, {"detections", p.string()}, {"count", ds.detections.size()}});
  }
  write_manifest(out, "mock-detect", cfg, {{"annotations", files}, {"recall", recall}, {"box_size", box_size}},
                 outputs);
  return kExitOk;
}

int cmd_train(const Overrides& ov, bool resume) {
  const RunConfig cfg = ov.resolve();
  const fs::path out(ov.out);
  std::vector<SceneInput> scenes;
  for (auto& li : load_dataset(cfg, true))
    scenes.push_back({li.item.image_id, li.item.image, li.item.annotation, li.detections});
  if (scenes.empty()) throw ValidationError(cfg.paths.dataset + ": dataset is empty");

  auto model = EnetModel::build(cfg.model, cfg.train.seed);
  TrainOptions opt;
  opt.out_dir = out;
  opt.on_step = [](const LossRow& r) {
    if (r.step % 50 == 0) spdlog::info("step {} epoch {} loss {:.4e} (e {:.3e}, c {:.3e})", r.step, r.epoch,
                                       r.loss_total, r.loss_e, r.loss_c);
  };
  std::vector<LossRow> curve;
  if (resume && fs::exists(out / "checkpoint.ckpt")) {
    TrainState state = load_training_checkpoint(out, model);
    TrainState fresh = TrainState::init(model, cfg.train.seed);
    const auto samples = prepare_training_set(scenes, cfg.fusion, cfg.kernel, fresh.rng);
    spdlog::info("resuming at epoch {} step {}", state.epoch, state.step);
    curve = run_epochs(model, samples, cfg.loss, state, cfg.train, opt);
  } else {
    curve = train(model, scenes, cfg.fusion, cfg.kernel, cfg.loss, cfg.train, opt).curve;
  }
  if (!curve.empty())
    std::printf("trained %zu steps; first loss %.6e, last loss %.6e\n", curve.size(), curve.front().loss_total,
                curve.back().loss_total);
  RunConfig echoed = cfg;
  echoed.paths.checkpoint = fs::absolute(out / "checkpoint.ckpt").string();
  write_manifest(out, "train", echoed, {{"resume", resume}},
                 {{"checkpoint", echoed.paths.checkpoint},
                  {"optimizer", (out / "optimizer.ckpt").string()},
                  {"loss_curve", (out / "loss_curve.csv").string()}});
  return kExitOk;
}

void print_summary(const CountReport& r) {
  std::printf("images %zu  MAE %.6f  MSE %.6f  RMSE %.6f\n", r.per_image.size(), r.mae, r.mse, r.rmse());
}

int cmd_eval(const Overrides& ov, std::size_t folds) {
  const RunConfig cfg = ov.resolve();
  const fs::path out(ov.out);
  const auto loaded = load_dataset(cfg, true);
  std::vector<EvalItem> items;
  std::map<std::string, DetectionSet> dets;
  for (const auto& li : loaded) {
    items.push_back(li.item);
    dets[li.item.image_id] = li.detections;
  }
  CountReport report;
  if (folds == 0) {
    const auto model = load_model(cfg);
    report = evaluate(EnetEstimator(model), items, dets, cfg.fusion);
  } else {
    struct Owned : DensityEstimator {
      EnetModel model;
      explicit Owned(EnetModel m) : model(std::move(m)) {}
      DensityGrid estimate(const Tensor& image) const override { return EnetEstimator(model).estimate(image); }
    };
    const TrainFn fit = [&](const std::vector<EvalItem>& train_set) {
      std::vector<SceneInput> scenes;
      for (const auto& it : train_set) scenes.push_back({it.image_id, it.image, it.annotation, dets.at(it.image_id)});
      auto model = EnetModel::build(cfg.model, cfg.train.seed);
      train(model, scenes, cfg.fusion, cfg.kernel, cfg.loss, cfg.train);
      return std::shared_ptr<const DensityEstimator>(std::make_shared<Owned>(std::move(model)));
    };
    report = cross_validate(items, folds, cfg.train.seed, fit, dets, cfg.fusion);
  }
  write_json_file(out / "report.json", report_to_json(report));
  binio::write_file(out / "report.csv", report_to_csv(report));
  print_summary(report);
  write_manifest(out, "eval", cfg, {{"folds", folds}},
                 {{"report_json", (out / "report.json").string()},
                  {"report_csv", (out / "report.csv").string()},
                  {"mae", report.mae},
                  {"mse", report.mse}});
  return kExitOk;
}

int cmd_infer(const Overrides& ov, const std::string& image_path, const std::string& det_file) {
  const RunConfig cfg = ov.resolve();
  const fs::path out(ov.out);
  const auto model = load_model(cfg);
  const Tensor image = load_image(image_path);
  const std::size_t h = image.shape()[1], w = image.shape()[2];
  DetectionSet ds;
  ds.image_id = fs::path(image_path).stem().string();
  if (!det_file.empty())
    ds = load_detections(det_file);
  else if (!cfg.paths.detections.empty() && fs::exists(fs::path(cfg.paths.detections) / (ds.image_id + ".json")))
    ds = detections_for(cfg.paths.detections, ds.image_id);
  const auto retained = filter_detections(ds, cfg.fusion, w, h);
  const DotAnnotation none{ds.image_id, w, h, {}};
  const auto masked = apply_masks(image, none, retained, cfg.fusion);
  const DensityGrid grid = EnetEstimator(model).estimate(masked.masked_image);
  const CountRecord rec = fuse_count(masked.n_d, grid_to_tensor(grid));
  save_grid(out / "density.grid", grid);
  save_density_png(out / "density.png", grid);
  std::printf("%s: %zux%zu  n_d %zu  n_e %.6f  count %.6f\n", ds.image_id.c_str(), w, h, rec.n_d, rec.n_e, rec.c);
  write_manifest(out, "infer", cfg, {{"image", fs::absolute(image_path).string()}, {"detections", det_file}},
                 {{"grid", (out / "density.grid").string()},
                  {"png", (out / "density.png").string()},
                  {"width", w},
                  {"height", h},
                  {"n_d", rec.n_d},
                  {"n_e", rec.n_e},
                  {"count", rec.c}});
  return kExitOk;
}

int cmd_gradcheck(const Overrides& ov, std::size_t seeds, std::size_t entries) {
  const RunConfig cfg = ov.resolve();
  const std::uint64_t first = ov.seed ? *ov.seed : 1;
  double worst_ops = 0.0, worst_e2e = 0.0;
  std::map<std::string, double> per_op;
  for (std::uint64_t s = first; s < first + seeds; ++s) {
    for (const auto& r : gradcheck_ops(s)) {
      per_op[r.name] = std::max(per_op[r.name], r.max_rel_error);
      worst_ops = std::max(worst_ops, r.max_rel_error);
    }
    const auto e = gradcheck_enet(s, cfg.model, entries);
    worst_e2e = std::max(worst_e2e, e.max_rel_error);
  }
  for (const auto& [name, err] : per_op) std::printf("  %-28s %.3e\n", name.c_str(), err);
  std::printf("ops max relative error %.3e\nend-to-end max relative error %.3e\n", worst_ops, worst_e2e);
  const bool ok = worst_ops < 1e-4 && worst_e2e < 1e-3;
  if (!ov.out.empty())
    write_manifest(ov.out, "gradcheck", cfg, {{"seeds", seeds}, {"first_seed", first}, {"entries", entries}},
                   {{"ops_max_rel", worst_ops}, {"e2e_max_rel", worst_e2e}, {"pass", ok}});
  std::printf("%s\n", ok ? "PASS" : "FAIL");
  return ok ? kExitOk : kExitRuntime;
}

int cmd_synth(const Overrides& ov, std::size_t count, const SynthConfig& sc) {
  const RunConfig cfg = ov.resolve();
  sc.validate();
  const fs::path out = fs::absolute(ov.out);
  std::vector<DatasetItem> items;
  for (std::size_t i = 0; i < count; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "synth_%04zu", i);
    const auto scene = synthesize_scene(sc, cfg.train.seed + i, id);
    const fs::path img = out / "images" / (std::string(id) + ".png");
    const fs::path ann = out / "annotations" / (std::string(id) + ".json");
    fs::create_directories(img.parent_path());
    fs::create_directories(ann.parent_path());
    save_png_rgb(img, scene.image);
    write_json_file(ann, annotation_to_json(scene.annotation));
    items.push_back({id, img, ann});
  }
  save_dataset_manifest(out / "dataset.json", items);
  std::printf("wrote %zu scenes to %s\n", count, out.string().c_str());
  write_manifest(out, "synth", cfg,
                 {{"count", count},
                  {"width", sc.width},
                  {"height", sc.height},
                  {"min_dots", sc.min_dots},
                  {"max_dots", sc.max_dots},
                  {"min_spacing", sc.min_spacing},
                  {"blob_sigma", sc.blob_sigma},
                  {"noise", sc.noise}},
                 {{"dataset", (out / "dataset.json").string()}});
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Crowd counting by detection masking and density estimation"};
  app.require_subcommand(1);
  spdlog::set_pattern("[%l] %v");

  Overrides ov;
  std::vector<std::string> annotations;
  double recall = 0.0;
  std::size_t box_size = 0, folds = 0, seeds = 10, entries = 50, count = 8;
  bool resume = false;
  std::string image, det_file;
  SynthConfig sc;

  auto* gen = app.add_subcommand("gen-gt", "Density ground truth from dot annotations");
  ov.add_to(gen);
  gen->add_option("--annotation", annotations, "Annotation JSON (repeatable)")->required();

  auto* mock = app.add_subcommand("mock-detect", "Synthetic detections from dot annotations");
  ov.add_to(mock);
  mock->add_option("--annotation", annotations, "Annotation JSON (repeatable)");
  mock->add_option("--recall", recall, "Fraction of dots turned into detections")->required();
  mock->add_option("--box-size", box_size, "Box side in px (0: from --min-box-frac, at least 8)");

  auto* tr = app.add_subcommand("train", "Train the estimation network");
  ov.add_to(tr);
  tr->add_flag("--resume", resume, "Continue from the checkpoint in --out");

  auto* ev = app.add_subcommand("eval", "MAE/MSE of a checkpoint, or k-fold cross-validation");
  ov.add_to(ev);
  ev->add_option("--folds", folds, "Cross-validate with k folds instead of evaluating --checkpoint");

  auto* inf = app.add_subcommand("infer", "Density map and count for one image");
  ov.add_to(inf);
  inf->add_option("--image", image, "PNG/PGM/PPM image")->required();
  inf->add_option("--detection-file", det_file, "Detections JSON for this image");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  ov.add_to(gc, false);
  gc->add_option("--seeds", seeds, "Number of seeds, starting at --seed (default 1)");
  gc->add_option("--entries", entries, "Network parameter entries checked per seed");

  auto* sy = app.add_subcommand("synth", "Synthetic scenes with dot annotations");
  ov.add_to(sy);
  sy->add_option("--count", count, "Number of scenes");
  sy->add_option("--width", sc.width, "Image width");
  sy->add_option("--height", sc.height, "Image height");
  sy->add_option("--min-dots", sc.min_dots, "Fewest dots per scene");
  sy->add_option("--max-dots", sc.max_dots, "Most dots per scene");
  sy->add_option("--noise", sc.noise, "Pixel noise standard deviation");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInvalid;
  }

  try {
    if (!ov.out.empty()) fs::create_directories(ov.out);
    if (*gen) return cmd_gen_gt(ov, annotations);
    if (*mock) return cmd_mock_detect(ov, annotations, recall, box_size);
    if (*tr) return cmd_train(ov, resume);
    if (*ev) return cmd_eval(ov, folds);
    if (*inf) return cmd_infer(ov, image, det_file);
    if (*gc) return cmd_gradcheck(ov, seeds, entries);
    if (*sy) return cmd_synth(ov, count, sc);
  } catch (const ValidationError& e) {
    spdlog::error("{}", e.what());
    return kExitInvalid;
  } catch (const InvalidSpecError& e) {
    spdlog::error("{}", e.what());
    return kExitInvalid;
  } catch (const ShapeError& e) {
    spdlog::error("{}", e.what());
    return kExitInvalid;
  } catch (const ContractError& e) {
    spdlog::error("{}", e.what());
    return kExitInvalid;
  } catch (const IoError& e) {
    spdlog::error("{}", e.what());
    return kExitRuntime;
  } catch (const std::filesystem::filesystem_error& e) {
    spdlog::error("{}", e.what());
    return kExitRuntime;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitRuntime;
  }
  return kExitRuntime;
}
