#include "denet/trainer.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "denet/binary_io.hpp"
#include "denet/checkpoint.hpp"
#include "denet/errors.hpp"
#include "denet/ops.hpp"
#include "denet/schema.hpp"

namespace denet {

void TrainConfig::validate() const {
  if (!(lr_initial > 0.0)) throw ValidationError("train.lr_initial must be > 0");
  if (!(lr_decay_factor > 0.0 && lr_decay_factor <= 1.0))
    throw ValidationError("train.lr_decay_factor must be in (0, 1]");
  if (lr_decay_every < 1) throw ValidationError("train.lr_decay_every must be >= 1");
  if (batch_size < 1) throw ValidationError("train.batch_size must be >= 1");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) throw ValidationError("train.adam_beta1 must be in [0, 1)");
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) throw ValidationError("train.adam_beta2 must be in [0, 1)");
  if (!(adam_eps > 0.0)) throw ValidationError("train.adam_eps must be > 0");
}

double TrainConfig::learning_rate(std::size_t epoch) const {
  return lr_initial * std::pow(lr_decay_factor, static_cast<double>(epoch / lr_decay_every));
}

TrainState TrainState::init(const EnetModel& model, std::uint64_t seed) {
  TrainState s;
  s.rng = Rng(seed);
  for (const auto& [name, t] : model.parameters()) {
    s.first_moment.emplace_back(name, Tensor(t.shape()));
    s.second_moment.emplace_back(name, Tensor(t.shape()));
  }
  return s;
}

TrainSample make_sample(const MaskedScene& scene, const DotAnnotation& full, const KernelPolicy& policy) {
  TrainSample s;
  s.id = full.image_id;
  s.image = scene.masked_image;
  s.gt = generate_density_map(scene.residual, policy);
  s.region_mask = scene.region_mask;
  s.residual = scene.residual;
  s.counts = {full.points.size(), scene.n_d};
  return s;
}

TrainSample flip_horizontal(const TrainSample& s) {
  TrainSample f = s;
  f.id = s.id + "/flip";
  const std::size_t c_n = s.image.dim(0), h = s.image.dim(1), w = s.image.dim(2);
  f.image = Tensor({c_n, h, w});
  const auto src = s.image.data();
  auto dst = f.image.mutable_data();
  for (std::size_t c = 0; c < c_n; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) dst[(c * h + y) * w + x] = src[(c * h + y) * w + (w - 1 - x)];
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      f.gt.at(x, y) = s.gt.at(w - 1 - x, y);
      f.region_mask.values[y * w + x] = s.region_mask.values[y * w + (w - 1 - x)];
    }
  const double W = static_cast<double>(w);
  for (auto& p : f.residual.points) {
    p.x = W - p.x;
    if (p.x >= W) p.x = std::nextafter(W, 0.0);
  }
  return f;
}

namespace {

bool inside(Point p, std::size_t left, std::size_t top, std::size_t w, std::size_t h) {
  return p.x >= static_cast<double>(left) && p.x < static_cast<double>(left + w) &&
         p.y >= static_cast<double>(top) && p.y < static_cast<double>(top + h);
}

TrainSample crop_sample(const TrainSample& base, const DotAnnotation& full, const DetectionSet& retained,
                        const KernelPolicy& policy, std::size_t left, std::size_t top, std::size_t cw,
                        std::size_t ch, const std::string& tag) {
  TrainSample s;
  s.id = base.id + "/" + tag;
  Tape no_tape(false);
  s.image = crop2d(no_tape, base.image, top, left, ch, cw);
  s.region_mask = BinaryMask(cw, ch);
  for (std::size_t y = 0; y < ch; ++y)
    for (std::size_t x = 0; x < cw; ++x)
      s.region_mask.values[y * cw + x] = base.region_mask.values[(top + y) * base.region_mask.width + left + x];
  s.residual = DotAnnotation{s.id, cw, ch, {}};
  for (const auto& p : base.residual.points)
    if (inside(p, left, top, cw, ch))
      s.residual.points.push_back({p.x - static_cast<double>(left), p.y - static_cast<double>(top)});
  s.gt = generate_density_map(s.residual, policy);
  std::size_t n_gt = 0, n_d = 0;
  for (const auto& p : full.points) n_gt += inside(p, left, top, cw, ch);
  for (const auto& d : retained.detections)
    n_d += inside({(d.box.x0 + d.box.x1) / 2, (d.box.y0 + d.box.y1) / 2}, left, top, cw, ch);
  s.counts = {n_gt, n_d};
  return s;
}

}  // namespace

std::vector<TrainSample> augment(const MaskedScene& scene, const DotAnnotation& full,
                                 const DetectionSet& retained, const KernelPolicy& policy, Rng& rng) {
  TrainSample base = make_sample(scene, full, policy);
  std::vector<TrainSample> out;
  out.push_back(base);
  out.push_back(flip_horizontal(base));

  const std::size_t w = full.width, h = full.height;
  const std::size_t cw = (w * 3) / 4, ch = (h * 3) / 4;
  if (cw < EnetConfig::kEncoderStride || ch < EnetConfig::kEncoderStride) {
    spdlog::warn("augment: '{}' ({}x{}) is too small for 0.75-scale crops; using identity duplicates",
                 full.image_id, w, h);
    out.push_back(base);
    out.push_back(base);
    return out;
  }
  for (int i = 0; i < 2; ++i) {
    const auto left = static_cast<std::size_t>(rng.below(w - cw + 1));
    const auto top = static_cast<std::size_t>(rng.below(h - ch + 1));
    out.push_back(crop_sample(base, full, retained, policy, left, top, cw, ch, "crop" + std::to_string(i)));
  }
  return out;
}

LossTerms sample_loss(Tape& tape, const EnetModel& model, const TrainSample& sample, const LossConfig& loss_cfg) {
  const auto padded = pad_to_multiple(sample.image);
  Tensor pred = crop_output(tape, model.forward(tape, padded.image), padded.record);
  return combined_loss_terms(tape, pred, sample.gt, sample.counts, loss_cfg);
}

StepResult train_step(EnetModel& model, const std::vector<const TrainSample*>& batch, const LossConfig& loss_cfg,
                      TrainState& state, const TrainConfig& cfg) {
  if (batch.empty()) throw ContractError("train_step: empty batch");
  model.zero_grad();
  StepResult r;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (const TrainSample* s : batch) {
    Tape tape;
    const LossTerms terms = sample_loss(tape, model, *s, loss_cfg);
    const double total = terms.total.item();
    if (!std::isfinite(total))
      throw TrainingError("non-finite loss (" + std::to_string(total) + ") on sample '" + s->id + "' at step " +
                          std::to_string(state.step + 1));
    tape.backward(terms.total);
    r.loss_total += total * inv_b;
    r.loss_e += terms.euclidean.item() * inv_b;
    r.loss_c += terms.counting.item() * inv_b;
  }

  ++state.step;
  const double lr = cfg.learning_rate(state.epoch);
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double corr1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double corr2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  auto& params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i].second;
    if (!p.has_grad()) continue;
    auto w = p.mutable_data();
    const auto g = p.grad();
    auto m = state.first_moment[i].second.mutable_data();
    auto v = state.second_moment[i].second.mutable_data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = g[k] * inv_b;
      m[k] = b1 * m[k] + (1.0 - b1) * gk;
      v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
      w[k] -= lr * (m[k] / corr1) / (std::sqrt(v[k] / corr2) + cfg.adam_eps);
    }
  }
  return r;
}

std::vector<TrainSample> prepare_training_set(const std::vector<SceneInput>& scenes, const FusionConfig& fusion,
                                              const KernelPolicy& policy, Rng& rng) {
  std::vector<TrainSample> samples;
  for (const auto& sc : scenes) {
    const auto retained = filter_detections(sc.detections, fusion, sc.annotation.width, sc.annotation.height);
    const auto scene = apply_masks(sc.image, sc.annotation, retained, fusion);
    for (auto& s : augment(scene, sc.annotation, retained, policy, rng)) samples.push_back(std::move(s));
  }
  return samples;
}

namespace {

std::string format_row(const LossRow& r) {
  std::ostringstream os;
  os << std::setprecision(17) << r.step << ',' << r.epoch << ',' << r.lr << ',' << r.loss_e << ',' << r.loss_c
     << ',' << r.loss_total;
  return os.str();
}

}  // namespace

void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRow>& rows) {
  std::string text = std::string(kLossCsvHeader) + "\n";
  for (const auto& r : rows) text += format_row(r) + "\n";
  binio::write_file(path, text);
}

std::vector<LossRow> run_epochs(EnetModel& model, const std::vector<TrainSample>& samples,
                                const LossConfig& loss_cfg, TrainState& state, const TrainConfig& cfg,
                                const TrainOptions& options) {
  cfg.validate();
  loss_cfg.validate();
  if (samples.empty()) throw ContractError("train: no training samples");
  std::vector<LossRow> rows;
  std::vector<std::size_t> order(samples.size());
  for (; state.epoch < cfg.epochs; ++state.epoch) {
    std::iota(order.begin(), order.end(), 0);
    state.rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<const TrainSample*> batch;
      for (std::size_t k = start; k < std::min(order.size(), start + cfg.batch_size); ++k)
        batch.push_back(&samples[order[k]]);
      const StepResult r = train_step(model, batch, loss_cfg, state, cfg);
      rows.push_back({state.step, state.epoch, cfg.learning_rate(state.epoch), r.loss_e, r.loss_c, r.loss_total});
      if (options.on_step) options.on_step(rows.back());
    }
    if (options.out_dir) {
      TrainState snapshot_epoch = state;
      ++snapshot_epoch.epoch;  // the epoch just finished
      save_training_checkpoint(*options.out_dir, model, snapshot_epoch, cfg);
      std::ofstream csv(*options.out_dir / "loss_curve.csv", std::ios::app);
      if (!csv) throw IoError("cannot append to " + (*options.out_dir / "loss_curve.csv").string());
      for (std::size_t i = rows.size() - (order.size() + cfg.batch_size - 1) / cfg.batch_size; i < rows.size(); ++i)
        csv << format_row(rows[i]) << '\n';
    }
  }
  return rows;
}

TrainResult train(EnetModel& model, const std::vector<SceneInput>& scenes, const FusionConfig& fusion,
                  const KernelPolicy& policy, const LossConfig& loss_cfg, const TrainConfig& cfg,
                  const TrainOptions& options) {
  cfg.validate();
  if (scenes.empty()) throw ContractError("train: dataset is empty");
  TrainResult result{{}, TrainState::init(model, cfg.seed)};
  const auto samples = prepare_training_set(scenes, fusion, policy, result.state.rng);
  if (options.out_dir) {
    std::filesystem::create_directories(*options.out_dir);
    binio::write_file(*options.out_dir / "loss_curve.csv", std::string(kLossCsvHeader) + "\n");
    save_training_checkpoint(*options.out_dir, model, result.state, cfg);
  }
  result.curve = run_epochs(model, samples, loss_cfg, result.state, cfg, options);
  return result;
}

void save_training_checkpoint(const std::filesystem::path& dir, const EnetModel& model, const TrainState& state,
                              const TrainConfig& cfg) {
  save_checkpoint(dir / "checkpoint.ckpt", model.parameters());
  NamedTensors moments;
  for (const auto& [name, t] : state.first_moment) moments.emplace_back("m/" + name, t);
  for (const auto& [name, t] : state.second_moment) moments.emplace_back("v/" + name, t);
  save_checkpoint(dir / "optimizer.ckpt", moments);
  const Json sidecar = {{"step", state.step},
                        {"epoch", state.epoch},
                        {"lr", cfg.learning_rate(state.epoch)},
                        {"rng_state", state.rng.state()}};
  write_json_file(dir / "checkpoint.json", sidecar);
}

TrainState load_training_checkpoint(const std::filesystem::path& dir, EnetModel& model) {
  model.load(load_checkpoint(dir / "checkpoint.ckpt"));
  TrainState s = TrainState::init(model, 0);
  const auto moments = load_checkpoint(dir / "optimizer.ckpt");
  const std::size_t n = model.parameters().size();
  if (moments.size() != 2 * n) throw ValidationError("optimizer.ckpt: expected " + std::to_string(2 * n) + " tensors");
  for (std::size_t i = 0; i < n; ++i) {
    const auto& name = model.parameters()[i].first;
    if (moments[i].first != "m/" + name || moments[n + i].first != "v/" + name)
      throw ValidationError("optimizer.ckpt: moment order does not match parameter '" + name + "'");
    const Shape& want = model.parameters()[i].second.shape();
    if (moments[i].second.shape() != want || moments[n + i].second.shape() != want)
      throw ValidationError("optimizer.ckpt: moment shape for '" + name + "' does not match " + shape_str(want));
    s.first_moment[i].second = moments[i].second;
    s.second_moment[i].second = moments[n + i].second;
  }
  const Json j = read_json_file(dir / "checkpoint.json");
  try {
    s.step = j.at("step").get<std::size_t>();
    s.epoch = j.at("epoch").get<std::size_t>();
    s.rng.set_state(j.at("rng_state").get<std::string>());
  } catch (const Json::exception& e) {
    throw ValidationError("checkpoint.json: " + std::string(e.what()));
  }
  return s;
}

}  // namespace denet
