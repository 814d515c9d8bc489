#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "denet/density.hpp"
#include "denet/enet.hpp"
#include "denet/fusion.hpp"
#include "denet/losses.hpp"
#include "denet/rng.hpp"

namespace denet {

struct TrainConfig {
  double lr_initial = 1e-4;
  double lr_decay_factor = 0.5;
  std::size_t lr_decay_every = 20;  // epochs
  std::size_t epochs = 1;
  std::size_t batch_size = 1;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
  /// lr_initial * decay^floor(epoch / decay_every)
  double learning_rate(std::size_t epoch) const;
};

/// One training example after masking and augmentation.
struct TrainSample {
  std::string id;
  Tensor image;  // masked, [3,H,W]
  DensityGrid gt;
  BinaryMask region_mask;
  DotAnnotation residual;
  CountContext counts;
};

/// Optimiser and schedule state; together with the parameters this is
/// everything needed to resume.
struct TrainState {
  std::size_t step = 0;
  std::size_t epoch = 0;
  NamedTensors first_moment;
  NamedTensors second_moment;
  Rng rng;

  static TrainState init(const EnetModel& model, std::uint64_t seed);
};

struct StepResult {
  double loss_total = 0.0;  // batch mean, before the update
  double loss_e = 0.0;
  double loss_c = 0.0;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Residual GT and counts for a masked scene. `full` is the unmasked
/// annotation.
TrainSample make_sample(const MaskedScene& scene, const DotAnnotation& full, const KernelPolicy& policy);

/// Four samples per scene: identity, horizontal flip and two seeded
/// 0.75-scale crops. Crop GT is regenerated from the residual dots inside
/// the crop; crop counts use the dots and detection-box centres inside it.
std::vector<TrainSample> augment(const MaskedScene& scene, const DotAnnotation& full,
                                 const DetectionSet& retained, const KernelPolicy& policy, Rng& rng);

TrainSample flip_horizontal(const TrainSample& s);

/// Forward + combined loss for one sample, recorded on `tape`.
LossTerms sample_loss(Tape& tape, const EnetModel& model, const TrainSample& sample, const LossConfig& loss_cfg);

/// Accumulates gradients over the batch (mean) and applies one Adam update at
/// the scheduled learning rate. Throws TrainingError on a non-finite loss.
StepResult train_step(EnetModel& model, const std::vector<const TrainSample*>& batch,
                      const LossConfig& loss_cfg, TrainState& state, const TrainConfig& cfg);

struct LossRow {
  std::size_t step;
  std::size_t epoch;
  double lr;
  double loss_e;
  double loss_c;
  double loss_total;
};

inline constexpr char kLossCsvHeader[] = "step,epoch,lr,loss_e,loss_c,loss_total";

/// Raw inputs for one training image.
struct SceneInput {
  std::string image_id;
  Tensor image;
  DotAnnotation annotation;
  DetectionSet detections;
};

/// filter -> mask -> augment for every scene, in input order.
std::vector<TrainSample> prepare_training_set(const std::vector<SceneInput>& scenes,
                                              const FusionConfig& fusion, const KernelPolicy& policy,
                                              Rng& rng);

struct TrainOptions {
  /// When set, the checkpoint, optimiser state, sidecar JSON and loss CSV are
  /// written here after every epoch.
  std::optional<std::filesystem::path> out_dir;
  std::function<void(const LossRow&)> on_step;
};

struct TrainResult {
  std::vector<LossRow> curve;
  TrainState state;
};

/// Seeded-shuffle epochs over the augmented samples of `scenes`.
TrainResult train(EnetModel& model, const std::vector<SceneInput>& scenes, const FusionConfig& fusion,
                  const KernelPolicy& policy, const LossConfig& loss_cfg, const TrainConfig& cfg,
                  const TrainOptions& options = {});

/// Run epochs [state.epoch, cfg.epochs) over prepared samples.
std::vector<LossRow> run_epochs(EnetModel& model, const std::vector<TrainSample>& samples,
                                const LossConfig& loss_cfg, TrainState& state, const TrainConfig& cfg,
                                const TrainOptions& options);

void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRow>& rows);

/// checkpoint.ckpt + optimizer.ckpt + checkpoint.json in `dir`.
void save_training_checkpoint(const std::filesystem::path& dir, const EnetModel& model, const TrainState& state,
                              const TrainConfig& cfg);
/// Restores parameters into `model` and returns the optimiser state.
TrainState load_training_checkpoint(const std::filesystem::path& dir, EnetModel& model);

}  // namespace denet
