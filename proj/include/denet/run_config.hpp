#pragma once

#include <filesystem>
#include <string>

#include "denet/density.hpp"
#include "denet/enet.hpp"
#include "denet/fusion.hpp"
#include "denet/losses.hpp"
#include "denet/schema.hpp"
#include "denet/trainer.hpp"

namespace denet {

struct RunPaths {
  std::string dataset;     // dataset manifest JSON
  std::string detections;  // directory of <image_id>.json detection files
  std::string checkpoint;  // DENETCKPT1 parameter file
  bool operator==(const RunPaths&) const = default;
};

/// Everything a CLI run depends on besides its flags.
///
/// {"model": {...}, "loss": {...}, "fusion": {...}, "train": {...},
///  "kernel": {...}, "paths": {...}}
///
/// Every section and key is optional and defaults to the module default.
/// Unknown keys anywhere are rejected.
struct RunConfig {
  EnetConfig model;
  LossConfig loss;
  FusionConfig fusion;
  TrainConfig train;
  KernelPolicy kernel;
  RunPaths paths;

  /// Runs every module's validate().
  void validate() const;
};

/// Throws ValidationError naming the offending key ("train.epochs: ...").
RunConfig run_config_from_json(const Json& j);
Json run_config_to_json(const RunConfig& cfg);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace denet
