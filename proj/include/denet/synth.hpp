#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "denet/density.hpp"
#include "denet/tensor.hpp"

namespace denet {

/// Parameters for rendered crowd-like test scenes.
struct SynthConfig {
  std::size_t width = 64;
  std::size_t height = 64;
  std::size_t min_dots = 20;
  std::size_t max_dots = 60;
  double min_spacing = 3.0;  // rejection-sampling distance between dots (px)
  double blob_sigma = 1.5;   // head blob radius (px)
  double noise = 0.02;       // additive Gaussian pixel noise

  void validate() const;
};

struct SynthScene {
  Tensor image;  // [3,H,W] in [0,1]
  DotAnnotation annotation;
};

/// Dots placed by dart throwing, each rendered as a dark head blob over a
/// lighter body smear on a smooth background. Deterministic in `seed`.
SynthScene synthesize_scene(const SynthConfig& cfg, std::uint64_t seed, const std::string& image_id);

}  // namespace denet
