#pragma once

#include <filesystem>

#include "denet/density.hpp"
#include "denet/tensor.hpp"

namespace denet {

/// Reads an 8-bit PNG (any colour type) or binary/ASCII PGM/PPM into a
/// [3,H,W] tensor with values in [0,1]. Grayscale is replicated to 3 channels.
Tensor load_image(const std::filesystem::path& path);

/// Writes a [3,H,W] tensor (values clamped to [0,1]) as an 8-bit RGB PNG.
void save_png_rgb(const std::filesystem::path& path, const Tensor& image);

/// 8-bit grayscale PNG of a density grid, scaled so the maximum maps to 255.
void save_density_png(const std::filesystem::path& path, const DensityGrid& grid);

}  // namespace denet
