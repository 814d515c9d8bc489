#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace denet {

struct Point {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point&) const = default;
};

/// Head-centre dot annotations for one image, in pixel coordinates.
/// Pixel (i, j) covers [i, i+1) x [j, j+1).
struct DotAnnotation {
  std::string image_id;
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<Point> points;

  /// Throws ValidationError naming the first offending point.
  void validate() const;
  bool operator==(const DotAnnotation&) const = default;
};

enum class KernelMode { Fixed, Adaptive };

struct KernelPolicy {
  KernelMode mode = KernelMode::Fixed;
  double sigma_fixed = 15.0;
  double beta = 0.3;
  std::size_t k_neighbors = 3;
  double sigma_min = 1.0;
  double sigma_max = 25.0;

  void validate() const;
};

/// Non-negative H x W grid whose total is a person count.
struct DensityGrid {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> values;  // row-major, height * width

  DensityGrid() = default;
  DensityGrid(std::size_t w, std::size_t h) : width(w), height(h), values(w * h, 0.0) {}

  double& at(std::size_t x, std::size_t y) { return values[y * width + x]; }
  double at(std::size_t x, std::size_t y) const { return values[y * width + x]; }
  double sum() const;
  bool operator==(const DensityGrid&) const = default;
};

/// Per-dot Gaussian kernels truncated at 4 sigma, clipped to the image and
/// renormalised to unit mass, so sum(grid) == |points| up to rounding.
DensityGrid generate_density_map(const DotAnnotation& ann, const KernelPolicy& policy);

/// Geometry-adaptive bandwidth for points[index]:
/// clamp(beta * mean distance to k nearest other points, sigma_min, sigma_max).
/// Falls back to sigma_fixed when fewer than two points exist.
double adaptive_sigma(const std::vector<Point>& points, std::size_t index, const KernelPolicy& policy);

/// Unit-mass kernel of one dot, accumulated into `grid`.
void splat_gaussian(DensityGrid& grid, Point centre, double sigma);

inline constexpr char kGridMagic[] = "DENETGRID1";

/// "DENETGRID1", u32 width, u32 height, then H*W f64 row-major (little-endian).
std::string encode_grid(const DensityGrid& grid);
DensityGrid decode_grid(const std::string& bytes);
void save_grid(const std::filesystem::path& path, const DensityGrid& grid);
DensityGrid load_grid(const std::filesystem::path& path);

}  // namespace denet
