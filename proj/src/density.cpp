#include "denet/density.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "denet/binary_io.hpp"
#include "denet/errors.hpp"

namespace denet {

void DotAnnotation::validate() const {
  if (width == 0 || height == 0)
    throw ValidationError("annotation '" + image_id + "': width and height must be positive");
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    if (!std::isfinite(p.x) || !std::isfinite(p.y))
      throw ValidationError("annotation '" + image_id + "': point " + std::to_string(i) +
                            " has a non-finite coordinate");
    if (p.x < 0.0 || p.y < 0.0 || p.x >= static_cast<double>(width) ||
        p.y >= static_cast<double>(height))
      throw ValidationError("annotation '" + image_id + "': point " + std::to_string(i) + " (" +
                            std::to_string(p.x) + ", " + std::to_string(p.y) + ") lies outside the " +
                            std::to_string(width) + "x" + std::to_string(height) + " image");
  }
}

void KernelPolicy::validate() const {
  if (!(sigma_fixed > 0.0)) throw ValidationError("kernel.sigma_fixed must be > 0");
  if (!(beta > 0.0)) throw ValidationError("kernel.beta must be > 0");
  if (k_neighbors < 1) throw ValidationError("kernel.k_neighbors must be >= 1");
  if (!(sigma_min > 0.0) || !(sigma_max > 0.0))
    throw ValidationError("kernel.sigma_min and kernel.sigma_max must be > 0");
  if (sigma_min > sigma_max) throw ValidationError("kernel.sigma_min must be <= kernel.sigma_max");
}

double DensityGrid::sum() const {
  double s = 0.0;
  for (double v : values) s += v;
  return s;
}

void splat_gaussian(DensityGrid& grid, Point centre, double sigma) {
  const double radius = 4.0 * sigma;
  const auto clamp_lo = [](double v) { return std::max(0.0, std::ceil(v)); };
  // pixel i is inside the support when |i + 0.5 - c| <= radius
  const auto x0 = static_cast<std::size_t>(clamp_lo(centre.x - radius - 0.5));
  const auto y0 = static_cast<std::size_t>(clamp_lo(centre.y - radius - 0.5));
  const auto x1 = std::min<double>(static_cast<double>(grid.width) - 1, std::floor(centre.x + radius - 0.5));
  const auto y1 = std::min<double>(static_cast<double>(grid.height) - 1, std::floor(centre.y + radius - 0.5));

  const double inv = 1.0 / (2.0 * sigma * sigma);
  double mass = 0.0;
  std::vector<double> wx, wy;
  if (x1 >= static_cast<double>(x0) && y1 >= static_cast<double>(y0)) {
    // Separable: the truncated 2-D kernel is the outer product of 1-D factors.
    for (std::size_t x = x0; static_cast<double>(x) <= x1; ++x) {
      const double d = static_cast<double>(x) + 0.5 - centre.x;
      wx.push_back(std::exp(-d * d * inv));
    }
    for (std::size_t y = y0; static_cast<double>(y) <= y1; ++y) {
      const double d = static_cast<double>(y) + 0.5 - centre.y;
      wy.push_back(std::exp(-d * d * inv));
    }
    double sx = 0.0, sy = 0.0;
    for (double v : wx) sx += v;
    for (double v : wy) sy += v;
    mass = sx * sy;
  }
  if (!(mass > 0.0)) {
    // Kernel narrower than a pixel: all mass to the containing pixel.
    const auto px = std::min(grid.width - 1, static_cast<std::size_t>(std::max(0.0, centre.x)));
    const auto py = std::min(grid.height - 1, static_cast<std::size_t>(std::max(0.0, centre.y)));
    grid.at(px, py) += 1.0;
    return;
  }
  const double norm = 1.0 / mass;
  for (std::size_t j = 0; j < wy.size(); ++j) {
    double* row = grid.values.data() + (y0 + j) * grid.width + x0;
    const double fy = wy[j] * norm;
    for (std::size_t i = 0; i < wx.size(); ++i) row[i] += fy * wx[i];
  }
}

double adaptive_sigma(const std::vector<Point>& points, std::size_t index, const KernelPolicy& policy) {
  if (index >= points.size()) throw ContractError("adaptive_sigma: index out of range");
  if (points.size() < 2) return policy.sigma_fixed;
  std::vector<double> dist;
  dist.reserve(points.size() - 1);
  const Point p = points[index];
  for (std::size_t j = 0; j < points.size(); ++j) {
    if (j == index) continue;
    dist.push_back(std::hypot(points[j].x - p.x, points[j].y - p.y));
  }
  const std::size_t k = std::min(policy.k_neighbors, dist.size());
  std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
  double mean = 0.0;
  for (std::size_t i = 0; i < k; ++i) mean += dist[i];
  mean /= static_cast<double>(k);
  return std::clamp(policy.beta * mean, policy.sigma_min, policy.sigma_max);
}

DensityGrid generate_density_map(const DotAnnotation& ann, const KernelPolicy& policy) {
  ann.validate();
  policy.validate();
  DensityGrid grid(ann.width, ann.height);
  for (std::size_t i = 0; i < ann.points.size(); ++i) {
    const double sigma = policy.mode == KernelMode::Fixed ? policy.sigma_fixed
                                                          : adaptive_sigma(ann.points, i, policy);
    splat_gaussian(grid, ann.points[i], sigma);
  }
  return grid;
}

std::string encode_grid(const DensityGrid& grid) {
  std::string out(kGridMagic);
  binio::put_u32(out, static_cast<std::uint32_t>(grid.width));
  binio::put_u32(out, static_cast<std::uint32_t>(grid.height));
  for (double v : grid.values) binio::put_f64(out, v);
  return out;
}

DensityGrid decode_grid(const std::string& bytes) {
  const std::size_t magic_len = std::strlen(kGridMagic);
  if (bytes.compare(0, magic_len, kGridMagic) != 0)
    throw ValidationError("density grid: missing DENETGRID1 magic");
  binio::Reader r(std::string_view(bytes).substr(magic_len), "density grid");
  const std::size_t w = r.u32(), h = r.u32();
  if (r.remaining() != w * h * 8)
    throw ValidationError("density grid: expected " + std::to_string(w * h) + " values for " +
                          std::to_string(w) + "x" + std::to_string(h));
  DensityGrid grid(w, h);
  for (auto& v : grid.values) v = r.f64();
  return grid;
}

void save_grid(const std::filesystem::path& path, const DensityGrid& grid) {
  binio::write_file(path, encode_grid(grid));
}

DensityGrid load_grid(const std::filesystem::path& path) { return decode_grid(binio::read_file(path)); }

}  // namespace denet
