#include "denet/synth.hpp"

#include <algorithm>
#include <cmath>

#include "denet/errors.hpp"
#include "denet/rng.hpp"

namespace denet {

void SynthConfig::validate() const {
  if (width == 0 || height == 0) throw ValidationError("synth: width and height must be positive");
  if (min_dots > max_dots) throw ValidationError("synth: min_dots must be <= max_dots");
  if (!(min_spacing >= 0.0)) throw ValidationError("synth: min_spacing must be >= 0");
  if (!(blob_sigma > 0.0)) throw ValidationError("synth: blob_sigma must be > 0");
  if (!(noise >= 0.0)) throw ValidationError("synth: noise must be >= 0");
}

SynthScene synthesize_scene(const SynthConfig& cfg, std::uint64_t seed, const std::string& image_id) {
  cfg.validate();
  Rng rng(seed);
  const std::size_t n = cfg.min_dots + static_cast<std::size_t>(rng.below(cfg.max_dots - cfg.min_dots + 1));
  const double W = static_cast<double>(cfg.width), H = static_cast<double>(cfg.height);

  DotAnnotation ann{image_id, cfg.width, cfg.height, {}};
  double spacing = cfg.min_spacing;
  std::size_t failures = 0;
  while (ann.points.size() < n) {
    const Point p{rng.uniform(0.0, W), rng.uniform(0.0, H)};
    const bool ok = std::all_of(ann.points.begin(), ann.points.end(), [&](const Point& q) {
      return std::hypot(p.x - q.x, p.y - q.y) >= spacing;
    });
    if (ok) {
      ann.points.push_back(p);
      failures = 0;
    } else if (++failures > 1000) {
      spacing *= 0.9;  // too crowded for the requested spacing
      failures = 0;
    }
  }

  // Background: smooth colour gradient.
  const double base[3] = {rng.uniform(0.55, 0.8), rng.uniform(0.55, 0.8), rng.uniform(0.55, 0.8)};
  const double tilt_x = rng.uniform(-0.15, 0.15), tilt_y = rng.uniform(-0.15, 0.15);
  Tensor img({3, cfg.height, cfg.width});
  auto d = img.mutable_data();
  const std::size_t plane = cfg.width * cfg.height;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < cfg.height; ++y)
      for (std::size_t x = 0; x < cfg.width; ++x)
        d[c * plane + y * cfg.width + x] = base[c] + tilt_x * (x / W - 0.5) + tilt_y * (y / H - 0.5);

  const double s = cfg.blob_sigma;
  const double reach = 4.0 * s;
  for (const auto& p : ann.points) {
    const double shade = rng.uniform(0.35, 0.6);
    const double tint[3] = {rng.uniform(0.8, 1.0), rng.uniform(0.8, 1.0), rng.uniform(0.8, 1.0)};
    const auto x0 = static_cast<std::size_t>(std::max(0.0, p.x - reach));
    const auto x1 = static_cast<std::size_t>(std::min(W - 1, p.x + reach));
    const auto y0 = static_cast<std::size_t>(std::max(0.0, p.y - reach));
    const auto y1 = static_cast<std::size_t>(std::min(H - 1, p.y + 2.5 * reach));
    for (std::size_t y = y0; y <= y1; ++y)
      for (std::size_t x = x0; x <= x1; ++x) {
        const double dx = x + 0.5 - p.x, dy = y + 0.5 - p.y;
        const double head = std::exp(-(dx * dx + dy * dy) / (2 * s * s));
        // shoulders: wider, fainter, below the head
        const double by = dy - 2.5 * s;
        const double body = by > -s ? 0.4 * std::exp(-(dx * dx) / (2 * 4 * s * s) - (by * by) / (2 * 9 * s * s)) : 0.0;
        const double a = std::max(head, body) * shade;
        for (std::size_t c = 0; c < 3; ++c) {
          double& v = d[c * plane + y * cfg.width + x];
          v = v * (1.0 - a) + a * 0.1 * tint[c];
        }
      }
  }
  for (auto& v : d) v = std::clamp(v + cfg.noise * rng.normal(), 0.0, 1.0);
  return {img, ann};
}

}  // namespace denet
