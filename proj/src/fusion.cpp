#include "denet/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "denet/errors.hpp"
#include "denet/rng.hpp"

namespace denet {

std::vector<std::uint8_t> RleMask::decode() const {
  std::vector<std::uint8_t> out(height * width, 0);
  std::size_t pos = 0;
  std::uint8_t value = 0;
  for (auto run : counts) {
    if (pos + run > out.size())
      throw ValidationError("mask_rle: runs exceed the " + std::to_string(height) + "x" +
                            std::to_string(width) + " mask");
    for (std::size_t k = 0; k < run; ++k, ++pos) {
      const std::size_t y = pos % height, x = pos / height;
      out[y * width + x] = value;
    }
    value ^= 1;
  }
  if (pos != out.size())
    throw ValidationError("mask_rle: runs cover " + std::to_string(pos) + " pixels, expected " +
                          std::to_string(out.size()));
  return out;
}

RleMask RleMask::encode(const std::vector<std::uint8_t>& row_major, std::size_t height, std::size_t width) {
  if (row_major.size() != height * width) throw ShapeError("RleMask::encode: size mismatch");
  RleMask m{height, width, {}};
  std::uint8_t value = 0;
  std::uint32_t run = 0;
  for (std::size_t x = 0; x < width; ++x)
    for (std::size_t y = 0; y < height; ++y) {
      const std::uint8_t v = row_major[y * width + x] ? 1 : 0;
      if (v != value) {
        m.counts.push_back(run);
        run = 0;
        value = v;
      }
      ++run;
    }
  m.counts.push_back(run);
  return m;
}

void FusionConfig::validate() const {
  if (!(score_threshold > 0.0 && score_threshold <= 1.0))
    throw ValidationError("fusion.score_threshold must be in (0, 1]");
  if (!(min_box_height_frac > 0.0 && min_box_height_frac <= 1.0))
    throw ValidationError("fusion.min_box_height_frac must be in (0, 1]");
}

bool BinaryMask::contains(Point p) const {
  const auto x = static_cast<std::size_t>(p.x), y = static_cast<std::size_t>(p.y);
  return x < width && y < height && at(x, y);
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(values.begin(), values.end(), std::uint8_t{1}));
}

void validate_detections(const DetectionSet& ds, std::size_t width, std::size_t height) {
  for (std::size_t i = 0; i < ds.detections.size(); ++i) {
    const auto& d = ds.detections[i];
    const auto& b = d.box;
    const std::string where = "detections '" + ds.image_id + "': detection " + std::to_string(i);
    if (!std::isfinite(b.x0) || !std::isfinite(b.y0) || !std::isfinite(b.x1) || !std::isfinite(b.y1))
      throw ValidationError(where + ": box has a non-finite coordinate");
    if (!(b.x0 < b.x1) || !(b.y0 < b.y1)) throw ValidationError(where + ": box requires x0 < x1 and y0 < y1");
    if (b.x1 <= 0.0 || b.y1 <= 0.0 || b.x0 >= static_cast<double>(width) || b.y0 >= static_cast<double>(height))
      throw ValidationError(where + ": box lies entirely outside the image");
    if (!(d.score >= 0.0 && d.score <= 1.0)) throw ValidationError(where + ": score must be in [0, 1]");
  }
}

DetectionSet filter_detections(const DetectionSet& ds, const FusionConfig& cfg, std::size_t width,
                               std::size_t height) {
  cfg.validate();
  validate_detections(ds, width, height);
  DetectionSet out{ds.image_id, {}};
  const double min_h = cfg.min_box_height_frac * static_cast<double>(height);
  for (const auto& d : ds.detections) {
    const double clamped_h = std::min(d.box.y1, static_cast<double>(height)) - std::max(d.box.y0, 0.0);
    if (d.label == "person" && d.score >= cfg.score_threshold && clamped_h >= min_h)
      out.detections.push_back(d);
  }
  return out;
}

namespace {

struct PixelBox {
  std::ptrdiff_t x0, y0, x1, y1;  // half-open, unclamped
};

PixelBox pixel_box(const Box& b) {
  return {static_cast<std::ptrdiff_t>(std::floor(b.x0)), static_cast<std::ptrdiff_t>(std::floor(b.y0)),
          static_cast<std::ptrdiff_t>(std::ceil(b.x1)), static_cast<std::ptrdiff_t>(std::ceil(b.y1))};
}

}  // namespace

BinaryMask detection_region(const DetectionSet& retained, std::size_t width, std::size_t height) {
  BinaryMask region(width, height);
  const auto W = static_cast<std::ptrdiff_t>(width), H = static_cast<std::ptrdiff_t>(height);
  for (std::size_t i = 0; i < retained.detections.size(); ++i) {
    const auto& d = retained.detections[i];
    const PixelBox pb = pixel_box(d.box);
    if (!d.mask) {
      for (auto y = std::max<std::ptrdiff_t>(pb.y0, 0); y < std::min(pb.y1, H); ++y)
        for (auto x = std::max<std::ptrdiff_t>(pb.x0, 0); x < std::min(pb.x1, W); ++x)
          region.set(static_cast<std::size_t>(x), static_cast<std::size_t>(y));
      continue;
    }
    const auto& m = *d.mask;
    std::ptrdiff_t ox, oy;
    if (m.height == height && m.width == width) {
      ox = oy = 0;
    } else if (static_cast<std::ptrdiff_t>(m.height) == pb.y1 - pb.y0 &&
               static_cast<std::ptrdiff_t>(m.width) == pb.x1 - pb.x0) {
      ox = pb.x0;
      oy = pb.y0;
    } else {
      throw ValidationError("detection " + std::to_string(i) + ": mask size " + std::to_string(m.height) + "x" +
                            std::to_string(m.width) + " matches neither the image (" + std::to_string(height) +
                            "x" + std::to_string(width) + ") nor its box (" + std::to_string(pb.y1 - pb.y0) +
                            "x" + std::to_string(pb.x1 - pb.x0) + ")");
    }
    const auto bits = m.decode();
    for (std::size_t my = 0; my < m.height; ++my)
      for (std::size_t mx = 0; mx < m.width; ++mx) {
        if (!bits[my * m.width + mx]) continue;
        const auto x = ox + static_cast<std::ptrdiff_t>(mx), y = oy + static_cast<std::ptrdiff_t>(my);
        if (x >= 0 && x < W && y >= 0 && y < H) region.set(static_cast<std::size_t>(x), static_cast<std::size_t>(y));
      }
  }
  return region;
}

BinaryMask dilate(const BinaryMask& mask, std::size_t radius) {
  if (radius == 0) return mask;
  // Square structuring element, done as two 1-D passes.
  BinaryMask tmp(mask.width, mask.height), out(mask.width, mask.height);
  const auto r = static_cast<std::ptrdiff_t>(radius);
  const auto W = static_cast<std::ptrdiff_t>(mask.width), H = static_cast<std::ptrdiff_t>(mask.height);
  for (std::ptrdiff_t y = 0; y < H; ++y)
    for (std::ptrdiff_t x = 0; x < W; ++x) {
      if (!mask.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y))) continue;
      for (auto xx = std::max<std::ptrdiff_t>(0, x - r); xx <= std::min(W - 1, x + r); ++xx)
        tmp.set(static_cast<std::size_t>(xx), static_cast<std::size_t>(y));
    }
  for (std::ptrdiff_t y = 0; y < H; ++y)
    for (std::ptrdiff_t x = 0; x < W; ++x) {
      if (!tmp.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y))) continue;
      for (auto yy = std::max<std::ptrdiff_t>(0, y - r); yy <= std::min(H - 1, y + r); ++yy)
        out.set(static_cast<std::size_t>(x), static_cast<std::size_t>(yy));
    }
  return out;
}

MaskedScene apply_masks(const Tensor& image, const DotAnnotation& ann, const DetectionSet& retained,
                        const FusionConfig& cfg) {
  cfg.validate();
  ann.validate();
  if (image.rank() != 3 || image.dim(1) != ann.height || image.dim(2) != ann.width)
    throw ValidationError("apply_masks: image " + shape_str(image.shape()) + " does not match annotation '" +
                          ann.image_id + "' (" + std::to_string(ann.height) + "x" + std::to_string(ann.width) + ")");
  validate_detections(retained, ann.width, ann.height);

  MaskedScene scene;
  scene.n_d = retained.detections.size();
  scene.region_mask = dilate(detection_region(retained, ann.width, ann.height), cfg.mask_dilation_px);
  scene.masked_image = image.clone();
  const std::size_t plane = ann.width * ann.height;
  auto px = scene.masked_image.mutable_data();
  for (std::size_t c = 0; c < image.dim(0); ++c)
    for (std::size_t i = 0; i < plane; ++i)
      if (scene.region_mask.values[i]) px[c * plane + i] = 0.0;

  scene.residual = DotAnnotation{ann.image_id, ann.width, ann.height, {}};
  for (const auto& p : ann.points) {
    if (scene.region_mask.contains(p))
      ++scene.removed_dots;
    else
      scene.residual.points.push_back(p);
  }
  return scene;
}

CountRecord fuse_count(std::size_t n_d, const Tensor& pred) {
  double n_e = 0.0;
  for (double v : pred.data()) n_e += v;
  return {n_d, n_e, static_cast<double>(n_d) + n_e};
}

DetectionSet mock_detect(const DotAnnotation& ann, double recall, std::size_t box_h, std::uint64_t seed) {
  ann.validate();
  if (!(recall >= 0.0 && recall <= 1.0)) throw ValidationError("mock_detect: recall must be in [0, 1]");
  if (box_h == 0) throw ValidationError("mock_detect: box height must be positive");
  const std::size_t n = ann.points.size();
  const auto take = std::min(n, static_cast<std::size_t>(std::floor(recall * static_cast<double>(n) + 1e-9)));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  order.resize(take);
  std::sort(order.begin(), order.end());

  const auto place = [](double centre, double side, double extent) {
    if (side >= extent) return std::pair{0.0, extent};
    const double lo = std::clamp(centre - side / 2.0, 0.0, extent - side);
    return std::pair{lo, lo + side};
  };
  DetectionSet ds{ann.image_id, {}};
  const double side = static_cast<double>(box_h);
  for (auto i : order) {
    const auto [x0, x1] = place(ann.points[i].x, side, static_cast<double>(ann.width));
    const auto [y0, y1] = place(ann.points[i].y, side, static_cast<double>(ann.height));
    ds.detections.push_back({{x0, y0, x1, y1}, 1.0, std::nullopt, "person"});
  }
  return ds;
}

}  // namespace denet
