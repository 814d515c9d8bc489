#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "denet/density.hpp"
#include "denet/tensor.hpp"

namespace denet {

struct Box {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  double height() const { return y1 - y0; }
  bool operator==(const Box&) const = default;
};

/// Uncompressed run-length mask: column-major runs alternating
/// background/foreground, starting with background.
struct RleMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint32_t> counts;

  /// Row-major h*w bytes (0/1). Throws ValidationError if runs do not cover
  /// exactly h*w pixels.
  std::vector<std::uint8_t> decode() const;
  static RleMask encode(const std::vector<std::uint8_t>& row_major, std::size_t height, std::size_t width);
  bool operator==(const RleMask&) const = default;
};

struct Detection {
  Box box;
  double score = 1.0;
  /// Either image-aligned (size == image extents) or box-aligned
  /// (size == pixel extents of the box, origin at floor(x0), floor(y0)).
  std::optional<RleMask> mask;
  std::string label = "person";
  bool operator==(const Detection&) const = default;
};

struct DetectionSet {
  std::string image_id;
  std::vector<Detection> detections;
  bool operator==(const DetectionSet&) const = default;
};

struct FusionConfig {
  double score_threshold = 0.7;
  double min_box_height_frac = 0.10;  // of the image height
  std::size_t mask_dilation_px = 2;

  void validate() const;
};

struct BinaryMask {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> values;  // row-major

  BinaryMask() = default;
  BinaryMask(std::size_t w, std::size_t h) : width(w), height(h), values(w * h, 0) {}
  bool at(std::size_t x, std::size_t y) const { return values[y * width + x] != 0; }
  void set(std::size_t x, std::size_t y) { values[y * width + x] = 1; }
  /// Pixel containing the (in-image) point.
  bool contains(Point p) const;
  std::size_t count() const;
  bool operator==(const BinaryMask&) const = default;
};

/// The image after detected people have been removed.
struct MaskedScene {
  Tensor masked_image;  // [3,H,W], zero inside region_mask
  DotAnnotation residual;
  std::size_t n_d = 0;
  BinaryMask region_mask;
  std::size_t removed_dots = 0;
};

struct CountRecord {
  std::size_t n_d = 0;
  double n_e = 0.0;
  double c = 0.0;  // n_d + n_e
};

/// Checks every box (finite, x0 < x1, y0 < y1, overlaps the image) and score;
/// throws ValidationError naming the offending index.
void validate_detections(const DetectionSet& ds, std::size_t width, std::size_t height);

/// Keeps "person" detections with score >= threshold whose clamped box height
/// is at least min_box_height_frac * height. Order is preserved.
DetectionSet filter_detections(const DetectionSet& ds, const FusionConfig& cfg, std::size_t width,
                               std::size_t height);

/// Union of (dilated) detection masks, zero-filled in the image; dots whose
/// pixel falls in the union are removed from the annotation.
MaskedScene apply_masks(const Tensor& image, const DotAnnotation& ann, const DetectionSet& retained,
                        const FusionConfig& cfg);

/// Region covered by the retained detections, before dilation.
BinaryMask detection_region(const DetectionSet& retained, std::size_t width, std::size_t height);
BinaryMask dilate(const BinaryMask& mask, std::size_t radius);

CountRecord fuse_count(std::size_t n_d, const Tensor& pred);

/// Deterministic stand-in for a detector: picks floor(recall * |points|) dots
/// by a seeded permutation (so lower recalls select a prefix of higher ones)
/// and emits score-1 square boxes of side box_h containing each dot, shifted
/// inwards at image borders.
DetectionSet mock_detect(const DotAnnotation& ann, double recall, std::size_t box_h, std::uint64_t seed);

}  // namespace denet
