#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "denet/enet.hpp"
#include "denet/fusion.hpp"
#include "denet/schema.hpp"

namespace denet {

/// Anything that maps a (masked) [3,H,W] image to a density grid of the same
/// extents. The ENet is one implementation; others can be dropped in to pair
/// a different estimator with the detection branch.
class DensityEstimator {
 public:
  virtual ~DensityEstimator() = default;
  virtual DensityGrid estimate(const Tensor& image) const = 0;
};

/// Pads to a multiple of 8, runs the network without a tape and crops back.
class EnetEstimator : public DensityEstimator {
 public:
  explicit EnetEstimator(const EnetModel& model) : model_(model) {}
  DensityGrid estimate(const Tensor& image) const override;

 private:
  const EnetModel& model_;
};

struct ImageRecord {
  std::string image_id;
  std::size_t n_gt = 0;
  std::size_t n_d = 0;
  double n_e = 0.0;
  double c = 0.0;
  double abs_err() const { return std::abs(c - static_cast<double>(n_gt)); }
};

struct CountReport {
  std::vector<ImageRecord> per_image;
  double mae = 0.0;
  double mse = 0.0;  // mean of squared errors (no square root)
  double rmse() const { return std::sqrt(mse); }
};

/// MAE = mean |C - C_gt|, MSE = mean |C - C_gt|^2.
std::pair<double, double> mae_mse(const std::vector<ImageRecord>& per_image);

struct EvalItem {
  std::string image_id;
  Tensor image;
  DotAnnotation annotation;
};

/// Per image: filter -> mask -> estimate -> fuse, then corpus metrics.
/// Every item needs an entry in `detections` (possibly with no boxes).
CountReport evaluate(const DensityEstimator& estimator, const std::vector<EvalItem>& dataset,
                     const std::map<std::string, DetectionSet>& detections, const FusionConfig& fusion);

struct FoldSplit {
  std::size_t k = 0;
  std::vector<std::vector<std::string>> folds;
};

/// Seeded shuffle, then contiguous partition into k folds whose sizes differ
/// by at most one.
FoldSplit make_folds(const std::vector<std::string>& image_ids, std::size_t k, std::uint64_t seed);

using TrainFn = std::function<std::shared_ptr<const DensityEstimator>(const std::vector<EvalItem>& train_set)>;

/// Train on k-1 folds and evaluate the held-out fold, k times. Rows come back
/// in dataset order with one row per image.
CountReport cross_validate(const std::vector<EvalItem>& dataset, std::size_t k, std::uint64_t seed,
                           const TrainFn& train_fn, const std::map<std::string, DetectionSet>& detections,
                           const FusionConfig& fusion);

Json report_to_json(const CountReport& report);
/// "image_id,n_gt,n_d,n_e,c,abs_err" rows.
std::string report_to_csv(const CountReport& report);

}  // namespace denet
