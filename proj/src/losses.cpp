#include "denet/losses.hpp"

#include <algorithm>
#include <cmath>

#include "denet/errors.hpp"
#include "denet/ops.hpp"

namespace denet {

void LossConfig::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ValidationError("loss.alpha must be >= 0");
  if (!(denom_floor > 0.0) || !std::isfinite(denom_floor))
    throw ValidationError("loss.denom_floor must be > 0");
}

Tensor grid_to_tensor(const DensityGrid& grid) {
  return Tensor({1, grid.height, grid.width}, grid.values);
}

DensityGrid tensor_to_grid(const Tensor& t) {
  if (t.rank() != 3 || t.dim(0) != 1) throw ShapeError("expected a [1,H,W] tensor, got " + shape_str(t.shape()));
  DensityGrid g(t.dim(2), t.dim(1));
  std::copy(t.data().begin(), t.data().end(), g.values.begin());
  return g;
}

Tensor euclidean_loss(Tape& tape, const Tensor& pred, const DensityGrid& gt) {
  if (pred.rank() != 3 || pred.dim(0) != 1 || pred.dim(1) != gt.height || pred.dim(2) != gt.width)
    throw ShapeError("euclidean_loss: prediction " + shape_str(pred.shape()) + " vs ground truth " +
                     std::to_string(gt.height) + "x" + std::to_string(gt.width));
  return mean_all(tape, square(tape, sub(tape, pred, grid_to_tensor(gt))));
}

double counting_denominator(const CountContext& ctx, const LossConfig& cfg) {
  const double raw = static_cast<double>(ctx.n_gt) - static_cast<double>(ctx.n_d) + 1.0;
  return std::max(std::abs(raw), cfg.denom_floor);
}

Tensor counting_loss(Tape& tape, const Tensor& pred, const CountContext& ctx, const LossConfig& cfg) {
  cfg.validate();
  const double d = counting_denominator(ctx, cfg);
  const double residual = static_cast<double>(ctx.n_gt) - static_cast<double>(ctx.n_d);
  // (residual - N_E) / d
  Tensor ratio = affine(tape, sum_all(tape, pred), -1.0 / d, residual / d);
  return square(tape, ratio);
}

LossTerms combined_loss_terms(Tape& tape, const Tensor& pred, const DensityGrid& gt,
                              const CountContext& ctx, const LossConfig& cfg) {
  cfg.validate();
  LossTerms t;
  t.euclidean = euclidean_loss(tape, pred, gt);
  t.counting = counting_loss(tape, pred, ctx, cfg);
  t.total = cfg.alpha == 0.0 ? t.euclidean : add(tape, t.euclidean, affine(tape, t.counting, cfg.alpha));
  return t;
}

}  // namespace denet
