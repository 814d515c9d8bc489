#pragma once

#include <cstddef>

#include "denet/density.hpp"
#include "denet/tensor.hpp"

namespace denet {

struct LossConfig {
  double alpha = 0.1;        // weight of the counting loss
  double denom_floor = 1.0;  // lower bound on |N_GT - N_D + 1|

  void validate() const;
};

struct CountContext {
  std::size_t n_gt = 0;  // ground-truth persons in the whole image
  std::size_t n_d = 0;   // retained detections
};

/// Mean over pixels of (pred - gt)^2. pred is [1,H,W].
Tensor euclidean_loss(Tape& tape, const Tensor& pred, const DensityGrid& gt);

/// ((N_GT - N_D - N_E) / d)^2 with N_E = sum(pred) and
/// d = max(|N_GT - N_D + 1|, denom_floor). N_D carries no gradient.
Tensor counting_loss(Tape& tape, const Tensor& pred, const CountContext& ctx, const LossConfig& cfg);

/// The denominator used by counting_loss.
double counting_denominator(const CountContext& ctx, const LossConfig& cfg);

struct LossTerms {
  Tensor euclidean;
  Tensor counting;
  Tensor total;  // euclidean + alpha * counting
};

LossTerms combined_loss_terms(Tape& tape, const Tensor& pred, const DensityGrid& gt,
                              const CountContext& ctx, const LossConfig& cfg);

inline Tensor combined_loss(Tape& tape, const Tensor& pred, const DensityGrid& gt,
                            const CountContext& ctx, const LossConfig& cfg) {
  return combined_loss_terms(tape, pred, gt, ctx, cfg).total;
}

/// Wraps a grid as a [1,H,W] tensor.
Tensor grid_to_tensor(const DensityGrid& grid);
/// Channel 0 of a [1,H,W] tensor as a grid.
DensityGrid tensor_to_grid(const Tensor& t);

}  // namespace denet
