#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "denet/enet.hpp"
#include "denet/tensor.hpp"

namespace denet {

struct GradCheckOptions {
  double step = 1e-5;          // central-difference h
  double denom_floor = 1e-8;   // |a - f| / max(|f|, floor)
  std::size_t max_entries = 0; // per tensor; 0 checks every entry
  /// Skip entries whose one-sided slopes (L(x+h)-L(x))/h and (L(x)-L(x-h))/h
  /// disagree by more than kink_tolerance relative: a ReLU or max-pool switch
  /// lies inside [x-h, x+h] and the central difference is not a valid oracle
  /// there. Decided from loss values only, never from the analytic gradient.
  bool skip_kinks = false;
  double kink_tolerance = 1e-3;
};

struct GradCheckResult {
  std::string name;
  std::size_t checked = 0;
  std::size_t skipped = 0;   // kink-contaminated entries (skip_kinks only)
  std::size_t nonzero = 0;   // checked entries with a non-zero numeric gradient
  double max_rel_error = 0.0;
  std::string worst;  // "tensor[index]: analytic vs numeric"
};

double relative_error(double analytic, double numeric, double floor);

/// Builds a scalar loss on the given tape from the current values of the
/// inputs. Must be deterministic.
using LossBuilder = std::function<Tensor(Tape&)>;

/// Compares one backward pass against central differences on the listed
/// (name, tensor) inputs. If `entries` is non-empty, only those
/// (input index, flat index) pairs are checked.
GradCheckResult check_gradients(const std::string& name, const LossBuilder& loss,
                                const std::vector<std::pair<std::string, Tensor>>& inputs,
                                const GradCheckOptions& opts,
                                const std::vector<std::pair<std::size_t, std::size_t>>& entries = {});

/// One result per differentiable op (conv variants, separable, transposed,
/// relu, pooling, elementwise, reductions, crop, losses) with inputs drawn
/// from `seed`.
std::vector<GradCheckResult> gradcheck_ops(std::uint64_t seed, const GradCheckOptions& opts = {});

/// Full network + combined loss on an 8x8 input, `n_params` randomly chosen
/// parameter entries (kink-contaminated draws are replaced by fresh ones).
/// The head is re-drawn at full gain with bias 0.5 so the output ReLU is
/// live and the check is not vacuous.
GradCheckResult gradcheck_enet(std::uint64_t seed, const EnetConfig& config, std::size_t n_params,
                               const GradCheckOptions& opts = {});

}  // namespace denet
