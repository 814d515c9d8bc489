#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "denet/checkpoint.hpp"
#include "denet/ops.hpp"
#include "denet/tensor.hpp"

namespace denet {

struct DilatedLayer {
  std::size_t channels = 32;
  std::size_t dilation = 2;
  bool operator==(const DilatedLayer&) const = default;
};

enum class OutputActivation { Relu };

/// Encoder: stride-2 stem conv, two stride-2 separable residual blocks and
/// `middle_blocks` stride-1 residual blocks (total stride 8). Decoder: three
/// conv (7x7, 5x5, 3x3) + 2x transposed-conv stages, a dilated stack and a
/// 1x1 density head.
struct EnetConfig {
  std::size_t middle_blocks = 4;
  std::size_t base_channels = 32;
  std::vector<std::size_t> decoder_channels{128, 64, 32};
  std::vector<DilatedLayer> dilated_stack{{32, 2}, {32, 2}, {32, 2}};
  OutputActivation output_activation = OutputActivation::Relu;

  static constexpr std::size_t kDecoderStages = 3;
  static constexpr std::size_t kEncoderStride = 8;
  static constexpr std::size_t kDecoderKernels[kDecoderStages] = {7, 5, 3};

  /// Throws ValidationError naming the violated invariant.
  void validate() const;
  bool operator==(const EnetConfig&) const = default;
};

class EnetModel {
 public:
  /// Fan-in scaled uniform initialisation; same (config, seed) gives
  /// bitwise-identical parameters.
  static EnetModel build(const EnetConfig& config, std::uint64_t seed);

  /// image [3,H,W] with H, W divisible by 8 -> density [1,H,W].
  Tensor forward(Tape& tape, const Tensor& image) const;
  /// Bottleneck features, [4*base, H/8, W/8].
  Tensor encode(Tape& tape, const Tensor& image) const;

  const EnetConfig& config() const { return config_; }

  /// Parameters in construction order (the checkpoint order).
  const NamedTensors& parameters() const { return params_; }
  NamedTensors& parameters() { return params_; }
  const Tensor& param(const std::string& name) const;
  std::size_t parameter_count() const;
  void zero_grad();

  /// Replace parameter values from a checkpoint; names and shapes must match.
  void load(const NamedTensors& tensors);

 private:
  EnetModel() = default;
  Tensor add_param(const std::string& name, Shape shape);

  Tensor separable(Tape& tape, const Tensor& x, const std::string& prefix, std::size_t c_in,
                   std::size_t c_out) const;
  Tensor conv(Tape& tape, const Tensor& x, const std::string& prefix, const ConvSpec& spec) const;

  EnetConfig config_;
  NamedTensors params_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Right/bottom padding applied by pad_to_multiple.
struct CropRecord {
  std::size_t height = 0;  // original extents
  std::size_t width = 0;
  std::size_t pad_bottom = 0;
  std::size_t pad_right = 0;
  bool empty() const { return pad_bottom == 0 && pad_right == 0; }
};

struct PaddedImage {
  Tensor image;
  CropRecord record;
};

/// Reflect-pads a [C,H,W] tensor on the right/bottom up to the next multiple.
PaddedImage pad_to_multiple(const Tensor& image, std::size_t multiple = EnetConfig::kEncoderStride);
/// Undo pad_to_multiple on a network output (tape-recorded).
Tensor crop_output(Tape& tape, const Tensor& output, const CropRecord& record);

}  // namespace denet
