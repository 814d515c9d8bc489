#pragma once

#include <cstddef>

#include "denet/tensor.hpp"

namespace denet {

/// Geometry of a (possibly dilated, strided or depthwise-separable) 2-D
/// convolution.
struct ConvSpec {
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  std::size_t stride = 1;
  std::size_t dilation = 1;
  std::size_t padding = 0;
  std::size_t channels_in = 1;
  std::size_t channels_out = 1;
  bool depthwise_separable = false;

  /// floor((in + 2p - d(k-1) - 1) / s) + 1, or 0 when the kernel does not fit.
  std::size_t out_extent(std::size_t in, std::size_t kernel) const;
  std::size_t out_height(std::size_t in) const { return out_extent(in, kernel_h); }
  std::size_t out_width(std::size_t in) const { return out_extent(in, kernel_w); }

  void validate() const;  // throws InvalidSpecError
};

/// Transposed convolution used for learned 2x upsampling.
struct TransposedConvSpec {
  std::size_t kernel = 4;
  std::size_t stride = 2;
  std::size_t padding = 1;
  std::size_t channels_in = 1;
  std::size_t channels_out = 1;

  /// (in - 1) * s - 2p + k
  std::size_t out_extent(std::size_t in) const;
  /// Throws InvalidSpecError unless out_extent(n) == 2n for every n.
  void validate() const;
};

// All ops take the tape first. When the tape is enabled and any operand
// requires a gradient, the result requires a gradient and a backward closure
// is recorded.

/// input [C_in,H,W], weights [C_out,C_in,kh,kw], bias [C_out] or undefined.
Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& weights, const Tensor& bias,
              const ConvSpec& spec);

/// Depthwise conv (weights [C_in,1,kh,kw], stride/dilation/padding from spec)
/// followed by a 1x1 pointwise conv (weights [C_out,C_in,1,1]) plus bias.
Tensor separable_conv2d(Tape& tape, const Tensor& input, const Tensor& depthwise_weights,
                        const Tensor& pointwise_weights, const Tensor& bias,
                        const ConvSpec& spec);

/// Depthwise stage on its own.
Tensor depthwise_conv2d(Tape& tape, const Tensor& input, const Tensor& weights,
                        const ConvSpec& spec);

/// input [C_in,H,W], weights [C_in,C_out,k,k], bias [C_out] or undefined.
/// Output [C_out, 2H, 2W].
Tensor transposed_conv2d(Tape& tape, const Tensor& input, const Tensor& weights,
                         const Tensor& bias, const TransposedConvSpec& spec);

Tensor relu(Tape& tape, const Tensor& input);
/// Unpadded max pooling on [C,H,W].
Tensor max_pool2d(Tape& tape, const Tensor& input, std::size_t kernel, std::size_t stride);

Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
/// scale * a + shift, elementwise.
Tensor affine(Tape& tape, const Tensor& a, double scale, double shift = 0.0);
Tensor square(Tape& tape, const Tensor& a);

/// Sum of all elements, as a [1] tensor.
Tensor sum_all(Tape& tape, const Tensor& input);
Tensor mean_all(Tape& tape, const Tensor& input);

/// Window [top, top+h) x [left, left+w) of every channel of a [C,H,W] tensor.
Tensor crop2d(Tape& tape, const Tensor& input, std::size_t top, std::size_t left, std::size_t h,
              std::size_t w);

}  // namespace denet
