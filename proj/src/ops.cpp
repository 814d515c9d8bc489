#include "denet/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "denet/errors.hpp"

namespace denet {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

MatMap as_mat(std::span<double> s, std::size_t rows, std::size_t cols) {
  return MatMap(s.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
ConstMatMap as_mat(std::span<const double> s, std::size_t rows, std::size_t cols) {
  return ConstMatMap(s.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

// Sliding-window geometry shared by im2col and col2im. `in_*` is the
// spatial extent being sampled, `out_*` the extent of the window grid.
struct Window {
  std::size_t channels, in_h, in_w, kh, kw, stride, dilation, pad, out_h, out_w;
  std::size_t rows() const { return channels * kh * kw; }
  std::size_t cols() const { return out_h * out_w; }
};

AlignedVector im2col(std::span<const double> x, const Window& g) {
  AlignedVector cols(g.rows() * g.cols(), 0.0);
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t c = 0; c < g.channels; ++c) {
    const double* plane = x.data() + c * g.in_h * g.in_w;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        double* row = cols.data() + ((c * g.kh + i) * g.kw + j) * g.cols();
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + i * g.dilation) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
          const double* src = plane + iy * static_cast<std::ptrdiff_t>(g.in_w);
          double* dst = row + oy * g.out_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + j * g.dilation) - pad;
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.in_w)) dst[ox] = src[ix];
          }
        }
      }
    }
  }
  return cols;
}

// Adjoint of im2col: scatter-add columns back onto the sampled grid.
void col2im_add(std::span<const double> cols, const Window& g, std::span<double> x) {
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t c = 0; c < g.channels; ++c) {
    double* plane = x.data() + c * g.in_h * g.in_w;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const double* row = cols.data() + ((c * g.kh + i) * g.kw + j) * g.cols();
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + i * g.dilation) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
          double* dst = plane + iy * static_cast<std::ptrdiff_t>(g.in_w);
          const double* src = row + oy * g.out_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + j * g.dilation) - pad;
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.in_w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

bool is_pointwise(const Window& g) {
  return g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0;
}

Tensor result(Tape& tape, Shape shape, std::initializer_list<const Tensor*> inputs) {
  return Tensor(std::move(shape), tape.should_record(inputs));
}

void require_rank3(const Tensor& t, const char* what) {
  if (t.rank() != 3)
    throw ShapeError(std::string(what) + ": expected [C,H,W] input, got " + shape_str(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

void check_bias(const Tensor& bias, std::size_t channels, const char* what) {
  if (bias.defined() && bias.shape() != Shape{channels})
    throw ShapeError(std::string(what) + ": bias must be [" + std::to_string(channels) + "], got " +
                     shape_str(bias.shape()));
}

}  // namespace

std::size_t ConvSpec::out_extent(std::size_t in, std::size_t kernel) const {
  const std::size_t span = dilation * (kernel - 1) + 1;
  if (stride == 0 || in + 2 * padding < span) return 0;
  return (in + 2 * padding - span) / stride + 1;
}

void ConvSpec::validate() const {
  if (kernel_h == 0 || kernel_w == 0) throw InvalidSpecError("conv: kernel extents must be positive");
  if (stride == 0) throw InvalidSpecError("conv: stride must be positive");
  if (dilation == 0) throw InvalidSpecError("conv: dilation must be >= 1");
  if (channels_in == 0 || channels_out == 0)
    throw InvalidSpecError("conv: channel counts must be positive");
}

std::size_t TransposedConvSpec::out_extent(std::size_t in) const {
  const std::size_t grown = (in - 1) * stride + kernel;
  return grown >= 2 * padding ? grown - 2 * padding : 0;
}

void TransposedConvSpec::validate() const {
  if (kernel == 0 || stride == 0) throw InvalidSpecError("transposed conv: kernel and stride must be positive");
  if (channels_in == 0 || channels_out == 0)
    throw InvalidSpecError("transposed conv: channel counts must be positive");
  // (n-1)s - 2p + k == 2n for all n  <=>  s == 2 and k - 2p == 2
  if (stride != 2 || kernel != 2 * padding + 2)
    throw InvalidSpecError("transposed conv: kernel " + std::to_string(kernel) + ", stride " +
                           std::to_string(stride) + ", padding " + std::to_string(padding) +
                           " does not double the spatial extent");
}

Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& weights, const Tensor& bias,
              const ConvSpec& spec) {
  spec.validate();
  require_rank3(input, "conv2d");
  const Shape wshape{spec.channels_out, spec.channels_in, spec.kernel_h, spec.kernel_w};
  if (input.dim(0) != spec.channels_in)
    throw ShapeError("conv2d: input has " + std::to_string(input.dim(0)) + " channels, spec expects " +
                     std::to_string(spec.channels_in));
  if (weights.shape() != wshape)
    throw ShapeError("conv2d: weights must be " + shape_str(wshape) + ", got " +
                     shape_str(weights.shape()));
  check_bias(bias, spec.channels_out, "conv2d");

  const std::size_t h = input.dim(1), w = input.dim(2);
  const Window g{spec.channels_in, h,           w,           spec.kernel_h, spec.kernel_w,
                 spec.stride,      spec.dilation, spec.padding, spec.out_height(h), spec.out_width(w)};
  if (g.out_h == 0 || g.out_w == 0)
    throw InvalidSpecError("conv2d: " + std::to_string(h) + "x" + std::to_string(w) +
                           " input yields an empty output for this kernel/dilation/padding");

  Tensor out = result(tape, {spec.channels_out, g.out_h, g.out_w}, {&input, &weights, &bias});
  {
    AlignedVector cols_buf;
    std::span<const double> cols = input.data();
    if (!is_pointwise(g)) {
      cols_buf = im2col(input.data(), g);
      cols = cols_buf;
    }
    auto o = as_mat(out.mutable_data(), spec.channels_out, g.cols());
    o.noalias() = as_mat(weights.data(), spec.channels_out, g.rows()) * as_mat(cols, g.rows(), g.cols());
    if (bias.defined()) {
      const auto b = bias.data();
      for (std::size_t c = 0; c < spec.channels_out; ++c) o.row(static_cast<Eigen::Index>(c)).array() += b[c];
    }
  }

  if (out.requires_grad()) {
    tape.record([input, weights, bias, out, g, cout = spec.channels_out]() mutable {
      if (!out.has_grad()) return;
      const auto go = as_mat(out.grad(), cout, g.cols());
      if (bias.requires_grad()) {
        auto gb = bias.mutable_grad();
        for (std::size_t c = 0; c < cout; ++c) gb[c] += go.row(static_cast<Eigen::Index>(c)).sum();
      }
      if (weights.requires_grad()) {
        AlignedVector cols_buf;
        std::span<const double> cols = input.data();
        if (!is_pointwise(g)) {
          cols_buf = im2col(input.data(), g);
          cols = cols_buf;
        }
        as_mat(weights.mutable_grad(), cout, g.rows()).noalias() +=
            go * as_mat(cols, g.rows(), g.cols()).transpose();
      }
      if (input.requires_grad()) {
        const auto wm = as_mat(weights.data(), cout, g.rows());
        if (is_pointwise(g)) {
          as_mat(input.mutable_grad(), g.rows(), g.cols()).noalias() += wm.transpose() * go;
        } else {
          RowMat gcols = wm.transpose() * go;
          col2im_add(std::span<const double>(gcols.data(), static_cast<std::size_t>(gcols.size())), g,
                     input.mutable_grad());
        }
      }
    });
  }
  return out;
}

Tensor depthwise_conv2d(Tape& tape, const Tensor& input, const Tensor& weights, const ConvSpec& spec) {
  spec.validate();
  require_rank3(input, "depthwise_conv2d");
  const std::size_t c_in = input.dim(0), h = input.dim(1), w = input.dim(2);
  if (c_in != spec.channels_in)
    throw ShapeError("depthwise_conv2d: input has " + std::to_string(c_in) + " channels, spec expects " +
                     std::to_string(spec.channels_in));
  const Shape wshape{c_in, 1, spec.kernel_h, spec.kernel_w};
  if (weights.shape() != wshape)
    throw ShapeError("depthwise_conv2d: weights must be " + shape_str(wshape) + ", got " +
                     shape_str(weights.shape()));
  const Window g{1, h, w, spec.kernel_h, spec.kernel_w, spec.stride, spec.dilation, spec.padding,
                 spec.out_height(h), spec.out_width(w)};
  if (g.out_h == 0 || g.out_w == 0)
    throw InvalidSpecError("depthwise_conv2d: empty output for this kernel/dilation/padding");

  Tensor out = result(tape, {c_in, g.out_h, g.out_w}, {&input, &weights});
  const std::size_t taps = g.kh * g.kw, plane_in = h * w, plane_out = g.cols();
  {
    auto o = out.mutable_data();
    const auto x = input.data();
    const auto k = weights.data();
    for (std::size_t c = 0; c < c_in; ++c) {
      const auto cols = im2col(x.subspan(c * plane_in, plane_in), g);
      auto oc = o.subspan(c * plane_out, plane_out);
      for (std::size_t t = 0; t < taps; ++t) {
        const double kv = k[c * taps + t];
        const double* row = cols.data() + t * plane_out;
        for (std::size_t p = 0; p < plane_out; ++p) oc[p] += kv * row[p];
      }
    }
  }

  if (out.requires_grad()) {
    tape.record([input, weights, out, g, c_in, taps, plane_in, plane_out]() mutable {
      if (!out.has_grad()) return;
      const auto go = out.grad();
      const auto x = input.data();
      const auto k = weights.data();
      for (std::size_t c = 0; c < c_in; ++c) {
        const auto goc = go.subspan(c * plane_out, plane_out);
        if (weights.requires_grad()) {
          const auto cols = im2col(x.subspan(c * plane_in, plane_in), g);
          auto gk = weights.mutable_grad();
          for (std::size_t t = 0; t < taps; ++t) {
            const double* row = cols.data() + t * plane_out;
            double acc = 0.0;
            for (std::size_t p = 0; p < plane_out; ++p) acc += goc[p] * row[p];
            gk[c * taps + t] += acc;
          }
        }
        if (input.requires_grad()) {
          std::vector<double> gcols(taps * plane_out);
          for (std::size_t t = 0; t < taps; ++t)
            for (std::size_t p = 0; p < plane_out; ++p) gcols[t * plane_out + p] = k[c * taps + t] * goc[p];
          col2im_add(gcols, g, input.mutable_grad().subspan(c * plane_in, plane_in));
        }
      }
    });
  }
  return out;
}

Tensor separable_conv2d(Tape& tape, const Tensor& input, const Tensor& depthwise_weights,
                        const Tensor& pointwise_weights, const Tensor& bias, const ConvSpec& spec) {
  spec.validate();
  require_rank3(input, "separable_conv2d");
  if (depthwise_weights.rank() != 4 || depthwise_weights.dim(0) != input.dim(0))
    throw ShapeError("separable_conv2d: depthwise kernel count must equal input channels (" +
                     std::to_string(input.dim(0)) + "), got weights " +
                     shape_str(depthwise_weights.shape()));
  const Shape pshape{spec.channels_out, spec.channels_in, 1, 1};
  if (pointwise_weights.shape() != pshape)
    throw ShapeError("separable_conv2d: pointwise weights must be " + shape_str(pshape) + ", got " +
                     shape_str(pointwise_weights.shape()));
  ConvSpec pointwise{1, 1, 1, 1, 0, spec.channels_in, spec.channels_out, false};
  Tensor mid = depthwise_conv2d(tape, input, depthwise_weights, spec);
  return conv2d(tape, mid, pointwise_weights, bias, pointwise);
}

Tensor transposed_conv2d(Tape& tape, const Tensor& input, const Tensor& weights, const Tensor& bias,
                         const TransposedConvSpec& spec) {
  spec.validate();
  require_rank3(input, "transposed_conv2d");
  const std::size_t c_in = input.dim(0), h = input.dim(1), w = input.dim(2);
  if (c_in != spec.channels_in)
    throw ShapeError("transposed_conv2d: input has " + std::to_string(c_in) +
                     " channels, spec expects " + std::to_string(spec.channels_in));
  const Shape wshape{spec.channels_in, spec.channels_out, spec.kernel, spec.kernel};
  if (weights.shape() != wshape)
    throw ShapeError("transposed_conv2d: weights must be " + shape_str(wshape) + ", got " +
                     shape_str(weights.shape()));
  check_bias(bias, spec.channels_out, "transposed_conv2d");

  const std::size_t oh = spec.out_extent(h), ow = spec.out_extent(w);
  // Window over the (larger) output grid whose sliding positions are the input pixels.
  const Window g{spec.channels_out, oh, ow, spec.kernel, spec.kernel, spec.stride, 1, spec.padding, h, w};
  Tensor out = result(tape, {spec.channels_out, oh, ow}, {&input, &weights, &bias});
  {
    RowMat cols = as_mat(weights.data(), c_in, g.rows()).transpose() * as_mat(input.data(), c_in, g.cols());
    col2im_add(std::span<const double>(cols.data(), static_cast<std::size_t>(cols.size())), g,
               out.mutable_data());
    if (bias.defined()) {
      auto o = out.mutable_data();
      const auto b = bias.data();
      for (std::size_t c = 0; c < spec.channels_out; ++c)
        for (std::size_t p = 0; p < oh * ow; ++p) o[c * oh * ow + p] += b[c];
    }
  }

  if (out.requires_grad()) {
    tape.record([input, weights, bias, out, g, c_in]() mutable {
      if (!out.has_grad()) return;
      const auto go = out.grad();
      if (bias.requires_grad()) {
        auto gb = bias.mutable_grad();
        const std::size_t plane = g.in_h * g.in_w;
        for (std::size_t c = 0; c < g.channels; ++c)
          for (std::size_t p = 0; p < plane; ++p) gb[c] += go[c * plane + p];
      }
      if (!weights.requires_grad() && !input.requires_grad()) return;
      const auto gcols_buf = im2col(go, g);
      const auto gcols = as_mat(std::span<const double>(gcols_buf), g.rows(), g.cols());
      if (weights.requires_grad())
        as_mat(weights.mutable_grad(), c_in, g.rows()).noalias() +=
            as_mat(input.data(), c_in, g.cols()) * gcols.transpose();
      if (input.requires_grad())
        as_mat(input.mutable_grad(), c_in, g.cols()).noalias() +=
            as_mat(weights.data(), c_in, g.rows()) * gcols;
    });
  }
  return out;
}

Tensor relu(Tape& tape, const Tensor& input) {
  Tensor out = result(tape, input.shape(), {&input});
  const auto x = input.data();
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < x.size(); ++i) o[i] = x[i] > 0.0 ? x[i] : 0.0;
  if (out.requires_grad()) {
    tape.record([input, out]() mutable {
      if (!out.has_grad() || !input.requires_grad()) return;
      const auto x = input.data();
      const auto go = out.grad();
      auto gi = input.mutable_grad();
      for (std::size_t i = 0; i < x.size(); ++i)
        if (x[i] > 0.0) gi[i] += go[i];
    });
  }
  return out;
}

Tensor max_pool2d(Tape& tape, const Tensor& input, std::size_t kernel, std::size_t stride) {
  require_rank3(input, "max_pool2d");
  if (kernel == 0 || stride == 0) throw InvalidSpecError("max_pool2d: kernel and stride must be positive");
  const std::size_t c_n = input.dim(0), h = input.dim(1), w = input.dim(2);
  if (h < kernel || w < kernel)
    throw InvalidSpecError("max_pool2d: kernel " + std::to_string(kernel) + " larger than input " +
                           std::to_string(h) + "x" + std::to_string(w));
  const std::size_t oh = (h - kernel) / stride + 1, ow = (w - kernel) / stride + 1;
  Tensor out = result(tape, {c_n, oh, ow}, {&input});
  std::vector<std::size_t> argmax(c_n * oh * ow);
  const auto x = input.data();
  auto o = out.mutable_data();
  for (std::size_t c = 0; c < c_n; ++c)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = (c * h + oy * stride) * w + ox * stride;
        for (std::size_t i = 0; i < kernel; ++i)
          for (std::size_t j = 0; j < kernel; ++j) {
            const std::size_t idx = (c * h + oy * stride + i) * w + ox * stride + j;
            if (x[idx] > x[best]) best = idx;
          }
        const std::size_t oi = (c * oh + oy) * ow + ox;
        argmax[oi] = best;
        o[oi] = x[best];
      }
  if (out.requires_grad()) {
    tape.record([input, out, argmax = std::move(argmax)]() mutable {
      if (!out.has_grad() || !input.requires_grad()) return;
      const auto go = out.grad();
      auto gi = input.mutable_grad();
      for (std::size_t i = 0; i < argmax.size(); ++i) gi[argmax[i]] += go[i];
    });
  }
  return out;
}

namespace {

template <typename Fwd, typename Bwd>
Tensor binary_op(Tape& tape, const Tensor& a, const Tensor& b, const char* what, Fwd fwd, Bwd bwd) {
  require_same_shape(a, b, what);
  Tensor out = result(tape, a.shape(), {&a, &b});
  const auto x = a.data(), y = b.data();
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < x.size(); ++i) o[i] = fwd(x[i], y[i]);
  if (out.requires_grad()) {
    tape.record([a, b, out, bwd]() mutable {
      if (!out.has_grad()) return;
      const auto go = out.grad();
      const auto x = a.data(), y = b.data();
      const bool ga = a.requires_grad(), gb = b.requires_grad();
      std::span<double> da, db;
      if (ga) da = a.mutable_grad();
      if (gb) db = b.mutable_grad();
      for (std::size_t i = 0; i < go.size(); ++i) {
        const auto [dx, dy] = bwd(x[i], y[i]);
        if (ga) da[i] += go[i] * dx;
        if (gb) db[i] += go[i] * dy;
      }
    });
  }
  return out;
}

template <typename Fwd, typename Deriv>
Tensor unary_op(Tape& tape, const Tensor& a, Fwd fwd, Deriv deriv) {
  Tensor out = result(tape, a.shape(), {&a});
  const auto x = a.data();
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < x.size(); ++i) o[i] = fwd(x[i]);
  if (out.requires_grad()) {
    tape.record([a, out, deriv]() mutable {
      if (!out.has_grad() || !a.requires_grad()) return;
      const auto go = out.grad();
      const auto x = a.data();
      auto da = a.mutable_grad();
      for (std::size_t i = 0; i < go.size(); ++i) da[i] += go[i] * deriv(x[i]);
    });
  }
  return out;
}

}  // namespace

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary_op(
      tape, a, b, "add", [](double x, double y) { return x + y; },
      [](double, double) { return std::pair{1.0, 1.0}; });
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary_op(
      tape, a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double) { return std::pair{1.0, -1.0}; });
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary_op(
      tape, a, b, "mul", [](double x, double y) { return x * y; },
      [](double x, double y) { return std::pair{y, x}; });
}

Tensor affine(Tape& tape, const Tensor& a, double scale, double shift) {
  return unary_op(
      tape, a, [scale, shift](double x) { return scale * x + shift; },
      [scale](double) { return scale; });
}

Tensor square(Tape& tape, const Tensor& a) {
  return unary_op(
      tape, a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Tensor sum_all(Tape& tape, const Tensor& input) {
  Tensor out = result(tape, {1}, {&input});
  double acc = 0.0;
  for (double v : input.data()) acc += v;
  out.mutable_data()[0] = acc;
  if (out.requires_grad()) {
    tape.record([input, out]() mutable {
      if (!out.has_grad() || !input.requires_grad()) return;
      const double g = out.grad()[0];
      for (auto& v : input.mutable_grad()) v += g;
    });
  }
  return out;
}

Tensor mean_all(Tape& tape, const Tensor& input) {
  return affine(tape, sum_all(tape, input), 1.0 / static_cast<double>(input.numel()));
}

}  // namespace denet

namespace denet {

Tensor crop2d(Tape& tape, const Tensor& input, std::size_t top, std::size_t left, std::size_t h,
              std::size_t w) {
  require_rank3(input, "crop2d");
  const std::size_t c_n = input.dim(0), ih = input.dim(1), iw = input.dim(2);
  if (h == 0 || w == 0 || top + h > ih || left + w > iw)
    throw ShapeError("crop2d: window " + std::to_string(h) + "x" + std::to_string(w) + " at (" +
                     std::to_string(top) + "," + std::to_string(left) + ") exceeds input " +
                     shape_str(input.shape()));
  Tensor out = result(tape, {c_n, h, w}, {&input});
  const auto x = input.data();
  auto o = out.mutable_data();
  for (std::size_t c = 0; c < c_n; ++c)
    for (std::size_t y = 0; y < h; ++y)
      std::copy_n(x.data() + (c * ih + top + y) * iw + left, w, o.data() + (c * h + y) * w);
  if (out.requires_grad()) {
    tape.record([input, out, top, left]() mutable {
      if (!out.has_grad() || !input.requires_grad()) return;
      const auto go = out.grad();
      auto gi = input.mutable_grad();
      const std::size_t c_n = out.dim(0), h = out.dim(1), w = out.dim(2);
      const std::size_t ih = input.dim(1), iw = input.dim(2);
      for (std::size_t c = 0; c < c_n; ++c)
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x)
            gi[(c * ih + top + y) * iw + left + x] += go[(c * h + y) * w + x];
    });
  }
  return out;
}

}  // namespace denet
