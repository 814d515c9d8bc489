#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "denet/rng.hpp"
#include "denet/tensor.hpp"

namespace denet::testing {

inline Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.mutable_data()) v = rng.uniform(lo, hi);
  return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

inline double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a.data()[i] * b.data()[i];
  return s;
}

/// Direct sliding-window convolution, written independently of the library.
inline std::vector<double> conv_oracle(const std::vector<double>& x, std::size_t cin, std::size_t h,
                                       std::size_t w, const std::vector<double>& wt, std::size_t cout,
                                       std::size_t kh, std::size_t kw, const std::vector<double>& bias,
                                       std::size_t stride, std::size_t dil, std::size_t pad,
                                       std::size_t& oh, std::size_t& ow) {
  const long span_h = static_cast<long>(dil * (kh - 1) + 1), span_w = static_cast<long>(dil * (kw - 1) + 1);
  oh = static_cast<std::size_t>((static_cast<long>(h + 2 * pad) - span_h) / static_cast<long>(stride) + 1);
  ow = static_cast<std::size_t>((static_cast<long>(w + 2 * pad) - span_w) / static_cast<long>(stride) + 1);
  std::vector<double> out(cout * oh * ow, 0.0);
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) {
        double acc = bias.empty() ? 0.0 : bias[o];
        for (std::size_t c = 0; c < cin; ++c)
          for (std::size_t i = 0; i < kh; ++i)
            for (std::size_t j = 0; j < kw; ++j) {
              const long iy = static_cast<long>(y * stride + i * dil) - static_cast<long>(pad);
              const long ix = static_cast<long>(xx * stride + j * dil) - static_cast<long>(pad);
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
              acc += wt[((o * cin + c) * kh + i) * kw + j] * x[(c * h + iy) * w + ix];
            }
        out[(o * oh + y) * ow + xx] = acc;
      }
  return out;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("denet_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace denet::testing
