#include "denet/enet.hpp"

#include <cmath>

#include "denet/errors.hpp"
#include "denet/rng.hpp"

namespace denet {

void EnetConfig::validate() const {
  if (middle_blocks < 1) throw ValidationError("model.middle_blocks must be >= 1");
  if (base_channels < 1) throw ValidationError("model.base_channels must be >= 1");
  if (decoder_channels.size() != kDecoderStages)
    throw ValidationError("model.decoder_channels must have exactly 3 stages, got " +
                          std::to_string(decoder_channels.size()));
  for (auto c : decoder_channels)
    if (c < 1) throw ValidationError("model.decoder_channels entries must be positive");
  for (const auto& layer : dilated_stack) {
    if (layer.channels < 1) throw ValidationError("model.dilated_stack channels must be positive");
    if (layer.dilation < 1) throw ValidationError("model.dilated_stack dilation must be >= 1");
  }
}

namespace {

std::size_t fan_in(const std::string& name, const Shape& shape) {
  if (shape.size() == 1) return 0;  // bias: handled by the caller
  const std::size_t taps = shape[2] * shape[3];
  if (name.ends_with(".up.weight")) return shape[0] * taps / 4;  // stride-2 transposed conv
  if (name.ends_with(".dw")) return taps;
  return shape[1] * taps;
}

}  // namespace

Tensor EnetModel::add_param(const std::string& name, Shape shape) {
  index_.emplace(name, params_.size());
  params_.emplace_back(name, Tensor(std::move(shape), true));
  return params_.back().second;
}

EnetModel EnetModel::build(const EnetConfig& config, std::uint64_t seed) {
  config.validate();
  EnetModel m;
  m.config_ = config;
  const std::size_t b = config.base_channels;
  const std::size_t enc = 4 * b;

  auto conv_params = [&](const std::string& p, std::size_t cout, std::size_t cin, std::size_t k,
                         bool bias = true) {
    m.add_param(p + ".weight", {cout, cin, k, k});
    if (bias) m.add_param(p + ".bias", {cout});
  };
  auto sep_params = [&](const std::string& p, std::size_t cin, std::size_t cout) {
    m.add_param(p + ".dw", {cin, 1, 3, 3});
    m.add_param(p + ".pw", {cout, cin, 1, 1});
    m.add_param(p + ".bias", {cout});
  };

  conv_params("stem", b, 3, 3);
  std::size_t c = b;
  for (int i = 1; i <= 2; ++i) {
    const std::string p = "entry" + std::to_string(i);
    const std::size_t out = c * 2;
    sep_params(p + ".sep1", c, out);
    sep_params(p + ".sep2", out, out);
    conv_params(p + ".skip", out, c, 1, false);
    c = out;
  }
  for (std::size_t i = 0; i < config.middle_blocks; ++i)
    for (int j = 1; j <= 3; ++j) sep_params("middle" + std::to_string(i) + ".sep" + std::to_string(j), enc, enc);

  c = enc;
  for (std::size_t s = 0; s < EnetConfig::kDecoderStages; ++s) {
    const std::string p = "decoder" + std::to_string(s);
    const std::size_t out = config.decoder_channels[s];
    conv_params(p + ".conv", out, c, EnetConfig::kDecoderKernels[s]);
    m.add_param(p + ".up.weight", {out, out, 4, 4});
    m.add_param(p + ".up.bias", {out});
    c = out;
  }
  for (std::size_t i = 0; i < config.dilated_stack.size(); ++i) {
    conv_params("dilated" + std::to_string(i), config.dilated_stack[i].channels, c, 3);
    c = config.dilated_stack[i].channels;
  }
  conv_params("head", 1, c, 1);

  // Weights: U(+-sqrt(6/fan_in)), except the pointwise half of a separable
  // conv, which follows the depthwise half with no ReLU between them and so
  // gets U(+-sqrt(3/fan_in)). Biases: U(+-1/sqrt(fan_in)) of their layer.
  // The density head starts near zero: targets are ~1e-2 per pixel, and an
  // O(1) initial output makes the counting loss ~1e4 on the first step.
  constexpr double kHeadGain = 0.01;
  Rng rng(seed);
  std::size_t last_fan = 1;
  for (auto& [name, t] : m.params_) {
    double bound;
    if (t.rank() == 1) {
      bound = 1.0 / std::sqrt(static_cast<double>(last_fan));
    } else {
      last_fan = fan_in(name, t.shape());
      const double gain = name.ends_with(".pw") ? 3.0 : 6.0;
      bound = std::sqrt(gain / static_cast<double>(last_fan));
    }
    if (name.starts_with("head.")) bound = name == "head.bias" ? 0.0 : bound * kHeadGain;
    for (auto& v : t.mutable_data()) v = rng.uniform(-bound, bound);
  }
  return m;
}

const Tensor& EnetModel::param(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
  return params_[it->second].second;
}

std::size_t EnetModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

void EnetModel::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

void EnetModel::load(const NamedTensors& tensors) {
  if (tensors.size() != params_.size())
    throw ValidationError("checkpoint has " + std::to_string(tensors.size()) + " tensors, model expects " +
                          std::to_string(params_.size()));
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& [name, src] = tensors[i];
    auto& [own_name, dst] = params_[i];
    if (name != own_name)
      throw ValidationError("checkpoint tensor " + std::to_string(i) + " is '" + name + "', expected '" +
                            own_name + "'");
    if (src.shape() != dst.shape())
      throw ValidationError("checkpoint tensor '" + name + "' has shape " + shape_str(src.shape()) +
                            ", expected " + shape_str(dst.shape()));
    auto d = dst.mutable_data();
    std::copy(src.data().begin(), src.data().end(), d.begin());
  }
}

Tensor EnetModel::conv(Tape& tape, const Tensor& x, const std::string& prefix, const ConvSpec& spec) const {
  const auto bias_it = index_.find(prefix + ".bias");
  const Tensor bias = bias_it == index_.end() ? Tensor() : params_[bias_it->second].second;
  return conv2d(tape, x, param(prefix + ".weight"), bias, spec);
}

Tensor EnetModel::separable(Tape& tape, const Tensor& x, const std::string& prefix, std::size_t c_in,
                            std::size_t c_out) const {
  const ConvSpec spec{3, 3, 1, 1, 1, c_in, c_out, true};
  return separable_conv2d(tape, x, param(prefix + ".dw"), param(prefix + ".pw"), param(prefix + ".bias"),
                          spec);
}

Tensor EnetModel::encode(Tape& tape, const Tensor& image) const {
  if (image.rank() != 3 || image.dim(0) != 3)
    throw ShapeError("forward: expected a [3,H,W] image, got " + shape_str(image.shape()));
  const std::size_t h = image.dim(1), w = image.dim(2);
  if (h % EnetConfig::kEncoderStride != 0 || w % EnetConfig::kEncoderStride != 0)
    throw ShapeError("forward: image extents " + std::to_string(h) + "x" + std::to_string(w) +
                     " must be divisible by 8; pad with pad_to_multiple() first");

  const std::size_t b = config_.base_channels;
  Tensor x = relu(tape, conv(tape, image, "stem", {3, 3, 2, 1, 1, 3, b, false}));

  std::size_t c = b;
  for (int i = 1; i <= 2; ++i) {
    const std::string p = "entry" + std::to_string(i);
    const std::size_t out = 2 * c;
    Tensor y = separable(tape, i == 1 ? x : relu(tape, x), p + ".sep1", c, out);
    y = separable(tape, relu(tape, y), p + ".sep2", out, out);
    y = max_pool2d(tape, y, 2, 2);
    Tensor skip = conv(tape, x, p + ".skip", {1, 1, 2, 1, 0, c, out, false});
    x = add(tape, y, skip);
    c = out;
  }
  for (std::size_t i = 0; i < config_.middle_blocks; ++i) {
    const std::string p = "middle" + std::to_string(i);
    Tensor y = x;
    for (int j = 1; j <= 3; ++j) y = separable(tape, relu(tape, y), p + ".sep" + std::to_string(j), c, c);
    x = add(tape, x, y);
  }
  return x;
}

Tensor EnetModel::forward(Tape& tape, const Tensor& image) const {
  Tensor x = relu(tape, encode(tape, image));
  std::size_t c = 4 * config_.base_channels;
  for (std::size_t s = 0; s < EnetConfig::kDecoderStages; ++s) {
    const std::string p = "decoder" + std::to_string(s);
    const std::size_t k = EnetConfig::kDecoderKernels[s];
    const std::size_t out = config_.decoder_channels[s];
    x = relu(tape, conv(tape, x, p + ".conv", {k, k, 1, 1, k / 2, c, out, false}));
    x = relu(tape, transposed_conv2d(tape, x, param(p + ".up.weight"), param(p + ".up.bias"),
                                     {4, 2, 1, out, out}));
    c = out;
  }
  for (std::size_t i = 0; i < config_.dilated_stack.size(); ++i) {
    const auto& layer = config_.dilated_stack[i];
    x = relu(tape, conv(tape, x, "dilated" + std::to_string(i),
                        {3, 3, 1, layer.dilation, layer.dilation, c, layer.channels, false}));
    c = layer.channels;
  }
  return relu(tape, conv(tape, x, "head", {1, 1, 1, 1, 0, c, 1, false}));
}

namespace {

std::size_t mirror(std::ptrdiff_t i, std::size_t n) {
  if (n == 1) return 0;
  const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
  i %= period;
  if (i < 0) i += period;
  return static_cast<std::size_t>(i < static_cast<std::ptrdiff_t>(n) ? i : period - i);
}

}  // namespace

PaddedImage pad_to_multiple(const Tensor& image, std::size_t multiple) {
  if (multiple < 1) throw ContractError("pad_to_multiple: multiple must be >= 1");
  if (image.rank() != 3) throw ShapeError("pad_to_multiple: expected [C,H,W], got " + shape_str(image.shape()));
  const std::size_t c_n = image.dim(0), h = image.dim(1), w = image.dim(2);
  const std::size_t ph = (h + multiple - 1) / multiple * multiple;
  const std::size_t pw = (w + multiple - 1) / multiple * multiple;
  CropRecord rec{h, w, ph - h, pw - w};
  if (rec.empty()) return {image, rec};
  Tensor out({c_n, ph, pw});
  const auto x = image.data();
  auto o = out.mutable_data();
  for (std::size_t c = 0; c < c_n; ++c)
    for (std::size_t y = 0; y < ph; ++y)
      for (std::size_t xx = 0; xx < pw; ++xx)
        o[(c * ph + y) * pw + xx] =
            x[(c * h + mirror(static_cast<std::ptrdiff_t>(y), h)) * w + mirror(static_cast<std::ptrdiff_t>(xx), w)];
  return {out, rec};
}

Tensor crop_output(Tape& tape, const Tensor& output, const CropRecord& record) {
  if (record.empty()) return output;
  return crop2d(tape, output, 0, 0, record.height, record.width);
}

}  // namespace denet
