#include "denet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "denet/errors.hpp"
#include "denet/losses.hpp"
#include "denet/ops.hpp"
#include "denet/rng.hpp"

namespace denet {

double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max(std::abs(numeric), floor);
}

namespace {

struct EntryCheck {
  double analytic;
  double numeric;
  bool kinked;
};

}  // namespace

GradCheckResult check_gradients(const std::string& name, const LossBuilder& loss,
                                const std::vector<std::pair<std::string, Tensor>>& inputs,
                                const GradCheckOptions& opts,
                                const std::vector<std::pair<std::size_t, std::size_t>>& entries) {
  for (const auto& [n, t] : inputs) {
    Tensor h = t;
    h.set_requires_grad(true);
    h.zero_grad();
  }
  double base = 0.0;
  {
    Tape tape;
    const Tensor l = loss(tape);
    base = l.item();
    tape.backward(l);
  }
  const auto eval = [&]() {
    Tape off(false);
    return loss(off).item();
  };
  const auto probe = [&](std::size_t which, std::size_t idx) {
    Tensor t = inputs[which].second;
    auto d = t.mutable_data();
    const double orig = d[idx];
    d[idx] = orig + opts.step;
    const double up = eval();
    d[idx] = orig - opts.step;
    const double down = eval();
    d[idx] = orig;
    const double numeric = (up - down) / (2.0 * opts.step);
    const double right = (up - base) / opts.step, left = (base - down) / opts.step;
    const bool kinked = std::abs(right - left) >
                        opts.kink_tolerance * std::max({std::abs(right), std::abs(left), opts.denom_floor});
    return EntryCheck{t.has_grad() ? t.grad()[idx] : 0.0, numeric, kinked};
  };

  GradCheckResult res{name, 0, 0, 0, 0.0, {}};
  const auto check = [&](std::size_t which, std::size_t idx) {
    const EntryCheck e = probe(which, idx);
    if (opts.skip_kinks && e.kinked) {
      ++res.skipped;
      return false;
    }
    const double err = relative_error(e.analytic, e.numeric, opts.denom_floor);
    ++res.checked;
    if (e.numeric != 0.0) ++res.nonzero;
    if (res.worst.empty() || err >= res.max_rel_error) {
      res.max_rel_error = err;
      std::ostringstream os;
      os.precision(10);
      os << inputs[which].first << '[' << idx << "]: analytic " << e.analytic << " vs numeric " << e.numeric;
      res.worst = os.str();
    }
    return true;
  };
  if (!entries.empty()) {
    for (const auto& [which, idx] : entries) check(which, idx);
  } else {
    for (std::size_t w = 0; w < inputs.size(); ++w) {
      const std::size_t n = inputs[w].second.numel();
      const std::size_t limit = opts.max_entries ? std::min(n, opts.max_entries) : n;
      for (std::size_t i = 0; i < limit; ++i) check(w, i);
    }
  }
  return res;
}

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape), true);
  for (auto& v : t.mutable_data()) v = rng.uniform(lo, hi);
  return t;
}

// Values bounded away from zero so +-h never crosses the ReLU kink.
Tensor away_from_zero(Rng& rng, Shape shape) {
  Tensor t(std::move(shape), true);
  for (auto& v : t.mutable_data()) {
    const double mag = rng.uniform(0.05, 1.0);
    v = rng.uniform() < 0.5 ? -mag : mag;
  }
  return t;
}

// sum(r * f(...)) with a fixed random r, so every output element matters.
LossBuilder weighted(Rng& rng, const Shape& out_shape, std::function<Tensor(Tape&)> f) {
  Tensor r(out_shape);
  for (auto& v : r.mutable_data()) v = rng.uniform(-1.0, 1.0);
  return [r, f](Tape& tape) { return sum_all(tape, mul(tape, f(tape), r)); };
}

}  // namespace

std::vector<GradCheckResult> gradcheck_ops(std::uint64_t seed, const GradCheckOptions& opts) {
  Rng rng(seed);
  std::vector<GradCheckResult> out;

  struct ConvCase {
    const char* name;
    ConvSpec spec;
    std::size_t h, w;
  };
  const ConvCase conv_cases[] = {
      {"conv2d", {3, 3, 1, 1, 1, 2, 3, false}, 6, 5},
      {"conv2d_stride2", {3, 3, 2, 1, 1, 2, 3, false}, 7, 6},
      {"conv2d_dilated", {3, 3, 1, 2, 2, 2, 2, false}, 6, 6},
      {"conv2d_7x7", {7, 7, 1, 1, 3, 2, 2, false}, 5, 5},
      {"conv2d_1x1", {1, 1, 1, 1, 0, 3, 2, false}, 4, 4},
  };
  for (const auto& cc : conv_cases) {
    Tensor x = random_tensor(rng, {cc.spec.channels_in, cc.h, cc.w});
    Tensor w = random_tensor(rng, {cc.spec.channels_out, cc.spec.channels_in, cc.spec.kernel_h, cc.spec.kernel_w});
    Tensor b = random_tensor(rng, {cc.spec.channels_out});
    const Shape os{cc.spec.channels_out, cc.spec.out_height(cc.h), cc.spec.out_width(cc.w)};
    const ConvSpec spec = cc.spec;
    out.push_back(check_gradients(cc.name, weighted(rng, os, [=](Tape& t) { return conv2d(t, x, w, b, spec); }),
                                  {{"input", x}, {"weights", w}, {"bias", b}}, opts));
  }
  {
    const ConvSpec spec{3, 3, 1, 1, 1, 3, 4, true};
    Tensor x = random_tensor(rng, {3, 5, 5});
    Tensor dw = random_tensor(rng, {3, 1, 3, 3});
    Tensor pw = random_tensor(rng, {4, 3, 1, 1});
    Tensor b = random_tensor(rng, {4});
    out.push_back(check_gradients(
        "separable_conv2d",
        weighted(rng, {4, 5, 5}, [=](Tape& t) { return separable_conv2d(t, x, dw, pw, b, spec); }),
        {{"input", x}, {"depthwise", dw}, {"pointwise", pw}, {"bias", b}}, opts));
  }
  {
    const ConvSpec spec{3, 3, 2, 2, 2, 2, 2, true};
    Tensor x = random_tensor(rng, {2, 7, 6});
    Tensor dw = random_tensor(rng, {2, 1, 3, 3});
    const Shape os{2, spec.out_height(7), spec.out_width(6)};
    out.push_back(check_gradients("depthwise_conv2d_strided_dilated",
                                  weighted(rng, os, [=](Tape& t) { return depthwise_conv2d(t, x, dw, spec); }),
                                  {{"input", x}, {"depthwise", dw}}, opts));
  }
  {
    const TransposedConvSpec spec{4, 2, 1, 3, 2};
    Tensor x = random_tensor(rng, {3, 3, 4});
    Tensor w = random_tensor(rng, {3, 2, 4, 4});
    Tensor b = random_tensor(rng, {2});
    out.push_back(check_gradients(
        "transposed_conv2d", weighted(rng, {2, 6, 8}, [=](Tape& t) { return transposed_conv2d(t, x, w, b, spec); }),
        {{"input", x}, {"weights", w}, {"bias", b}}, opts));
  }
  {
    Tensor x = away_from_zero(rng, {2, 4, 5});
    out.push_back(check_gradients("relu", weighted(rng, {2, 4, 5}, [=](Tape& t) { return relu(t, x); }),
                                  {{"input", x}}, opts));
  }
  {
    Tensor x = random_tensor(rng, {2, 6, 6});
    out.push_back(check_gradients("max_pool2d", weighted(rng, {2, 3, 3}, [=](Tape& t) { return max_pool2d(t, x, 2, 2); }),
                                  {{"input", x}}, opts));
  }
  {
    Tensor a = random_tensor(rng, {2, 3, 3}), b = random_tensor(rng, {2, 3, 3});
    out.push_back(check_gradients("add", weighted(rng, {2, 3, 3}, [=](Tape& t) { return add(t, a, b); }),
                                  {{"a", a}, {"b", b}}, opts));
    out.push_back(check_gradients("sub", weighted(rng, {2, 3, 3}, [=](Tape& t) { return sub(t, a, b); }),
                                  {{"a", a}, {"b", b}}, opts));
    out.push_back(check_gradients("mul", weighted(rng, {2, 3, 3}, [=](Tape& t) { return mul(t, a, b); }),
                                  {{"a", a}, {"b", b}}, opts));
    out.push_back(check_gradients("affine", weighted(rng, {2, 3, 3}, [=](Tape& t) { return affine(t, a, -1.7, 0.3); }),
                                  {{"a", a}}, opts));
    out.push_back(check_gradients("square", weighted(rng, {2, 3, 3}, [=](Tape& t) { return square(t, a); }),
                                  {{"a", a}}, opts));
    out.push_back(check_gradients("sum_all", weighted(rng, {1}, [=](Tape& t) { return sum_all(t, a); }),
                                  {{"a", a}}, opts));
    out.push_back(check_gradients("mean_all", weighted(rng, {1}, [=](Tape& t) { return mean_all(t, a); }),
                                  {{"a", a}}, opts));
  }
  {
    Tensor x = random_tensor(rng, {2, 5, 6});
    out.push_back(check_gradients("crop2d", weighted(rng, {2, 3, 4}, [=](Tape& t) { return crop2d(t, x, 1, 2, 3, 4); }),
                                  {{"input", x}}, opts));
  }
  {
    Tensor pred = random_tensor(rng, {1, 4, 4}, 0.0, 1.0);
    DensityGrid gt(4, 4);
    for (auto& v : gt.values) v = rng.uniform(0.0, 1.0);
    const CountContext ctx{static_cast<std::size_t>(10 + rng.below(20)), static_cast<std::size_t>(rng.below(10))};
    const LossConfig cfg{0.1, 1.0};
    out.push_back(check_gradients("euclidean_loss", [=](Tape& t) { return euclidean_loss(t, pred, gt); },
                                  {{"pred", pred}}, opts));
    out.push_back(check_gradients("counting_loss", [=](Tape& t) { return counting_loss(t, pred, ctx, cfg); },
                                  {{"pred", pred}}, opts));
    out.push_back(check_gradients("combined_loss", [=](Tape& t) { return combined_loss(t, pred, gt, ctx, cfg); },
                                  {{"pred", pred}}, opts));
  }
  return out;
}

GradCheckResult gradcheck_enet(std::uint64_t seed, const EnetConfig& config, std::size_t n_params,
                               const GradCheckOptions& opts) {
  Rng rng(seed);
  EnetModel model = EnetModel::build(config, seed);
  {
    // Undo the small head gain so upstream gradients are not ~1e-7, where
    // central-difference round-off (eps * L / h) starts to dominate.
    Tensor head_w = model.param("head.weight");
    const double bound = std::sqrt(6.0 / static_cast<double>(head_w.shape()[1]));
    for (auto& v : head_w.mutable_data()) v = rng.uniform(-bound, bound);
    Tensor head_bias = model.param("head.bias");
    head_bias.mutable_data()[0] = 0.5;
  }
  Tensor image({3, 8, 8});
  for (auto& v : image.mutable_data()) v = rng.uniform();
  DensityGrid gt(8, 8);
  for (auto& v : gt.values) v = rng.uniform(0.0, 0.05);
  // Count target near the initial estimate keeps the loss O(1).
  double n_e = 0.0;
  {
    Tape off(false);
    for (double v : model.forward(off, image).data()) n_e += v;
  }
  const CountContext ctx{2 + static_cast<std::size_t>(std::llround(n_e)) + 1, 2};
  const LossConfig cfg{0.1, 1.0};

  const std::vector<std::pair<std::string, Tensor>> inputs(model.parameters().begin(), model.parameters().end());
  const EnetModel* m = &model;
  const LossBuilder loss = [=](Tape& t) { return combined_loss(t, m->forward(t, image), gt, ctx, cfg); };

  GradCheckOptions o = opts;
  o.skip_kinks = true;
  GradCheckResult total{"enet_combined_loss", 0, 0, 0, 0.0, {}};
  // Draw entries in rounds until enough kink-free ones have been checked.
  for (int round = 0; total.checked < n_params && round < 20; ++round) {
    std::vector<std::pair<std::size_t, std::size_t>> entries;
    for (std::size_t k = total.checked; k < n_params; ++k) {
      const auto which = static_cast<std::size_t>(rng.below(inputs.size()));
      entries.emplace_back(which, static_cast<std::size_t>(rng.below(inputs[which].second.numel())));
    }
    model.zero_grad();
    const auto r = check_gradients(total.name, loss, inputs, o, entries);
    total.checked += r.checked;
    total.skipped += r.skipped;
    total.nonzero += r.nonzero;
    if (r.checked && (total.worst.empty() || r.max_rel_error >= total.max_rel_error)) {
      total.max_rel_error = r.max_rel_error;
      total.worst = r.worst;
    }
  }
  return total;
}

}  // namespace denet
