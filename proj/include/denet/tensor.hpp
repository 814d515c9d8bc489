#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "denet/aligned.hpp"

namespace denet {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct TensorImpl {
  Shape shape;
  AlignedVector data;
  AlignedVector grad;  // empty until first accumulation
  bool requires_grad = false;
};
}  // namespace detail

/// Dense row-major tensor of doubles with shared storage.
///
/// Copies of a Tensor alias the same storage (handle semantics), which is how
/// the gradient tape refers back to operands. Use clone() for a deep copy.
/// Activations are laid out [channels, height, width]; convolution kernels are
/// [out, in, kh, kw]. Batches are handled by callers as an outer loop.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value) { return full({1}, value); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t i) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Direct write access. Only parameters should be mutated, and only outside
  /// a recorded forward pass.
  std::span<double> mutable_data();

  double item() const;
  double at(std::size_t c, std::size_t y, std::size_t x) const;

  bool requires_grad() const;
  void set_requires_grad(bool value);

  bool has_grad() const;
  std::span<const double> grad() const;
  /// Grad population is the one mutation allowed through a const handle.
  std::span<double> mutable_grad() const;  // allocates zeros if absent
  void zero_grad();

  Tensor clone(bool requires_grad = false) const;
  Tensor reshaped(Shape shape) const;  // deep copy with new extents

  /// Identity of the underlying storage.
  const void* id() const { return impl_.get(); }
  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Gradient tape for one forward pass.
///
/// Operations append their backward closures here; backward() replays them in
/// reverse. A tape may be replayed once, after which it must be reset().
class Tape {
 public:
  explicit Tape(bool enabled = true) : enabled_(enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool enabled() const { return enabled_; }

  /// True when an op over these operands must be recorded.
  bool should_record(std::initializer_list<const Tensor*> inputs) const;

  void record(std::function<void()> backward_fn);

  /// Seeds d(loss)/d(loss) = 1 and accumulates grads into every
  /// requires_grad tensor reachable through the tape.
  void backward(const Tensor& loss);

  void reset();
  std::size_t size() const { return entries_.size(); }
  bool consumed() const { return consumed_; }

 private:
  bool enabled_;
  bool consumed_ = false;
  std::vector<std::function<void()>> entries_;
};

}  // namespace denet
