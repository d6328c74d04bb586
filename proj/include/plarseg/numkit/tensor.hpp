#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace plarseg::numkit {

using Shape = std::vector<int>;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl;

// Backward rule of a recorded op. Receives the gradient of the op's output and
// accumulates into the gradient buffers of its inputs.
using BackwardFn = std::function<void(std::span<const float> out_grad)>;

struct Node {
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  BackwardFn backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::shared_ptr<Node> node;  // null for leaves
  // 64-bit value of a scalar reduction before rounding to float; NaN otherwise.
  double wide_value = std::numeric_limits<double>::quiet_NaN();
};

// Dense row-major float32 tensor with shared ownership. Copies alias the same
// storage; use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f, bool requires_grad = false);
  Tensor(Shape shape, std::vector<float> data, bool requires_grad = false);

  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  int dim(int i) const;
  std::size_t numel() const;

  std::span<float> data();
  std::span<const float> data() const;
  float item() const;
  // Scalar value in double precision: the unrounded accumulator for reductions,
  // item() otherwise.
  double item_wide() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  // Gradient buffer, allocated (zero-filled) on first access.
  std::span<float> grad();
  std::span<const float> grad() const;
  void zero_grad();

  // Index helper for rank-3 (C, H, W) tensors.
  float& at(int c, int h, int w);
  float at(int c, int h, int w) const;

  Tensor clone() const;   // deep copy of data, not part of any graph
  Tensor detach() const;  // shares nothing with the graph; data is copied

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  TensorImpl& checked() const;
  std::shared_ptr<TensorImpl> impl_;
};

// Graph recording is disabled while a guard is alive (per thread).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

// Builds an op result. When any input requires grad and grad mode is on, a node
// with `backward` is attached. Values must be finite.
Tensor make_result(Shape shape, std::vector<float> data,
                   const std::vector<Tensor>& inputs, BackwardFn backward);

// Scalar variant that also records the 64-bit accumulator.
Tensor make_scalar_result(double value, const std::vector<Tensor>& inputs, BackwardFn backward);

// Gradient buffer of an input impl, allocated on demand. Only for use inside
// backward rules.
std::span<float> grad_buffer(TensorImpl& impl);

// Reverse-mode sweep from a scalar root. Every node is visited exactly once.
void backward(const Tensor& loss);

// Throws NonFiniteError if any value is NaN or Inf.
void check_finite(std::span<const float> values, const char* what);

}  // namespace plarseg::numkit
