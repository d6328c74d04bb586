#include "plarseg/numkit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace plarseg::numkit {

namespace {
thread_local bool g_grad_mode = true;
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw DimensionError("non-positive dimension in shape " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape shape, float fill, bool requires_grad) : impl_(std::make_shared<TensorImpl>()) {
  const std::size_t n = shape_numel(shape);
  impl_->shape = std::move(shape);
  impl_->data.assign(n, fill);
  impl_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<float> data, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("data length " + std::to_string(data.size()) + " does not match shape " +
                         shape_str(shape));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(float value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

TensorImpl& Tensor::checked() const {
  if (!impl_) throw ContractError("use of undefined tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return checked().shape; }

int Tensor::dim(int i) const {
  const auto& s = shape();
  if (i < 0) i += static_cast<int>(s.size());
  if (i < 0 || i >= static_cast<int>(s.size())) throw DimensionError("dimension index out of range");
  return s[static_cast<std::size_t>(i)];
}

std::size_t Tensor::numel() const { return checked().data.size(); }

std::span<float> Tensor::data() { return checked().data; }
std::span<const float> Tensor::data() const { return checked().data; }

float Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor with " + std::to_string(numel()) + " elements");
  return checked().data[0];
}

double Tensor::item_wide() const {
  const float v = item();
  const double w = checked().wide_value;
  return std::isnan(w) ? static_cast<double>(v) : w;
}

bool Tensor::requires_grad() const { return checked().requires_grad; }
void Tensor::set_requires_grad(bool on) { checked().requires_grad = on; }
bool Tensor::has_grad() const { return !checked().grad.empty(); }

std::span<float> Tensor::grad() { return grad_buffer(checked()); }

std::span<const float> Tensor::grad() const { return grad_buffer(checked()); }

void Tensor::zero_grad() {
  auto& g = checked().grad;
  std::fill(g.begin(), g.end(), 0.0f);
}

float& Tensor::at(int c, int h, int w) {
  auto& t = checked();
  return t.data[(static_cast<std::size_t>(c) * t.shape[1] + h) * t.shape[2] + w];
}

float Tensor::at(int c, int h, int w) const {
  const auto& t = checked();
  return t.data[(static_cast<std::size_t>(c) * t.shape[1] + h) * t.shape[2] + w];
}

Tensor Tensor::clone() const {
  const auto& t = checked();
  return Tensor(t.shape, t.data, t.requires_grad);
}

Tensor Tensor::detach() const {
  const auto& t = checked();
  return Tensor(t.shape, t.data, false);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_mode) { g_grad_mode = false; }
NoGradGuard::~NoGradGuard() { g_grad_mode = previous_; }

bool grad_mode_enabled() { return g_grad_mode; }

std::span<float> grad_buffer(TensorImpl& impl) {
  if (impl.grad.size() != impl.data.size()) impl.grad.assign(impl.data.size(), 0.0f);
  return impl.grad;
}

void check_finite(std::span<const float> values, const char* what) {
  for (float v : values) {
    if (!std::isfinite(v)) throw NonFiniteError(std::string("non-finite value produced by ") + what);
  }
}

Tensor make_result(Shape shape, std::vector<float> data, const std::vector<Tensor>& inputs,
                   BackwardFn backward_fn) {
  check_finite(data, "tensor op");
  Tensor out(std::move(shape), std::move(data));
  if (!g_grad_mode) return out;
  const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (!any) return out;
  auto node = std::make_shared<Node>();
  node->inputs.reserve(inputs.size());
  for (const auto& t : inputs) node->inputs.push_back(t.impl());
  node->backward = std::move(backward_fn);
  out.impl()->requires_grad = true;
  out.impl()->node = std::move(node);
  return out;
}

Tensor make_scalar_result(double value, const std::vector<Tensor>& inputs, BackwardFn backward_fn) {
  Tensor out = make_result({1}, {static_cast<float>(value)}, inputs, std::move(backward_fn));
  out.impl()->wide_value = value;
  return out;
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) throw ContractError("backward() requires a scalar root");
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (inputs before outputs).
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> visited;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack;
  stack.emplace_back(loss.impl().get(), 0);
  visited.insert(loss.impl().get());
  while (!stack.empty()) {
    auto& [impl, next] = stack.back();
    const auto* node = impl->node.get();
    if (node && next < node->inputs.size()) {
      TensorImpl* child = node->inputs[next++].get();
      if (child->node && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(impl);
      stack.pop_back();
    }
  }

  auto root_grad = grad_buffer(*loss.impl());
  root_grad[0] += 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* impl = *it;
    if (!impl->node) continue;
    grad_buffer(*impl);
    impl->node->backward(impl->grad);
  }
}

}  // namespace plarseg::numkit
