#include "plarseg/numkit/optim.hpp"

#include <cmath>
#include <cstring>

namespace plarseg::numkit {

double PolySchedule::lr(int iter) const {
  if (max_iter <= 0) throw std::invalid_argument("PolySchedule: max_iter must be positive");
  if (iter < 0) throw std::invalid_argument("PolySchedule: negative iteration");
  if (iter >= max_iter) return 0.0;
  return initial_lr * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(max_iter), power);
}

void sgd_poly_step(ParamSet& params, const PolySchedule& schedule, int iter) {
  if (iter >= schedule.max_iter) {
    throw ScheduleExhausted("sgd_poly_step: iteration " + std::to_string(iter) + " >= max_iter " +
                            std::to_string(schedule.max_iter));
  }
  const auto lr = static_cast<float>(schedule.lr(iter));
  for (auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    auto d = p.tensor.data();
    auto g = p.tensor.grad();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] -= lr * g[i];
  }
}

double Sgd::step(ParamSet& params, int iter) {
  if (iter >= schedule_.max_iter) {
    throw ScheduleExhausted("Sgd::step: iteration " + std::to_string(iter) + " >= max_iter " +
                            std::to_string(schedule_.max_iter));
  }
  if (momentum_ == 0.0 && weight_decay_ == 0.0) {
    sgd_poly_step(params, schedule_, iter);
    return schedule_.lr(iter);
  }
  if (velocity_.size() != params.size()) {
    velocity_.clear();
    for (const auto& p : params) velocity_.emplace_back(p.tensor.numel(), 0.0f);
  }
  const auto lr = static_cast<float>(schedule_.lr(iter));
  const auto mom = static_cast<float>(momentum_);
  const auto wd = static_cast<float>(weight_decay_);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& t = params[k].tensor;
    if (!t.has_grad()) continue;
    auto d = t.data();
    auto g = t.grad();
    auto& v = velocity_[k];
    for (std::size_t i = 0; i < d.size(); ++i) {
      v[i] = mom * v[i] + g[i] + wd * d[i];
      d[i] -= lr * v[i];
    }
  }
  return lr;
}

double clip_grad_norm(ParamSet& params, double max_norm) {
  double sq = 0.0;
  for (auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (float g : p.tensor.grad()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const auto f = static_cast<float>(max_norm / norm);
    for (auto& p : params) {
      if (!p.tensor.has_grad()) continue;
      for (auto& g : p.tensor.grad()) g *= f;
    }
  }
  return norm;
}

void ema_update(ParamSet& teacher, const ParamSet& student, double alpha) {
  if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("ema_update: alpha outside [0, 1]");
  if (teacher.size() != student.size()) throw DimensionError("ema_update: parameter count mismatch");
  const auto a = static_cast<float>(alpha);
  const auto b = static_cast<float>(1.0 - alpha);
  for (std::size_t k = 0; k < teacher.size(); ++k) {
    if (teacher[k].tensor.shape() != student[k].tensor.shape()) {
      throw DimensionError("ema_update: shape mismatch for " + teacher[k].name);
    }
  }
  for (std::size_t k = 0; k < teacher.size(); ++k) {
    auto t = teacher[k].tensor.data();
    const auto s = student[k].tensor.data();
    if (alpha == 0.0) {
      std::copy(s.begin(), s.end(), t.begin());
    } else if (alpha != 1.0) {
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = a * t[i] + b * s[i];
    }
  }
}

void zero_grads(ParamSet& params) {
  for (auto& p : params)
    if (p.tensor.has_grad()) p.tensor.zero_grad();
}

ParamSet clone_params(const ParamSet& params, bool requires_grad) {
  ParamSet out;
  out.reserve(params.size());
  for (const auto& p : params) {
    auto t = p.tensor.detach();
    t.set_requires_grad(requires_grad);
    out.push_back({p.name, t});
  }
  return out;
}

void copy_params(ParamSet& dst, const ParamSet& src) {
  if (dst.size() != src.size()) throw DimensionError("copy_params: parameter count mismatch");
  for (std::size_t k = 0; k < dst.size(); ++k) {
    if (dst[k].tensor.shape() != src[k].tensor.shape())
      throw DimensionError("copy_params: shape mismatch for " + dst[k].name);
    const auto s = src[k].tensor.data();
    std::copy(s.begin(), s.end(), dst[k].tensor.data().begin());
  }
}

std::size_t param_count(const ParamSet& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

std::uint64_t param_checksum(const ParamSet& params) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& p : params) {
    for (float v : p.tensor.data()) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      for (int b = 0; b < 4; ++b) {
        h ^= (bits >> (8 * b)) & 0xFFu;
        h *= 1099511628211ULL;
      }
    }
  }
  return h;
}

Tensor kaiming_normal(Shape shape, int fan_in, Rng& rng) {
  const std::size_t n = shape_numel(shape);
  const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
  std::vector<float> data(n);
  for (auto& v : data) v = static_cast<float>(rng.normal() * std_dev);
  return Tensor(std::move(shape), std::move(data), true);
}

}  // namespace plarseg::numkit
