#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "plarseg/numkit/rng.hpp"
#include "plarseg/numkit/tensor.hpp"

namespace plarseg::numkit {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Ordered parameter collection; order defines checkpoint layout.
using ParamSet = std::vector<NamedTensor>;

class ScheduleExhausted : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// lr(iter) = initial_lr * (1 - iter / max_iter)^power
struct PolySchedule {
  double initial_lr = 0.001;
  int max_iter = 1;
  double power = 0.9;

  double lr(int iter) const;
};

// p <- p - lr(iter) * grad(p) for every parameter. Throws ScheduleExhausted when
// iter >= max_iter.
void sgd_poly_step(ParamSet& params, const PolySchedule& schedule, int iter);

// SGD on the poly schedule with optional heavy-ball momentum and L2 weight decay.
// With momentum = 0 and weight_decay = 0 a step is exactly sgd_poly_step.
class Sgd {
 public:
  Sgd() = default;
  Sgd(PolySchedule schedule, double momentum = 0.0, double weight_decay = 0.0)
      : schedule_(schedule), momentum_(momentum), weight_decay_(weight_decay) {}

  // Applies one update and returns the learning rate used.
  double step(ParamSet& params, int iter);
  const PolySchedule& schedule() const { return schedule_; }

  // Momentum buffers, exposed for checkpointing.
  std::vector<std::vector<float>>& velocity() { return velocity_; }
  const std::vector<std::vector<float>>& velocity() const { return velocity_; }

 private:
  PolySchedule schedule_;
  double momentum_ = 0.0;
  double weight_decay_ = 0.0;
  std::vector<std::vector<float>> velocity_;
};

// teacher <- alpha * teacher + (1 - alpha) * student, elementwise.
void ema_update(ParamSet& teacher, const ParamSet& student, double alpha);

// Rescales all gradients so their joint L2 norm is at most max_norm. Returns the
// norm before rescaling. max_norm <= 0 leaves the gradients alone.
double clip_grad_norm(ParamSet& params, double max_norm);

void zero_grads(ParamSet& params);
ParamSet clone_params(const ParamSet& params, bool requires_grad);
// Copies values of src into dst (identical layout required).
void copy_params(ParamSet& dst, const ParamSet& src);
std::size_t param_count(const ParamSet& params);
// FNV-1a over the raw float bits, for change detection.
std::uint64_t param_checksum(const ParamSet& params);

// Kaiming-normal initialisation: N(0, 2 / fan_in).
Tensor kaiming_normal(Shape shape, int fan_in, Rng& rng);

}  // namespace plarseg::numkit
