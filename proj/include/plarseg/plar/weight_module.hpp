#pragma once

#include <cstdint>
#include <optional>

#include "plarseg/numkit/optim.hpp"
#include "plarseg/synth/sample.hpp"
#include "plarseg/tsf/model.hpp"

namespace plarseg::plar {

struct Lambdas {
  double euclid = 0.5;
  double maha = 0.5;
};

// Trade-off weights from image features:
// concat(GAP(F1), GAP(F2)) -> linear -> relu -> linear(2) -> sigmoid.
// A frozen module always answers 0.5 / 0.5.
class WeightModule {
 public:
  WeightModule() = default;
  static WeightModule create(int f1_channels, int f2_channels, int hidden, std::uint64_t seed);
  static WeightModule frozen_half();

  // Two-element tensor (lambda_euclid, lambda_maha), differentiable w.r.t. the
  // module parameters only.
  numkit::Tensor forward(const numkit::Tensor& f1, const numkit::Tensor& f2) const;
  Lambdas lambdas(const numkit::Tensor& f1, const numkit::Tensor& f2) const;

  bool frozen() const { return frozen_; }
  numkit::ParamSet& params() { return params_; }
  const numkit::ParamSet& params() const { return params_; }

 private:
  bool frozen_ = false;
  numkit::ParamSet params_;
};

struct WeightTrainConfig {
  int hidden = 16;
  double lr = 0.05;
  double momentum = 0.9;
  int max_iter = 1000;
  double temperature = 1.0;
  float conf_tau = 0.7f;  // confidence threshold used when simulating error masks
};

// Result of one training step; empty when the image offered too few classes.
struct WeightStepResult {
  double loss_euclid = 0.0;
  double loss_maha = 0.0;
  std::size_t cells = 0;
};

// Trains the module on labelled images. For one image, class statistics come
// from labelled grid cells outside a simulated error mask (low confidence or
// truly wrong), and the masked cells are classified by softmin over the hybrid
// distances. Loss = CE(euclid) + CE(maha).
class WeightTrainer {
 public:
  WeightTrainer(WeightModule& module, const WeightTrainConfig& cfg);

  std::optional<WeightStepResult> step(const tsf::SegOutput& teacher_out, const synth::LabelMap& gt, int iter);

  numkit::Sgd& optimizer() { return opt_; }

 private:
  WeightModule* module_;
  WeightTrainConfig cfg_;
  numkit::Sgd opt_;
};

}  // namespace plarseg::plar
