#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "plarseg/numkit/optim.hpp"
#include "plarseg/synth/sample.hpp"
#include "plarseg/tsf/model.hpp"
#include "plarseg/tsf/pseudo_label.hpp"

namespace plarseg::tsf {

struct TrainConfig {
  int batch_size = 2;
  double ema_alpha = 0.99;
  float w_sup = 1.0f;
  float w_t = 1.0f;
  float w_f = 1.0f;
  bool use_friend = true;    // false reduces to teacher-student
  bool unsupervised = true;  // false skips the unlabelled branch entirely
  int unsup_rampup_iters = 0;  // sigmoid-shaped ramp of w_t and w_f from ~0 to 1, 0 disables
  double cutmix_ratio = 0.5;
  double copy_paste_prob = 0.5;
  double momentum = 0.0;
  double weight_decay = 0.0;
  double grad_clip = 0.0;  // joint gradient norm cap per model, 0 disables
  numkit::PolySchedule schedule;
  std::uint64_t seed = 0;
};

// exp(-5 (1 - t)^2) with t = iter / rampup clamped to [0, 1]; 1 when rampup <= 0.
double unsup_ramp(int iter, int rampup);

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

// Weighted loss contributions of one step; total is their sum.
struct LossBreakdown {
  int iter = 0;
  double lr = 0.0;
  double l_sup = 0.0;
  double l_t = 0.0;
  double l_f = 0.0;
  double total = 0.0;
  bool all_ignored = false;  // teacher term had no valid pixel
};

// Produces the refined target map for one unlabelled image from the frozen
// teacher's outputs. Called inside train_step before any mixing.
class PseudoLabelSource {
 public:
  virtual ~PseudoLabelSource() = default;
  virtual PseudoLabelMap refine(const synth::Sample& image, const SegOutput& teacher_out, int iter) = 0;
};

// Plain argmax of the teacher with no refinement.
class TeacherArgmaxSource : public PseudoLabelSource {
 public:
  PseudoLabelMap refine(const synth::Sample& image, const SegOutput& teacher_out, int iter) override;
};

class TrainingAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Optimizers {
  numkit::Sgd student;
  numkit::Sgd friend_model;

  explicit Optimizers(const TrainConfig& cfg)
      : student(cfg.schedule, cfg.momentum, cfg.weight_decay), friend_model(cfg.schedule, cfg.momentum, cfg.weight_decay) {}
};

// One optimisation step. Order: teacher forward (no grad) -> pseudo-label
// source -> copy-paste on labelled pairs and CutMix on unlabelled pairs with
// the same box applied to the refined maps -> student/friend forward ->
// L = L_sup + L_t + L_f -> backward -> SGD on student and friend -> EMA teacher.
LossBreakdown train_step(const std::vector<const synth::Sample*>& labelled,
                         const std::vector<const synth::Sample*>& unlabelled, ModelTriplet& triplet, Optimizers& opt,
                         const TrainConfig& cfg, PseudoLabelSource* source, const std::vector<double>& class_weights,
                         int iter);

// Owns the triplet and optimisers and samples batches from the pools. Batch
// choice depends only on (seed, iter), so a run can resume at any iteration.
class TsfTrainer {
 public:
  TsfTrainer(TrainConfig cfg, ModelTriplet triplet, std::vector<const synth::Sample*> labelled,
             std::vector<const synth::Sample*> unlabelled);

  LossBreakdown step(int iter, PseudoLabelSource* source);

  std::vector<const synth::Sample*> labelled_batch(int iter) const;
  std::vector<const synth::Sample*> unlabelled_batch(int iter) const;

  ModelTriplet& triplet() { return triplet_; }
  const ModelTriplet& triplet() const { return triplet_; }
  Optimizers& optimizers() { return opt_; }
  const TrainConfig& config() const { return cfg_; }
  const std::vector<double>& class_weights() const { return class_weights_; }

 private:
  TrainConfig cfg_;
  ModelTriplet triplet_;
  Optimizers opt_;
  std::vector<const synth::Sample*> labelled_;
  std::vector<const synth::Sample*> unlabelled_;
  std::vector<double> class_weights_;
};

}  // namespace plarseg::tsf
