#pragma once

#include <cstdint>
#include <vector>

#include "plarseg/numkit/optim.hpp"
#include "plarseg/synth/sample.hpp"
#include "plarseg/tsf/model.hpp"

namespace plarseg::errmap {

// Error Mask Decoder: conv3x3 -> norm -> relu -> conv3x3 -> norm -> relu -> conv1x1 -> sigmoid.
class EmdNet {
 public:
  EmdNet() = default;
  static EmdNet create(int in_channels, int hidden, std::uint64_t seed);

  // Logits (1 x H x W) and probabilities x in (0, 1).
  numkit::Tensor forward_logits(const numkit::Tensor& features) const;
  numkit::Tensor forward(const numkit::Tensor& features) const;

  int in_channels() const { return in_channels_; }
  int hidden() const { return hidden_; }
  numkit::ParamSet& params() { return params_; }
  const numkit::ParamSet& params() const { return params_; }
  // Zeroes the last layer so that x = 0.5 everywhere.
  void zero_output_layer();

 private:
  int in_channels_ = 0;
  int hidden_ = 0;
  numkit::ParamSet params_;
};

// Input contract for EmdNet: channels(F1) + channels(F2) + K, i.e. F1 resampled
// to the F2 grid, F2, and the teacher's softmax on the grid. Always detached.
int emd_input_channels(const tsf::SegModelConfig& cfg);
numkit::Tensor emd_features(const tsf::SegOutput& teacher_out);

// Teacher pseudo-label on the grid and the matching downsampled ground truth.
std::vector<std::uint8_t> grid_pseudo_labels(const tsf::SegOutput& teacher_out);

struct EmdTrainConfig {
  int hidden = 16;
  float threshold = 0.5f;
  double lr = 0.01;
  double momentum = 0.9;
  int max_iter = 1000;
};

// Holds the decoder and its optimiser; one step per call on a labelled image.
class EmdTrainer {
 public:
  EmdTrainer(EmdNet net, const EmdTrainConfig& cfg);

  // One SGD step of mean BCE on (teacher features, true error map). Returns the
  // loss before the update; teacher outputs are treated as constants.
  double step(const tsf::SegOutput& teacher_out, const synth::LabelMap& gt, int iter);
  // Mean BCE without updating.
  double evaluate(const tsf::SegOutput& teacher_out, const synth::LabelMap& gt) const;

  EmdNet& net() { return net_; }
  const EmdNet& net() const { return net_; }
  numkit::Sgd& optimizer() { return opt_; }

 private:
  EmdNet net_;
  numkit::Sgd opt_;
};

// Trains a fresh decoder on the labelled pool with a frozen teacher.
EmdNet emd_train(const std::vector<const synth::Sample*>& labelled, const tsf::SegModel& teacher,
                 const EmdTrainConfig& cfg, int steps, std::uint64_t seed);

// Pixel-level ROC AUC of scores against binary labels (valid pixels only).
double roc_auc(const std::vector<float>& scores, const std::vector<std::uint8_t>& labels,
               const std::vector<std::uint8_t>& valid = {});

}  // namespace plarseg::errmap
