#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "plarseg/numkit/optim.hpp"
#include "plarseg/numkit/tensor.hpp"

namespace plarseg::tsf {

// conv stem -> dilated residual blocks -> pyramid pooling block (F1)
// -> two-layer decoder (second layer is F2) -> 1x1 head.
// Spatial layout for an H x W input: stem at H x W, blocks and decoder on the
// "grid" at H/2 x W/2, pyramid block at H/4 x W/4. Logits are produced on the
// grid and resized to H x W.
struct SegModelConfig {
  int in_channels = 3;
  int num_classes = 6;
  int width = 16;
  std::vector<int> dilations{2, 4};

  int f1_channels() const { return width; }
  int f2_channels() const { return width; }
  void validate() const;
};

nlohmann::json to_json(const SegModelConfig& c);
SegModelConfig seg_model_config_from_json(const nlohmann::json& j);

struct SegOutput {
  numkit::Tensor logits;       // K x H x W
  numkit::Tensor logits_grid;  // K x H/2 x W/2
  numkit::Tensor f1;           // C1 x H/4 x W/4
  numkit::Tensor f2;           // C2 x H/2 x W/2
};

class SegModel {
 public:
  SegModel() = default;
  static SegModel create(const SegModelConfig& cfg, std::uint64_t seed);

  SegOutput forward(const numkit::Tensor& image) const;

  const SegModelConfig& config() const { return cfg_; }
  numkit::ParamSet& params() { return params_; }
  const numkit::ParamSet& params() const { return params_; }
  // Deep copy with the given requires_grad flag on every parameter.
  SegModel copy(bool requires_grad) const;

 private:
  const numkit::Tensor& p(std::size_t i) const { return params_[i].tensor; }
  SegModelConfig cfg_;
  numkit::ParamSet params_;
};

struct ModelTriplet {
  SegModel student;
  SegModel friend_model;
  SegModel teacher;  // EMA of the student, never optimised

  // Student and friend from different seeds; teacher starts as a student copy.
  static ModelTriplet create(const SegModelConfig& cfg, std::uint64_t seed);
};

}  // namespace plarseg::tsf
