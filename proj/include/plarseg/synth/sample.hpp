#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "plarseg/numkit/tensor.hpp"

namespace plarseg::synth {

inline constexpr std::uint8_t kIgnore = 255;

enum class Split { TRAIN_LABELLED, TRAIN_UNLABELLED, VAL, TEST };

const char* split_name(Split s);
Split split_from_name(const std::string& name);

class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct LabelMap {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> ids;  // row-major, kIgnore for unlabelled pixels

  LabelMap() = default;
  LabelMap(int h, int w, std::uint8_t fill = kIgnore)
      : height(h), width(w), ids(static_cast<std::size_t>(h) * w, fill) {}

  std::uint8_t at(int r, int c) const { return ids[static_cast<std::size_t>(r) * width + c]; }
  std::uint8_t& at(int r, int c) { return ids[static_cast<std::size_t>(r) * width + c]; }
  bool operator==(const LabelMap&) const = default;
};

// Nearest-neighbour resampling with the same index rule as numkit::resize_nearest.
LabelMap resize_labels(const LabelMap& labels, int out_h, int out_w);

struct Sample {
  std::string id;
  numkit::Tensor image;            // 3 x H x W, values in [0, 1]
  std::optional<LabelMap> label;   // absent for the unlabelled pool
  Split split = Split::TRAIN_LABELLED;

  int height() const { return image.dim(1); }
  int width() const { return image.dim(2); }
};

}  // namespace plarseg::synth
