#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "plarseg/numkit/tensor.hpp"

namespace plarseg::tsf {

enum class Provenance : std::uint8_t { TEACHER = 0, PLAR_AUTO = 1, MANUAL = 2, IGNORED = 3 };

const char* provenance_name(Provenance p);

struct PseudoLabelMap {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> cls;
  std::vector<float> conf;
  std::vector<Provenance> prov;

  PseudoLabelMap() = default;
  PseudoLabelMap(int h, int w);

  std::size_t size() const { return cls.size(); }
  std::size_t index(int r, int c) const { return static_cast<std::size_t>(r) * width + c; }
  // Class ids with IGNORED pixels replaced by the ignore id.
  std::vector<std::uint8_t> targets() const;
  std::size_t count(Provenance p) const;
};

// argmax / max-softmax of K x H x W logits; provenance TEACHER everywhere.
PseudoLabelMap pseudo_labels_from_logits(const numkit::Tensor& logits);

}  // namespace plarseg::tsf
