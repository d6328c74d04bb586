#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "plarseg/synth/sample.hpp"

namespace plarseg::augment {

struct Box {
  int r0 = 0;
  int c0 = 0;
  int h = 0;
  int w = 0;

  bool contains(int r, int c) const { return r >= r0 && r < r0 + h && c >= c0 && c < c0 + w; }
  int area() const { return h * w; }
};

struct MixRecord {
  std::string kind;  // "copy_paste", "cutmix" or "identity"
  std::string source_id;
  std::string target_id;
  std::vector<int> classes;          // classes transferred (copy-paste)
  std::vector<std::uint8_t> region;  // H*W pixels taken from the source
  Box box;                           // CutMix only

  nlohmann::json to_json() const;
};

// Inverse class frequency over a set of label maps. Classes never observed get
// the largest weight seen; the vector sums to 1.
std::vector<double> inverse_frequency_weights(const std::vector<const synth::LabelMap*>& maps, int k);

struct CopyPasteResult {
  synth::Sample sample;
  MixRecord record;
};

// Pixels of one source class, sampled proportionally to class_weights, overwrite
// the destination image and label. A class missing from src is resampled up to
// max_resample times before falling back to the identity.
CopyPasteResult copy_paste(const synth::Sample& dst, const synth::Sample& src,
                           const std::vector<double>& class_weights, std::uint64_t seed, int max_resample = 8);

// Box of round(ratio * H * W) pixels (at least 1x1) at a seeded position.
Box cutmix_box(int height, int width, double ratio, std::uint64_t seed);

struct CutMixResult {
  numkit::Tensor image;
  Box box;
  MixRecord record;
};

CutMixResult cutmix(const numkit::Tensor& a, const numkit::Tensor& b, double ratio, std::uint64_t seed,
                    const std::string& a_id = "", const std::string& b_id = "");

// Applies a box with the same geometry to any per-pixel map (labels, confidences).
template <typename T>
std::vector<T> mix_map(const std::vector<T>& a, const std::vector<T>& b, const Box& box, int width) {
  std::vector<T> out = a;
  for (int r = box.r0; r < box.r0 + box.h; ++r)
    for (int c = box.c0; c < box.c0 + box.w; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * width + c;
      out[i] = b[i];
    }
  return out;
}

}  // namespace plarseg::augment
