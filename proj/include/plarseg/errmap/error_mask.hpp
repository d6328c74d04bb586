#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "plarseg/numkit/tensor.hpp"
#include "plarseg/synth/sample.hpp"

namespace plarseg::errmap {

enum class MaskSource { CONF, EMD, FUSED, TRUTH };

struct ErrorMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> flags;  // 1 = potentially wrong
  MaskSource source = MaskSource::CONF;
  float threshold = 0.0f;

  std::size_t count() const;
  bool at(int r, int c) const { return flags[static_cast<std::size_t>(r) * width + c] != 0; }
};

// flag = (max class probability < tau), tau in (0, 1).
ErrorMask confidence_error_map(const numkit::Tensor& prob, float tau = 0.7f);

// flag = (x > threshold) for an EMD probability map x of shape 1 x H x W.
ErrorMask emd_error_map(const numkit::Tensor& x, float threshold = 0.5f);

// Pixelwise OR.
ErrorMask fuse(const ErrorMask& conf, const ErrorMask& emd);

// Real error map: pseudo != gt on pixels where gt is not ignored. `valid`
// receives 0 on ignored pixels.
ErrorMask true_error_map(const std::vector<std::uint8_t>& pseudo, const synth::LabelMap& gt,
                         std::vector<std::uint8_t>* valid = nullptr);

// 0/255 PGM.
void write_mask_pgm(const std::filesystem::path& path, const ErrorMask& mask);

}  // namespace plarseg::errmap
