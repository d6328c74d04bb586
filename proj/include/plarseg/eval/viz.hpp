#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "plarseg/errmap/error_mask.hpp"
#include "plarseg/synth/sample.hpp"
#include "plarseg/tsf/pseudo_label.hpp"

namespace plarseg::eval {

using Palette = std::vector<std::array<std::uint8_t, 3>>;

struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;  // row-major RGB

  RgbImage() = default;
  RgbImage(int h, int w, std::uint8_t fill = 0) : height(h), width(w), data(static_cast<std::size_t>(h) * w * 3, fill) {}
  std::uint8_t* px(int r, int c) { return &data[(static_cast<std::size_t>(r) * width + c) * 3]; }
  const std::uint8_t* px(int r, int c) const { return &data[(static_cast<std::size_t>(r) * width + c) * 3]; }
};

class VizError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

RgbImage render_image(const numkit::Tensor& image);
// Class ids through the palette; the ignore id renders black. Throws VizError
// for a class without a palette entry.
RgbImage render_labels(std::span<const std::uint8_t> ids, int height, int width, const Palette& palette);
RgbImage render_labels(const synth::LabelMap& labels, const Palette& palette);
RgbImage render_labels(const tsf::PseudoLabelMap& map, const Palette& palette);
// White for flagged cells, upscaled to (height, width) by nearest neighbour.
RgbImage render_mask(const errmap::ErrorMask& mask, int height, int width);
// Blends red over the image with weight alpha * u, u in [0, 1] per pixel.
RgbImage overlay_uncertainty(const RgbImage& image, std::span<const float> uncertainty, float alpha = 0.7f);

// Panels left to right with a white gutter; all panels must share a height.
RgbImage hstack(const std::vector<RgbImage>& panels, int gutter = 2);

std::string encode_png(const RgbImage& image);
void write_png(const std::filesystem::path& path, const RgbImage& image);
void write_ppm(const std::filesystem::path& path, const RgbImage& image);

struct VizExport {
  std::filesystem::path path;
  int panels = 0;
};

// image | pseudo-label | corrected pseudo-label | ground truth
VizExport export_correction_panels(const std::filesystem::path& dir, const std::string& name,
                                   const synth::Sample& sample, const tsf::PseudoLabelMap& pseudo,
                                   const tsf::PseudoLabelMap& corrected, const synth::LabelMap& gt,
                                   const Palette& palette);

// Confidence masks at each threshold followed by the true error map.
VizExport export_threshold_sweep(const std::filesystem::path& dir, const std::string& name,
                                 const numkit::Tensor& prob, const errmap::ErrorMask& truth,
                                 const std::vector<float>& thresholds = {0.7f, 0.8f, 0.9f}, int height = 0,
                                 int width = 0);

}  // namespace plarseg::eval
