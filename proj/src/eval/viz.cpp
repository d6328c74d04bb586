#include "plarseg/eval/viz.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <png.h>

namespace plarseg::eval {

namespace {

std::uint8_t to_byte(float v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)); }

void append_bytes(png_structp png, png_bytep data, png_size_t len) {
  auto* out = static_cast<std::string*>(png_get_io_ptr(png));
  out->append(reinterpret_cast<const char*>(data), len);
}

void no_flush(png_structp) {}

}  // namespace

RgbImage render_image(const numkit::Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw numkit::DimensionError("render_image expects 3 x H x W");
  const int h = image.dim(1), w = image.dim(2);
  RgbImage out(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      for (int k = 0; k < 3; ++k) out.px(r, c)[k] = to_byte(image.at(k, r, c));
  return out;
}

RgbImage render_labels(std::span<const std::uint8_t> ids, int height, int width, const Palette& palette) {
  if (ids.size() != static_cast<std::size_t>(height) * width) throw numkit::DimensionError("label buffer size mismatch");
  RgbImage out(height, width);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] == synth::kIgnore) continue;
    if (ids[i] >= palette.size()) throw VizError("no palette entry for class " + std::to_string(ids[i]));
    std::copy(palette[ids[i]].begin(), palette[ids[i]].end(), &out.data[i * 3]);
  }
  return out;
}

RgbImage render_labels(const synth::LabelMap& labels, const Palette& palette) {
  return render_labels(labels.ids, labels.height, labels.width, palette);
}

RgbImage render_labels(const tsf::PseudoLabelMap& map, const Palette& palette) {
  return render_labels(map.targets(), map.height, map.width, palette);
}

RgbImage render_mask(const errmap::ErrorMask& mask, int height, int width) {
  if (height <= 0) height = mask.height;
  if (width <= 0) width = mask.width;
  RgbImage out(height, width);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c)
      if (mask.at(r * mask.height / height, c * mask.width / width)) std::fill_n(out.px(r, c), 3, 255);
  return out;
}

RgbImage overlay_uncertainty(const RgbImage& image, std::span<const float> u, float alpha) {
  if (u.size() != static_cast<std::size_t>(image.height) * image.width)
    throw numkit::DimensionError("uncertainty map size mismatch");
  RgbImage out = image;
  static constexpr float kRed[3] = {255.0f, 32.0f, 32.0f};
  for (std::size_t i = 0; i < u.size(); ++i) {
    const float a = alpha * std::clamp(u[i], 0.0f, 1.0f);
    for (int k = 0; k < 3; ++k) {
      const float v = (1.0f - a) * out.data[i * 3 + k] + a * kRed[k];
      out.data[i * 3 + k] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 255.0f)));
    }
  }
  return out;
}

RgbImage hstack(const std::vector<RgbImage>& panels, int gutter) {
  if (panels.empty()) return {};
  const int h = panels.front().height;
  int w = 0;
  for (const auto& p : panels) {
    if (p.height != h) throw numkit::DimensionError("panels differ in height");
    w += p.width;
  }
  w += gutter * static_cast<int>(panels.size() - 1);
  RgbImage out(h, w, 255);
  int x0 = 0;
  for (const auto& p : panels) {
    for (int r = 0; r < h; ++r) std::copy_n(p.px(r, 0), p.width * 3, out.px(r, x0));
    x0 += p.width + gutter;
  }
  return out;
}

std::string encode_png(const RgbImage& image) {
  if (image.height <= 0 || image.width <= 0) throw VizError("cannot encode an empty image");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw VizError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw VizError("png_create_info_struct failed");
  }
  std::string out;
  std::vector<png_bytep> rows(static_cast<std::size_t>(image.height));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw VizError("PNG encoding failed");
  }
  png_set_write_fn(png, &out, append_bytes, no_flush);
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  for (int r = 0; r < image.height; ++r) rows[static_cast<std::size_t>(r)] = const_cast<png_bytep>(image.px(r, 0));
  png_set_rows(png, info, rows.data());
  png_write_png(png, info, PNG_TRANSFORM_IDENTITY, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

void write_png(const std::filesystem::path& path, const RgbImage& image) {
  const std::string bytes = encode_png(image);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw VizError("cannot open " + path.string());
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void write_ppm(const std::filesystem::path& path, const RgbImage& image) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw VizError("cannot open " + path.string());
  os << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(image.data.data()), static_cast<std::streamsize>(image.data.size()));
}

VizExport export_correction_panels(const std::filesystem::path& dir, const std::string& name,
                                   const synth::Sample& sample, const tsf::PseudoLabelMap& pseudo,
                                   const tsf::PseudoLabelMap& corrected, const synth::LabelMap& gt,
                                   const Palette& palette) {
  std::vector<RgbImage> panels{render_image(sample.image), render_labels(pseudo, palette),
                               render_labels(corrected, palette), render_labels(gt, palette)};
  std::filesystem::create_directories(dir);
  VizExport e{dir / (name + ".png"), static_cast<int>(panels.size())};
  write_png(e.path, hstack(panels));
  return e;
}

VizExport export_threshold_sweep(const std::filesystem::path& dir, const std::string& name,
                                 const numkit::Tensor& prob, const errmap::ErrorMask& truth,
                                 const std::vector<float>& thresholds, int height, int width) {
  if (height <= 0) height = truth.height;
  if (width <= 0) width = truth.width;
  std::vector<RgbImage> panels;
  for (float t : thresholds) panels.push_back(render_mask(errmap::confidence_error_map(prob, t), height, width));
  panels.push_back(render_mask(truth, height, width));
  std::filesystem::create_directories(dir);
  VizExport e{dir / (name + ".png"), static_cast<int>(panels.size())};
  write_png(e.path, hstack(panels));
  return e;
}

}  // namespace plarseg::eval
