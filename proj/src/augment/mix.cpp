#include "plarseg/augment/mix.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "plarseg/numkit/rng.hpp"

namespace plarseg::augment {

using synth::LabelMap;
using synth::Sample;

nlohmann::json MixRecord::to_json() const {
  std::size_t pasted = 0;
  for (auto v : region) pasted += v != 0;
  nlohmann::json j{{"kind", kind},
                   {"source_id", source_id},
                   {"target_id", target_id},
                   {"classes", classes},
                   {"pasted_pixels", pasted}};
  if (kind == "cutmix") j["box"] = {{"r0", box.r0}, {"c0", box.c0}, {"h", box.h}, {"w", box.w}};
  return j;
}

std::vector<double> inverse_frequency_weights(const std::vector<const LabelMap*>& maps, int k) {
  std::vector<double> count(static_cast<std::size_t>(k), 0.0);
  for (const auto* m : maps)
    for (auto id : m->ids)
      if (id < k) count[id] += 1.0;
  double max_w = 0.0;
  std::vector<double> w(static_cast<std::size_t>(k), 0.0);
  for (int c = 0; c < k; ++c) {
    if (count[c] > 0) {
      w[c] = 1.0 / count[c];
      max_w = std::max(max_w, w[c]);
    }
  }
  if (max_w == 0.0) max_w = 1.0;
  double total = 0.0;
  for (int c = 0; c < k; ++c) {
    if (count[c] == 0) w[c] = max_w;
    total += w[c];
  }
  for (auto& v : w) v /= total;
  return w;
}

CopyPasteResult copy_paste(const Sample& dst, const Sample& src, const std::vector<double>& class_weights,
                           std::uint64_t seed, int max_resample) {
  if (!dst.label || !src.label) throw synth::ParameterError("copy_paste needs labelled samples");
  if (dst.image.shape() != src.image.shape()) throw numkit::DimensionError("copy_paste: image shapes differ");
  const LabelMap& sl = *src.label;

  CopyPasteResult out{dst, {}};
  out.sample.image = dst.image.clone();
  out.record.source_id = src.id;
  out.record.target_id = dst.id;
  out.record.kind = "identity";
  out.record.region.assign(sl.ids.size(), 0);

  numkit::Rng rng(numkit::mix_seed(seed, 0xc0b7));
  const auto present = [&](int cls) {
    return std::find(sl.ids.begin(), sl.ids.end(), static_cast<std::uint8_t>(cls)) != sl.ids.end();
  };
  int chosen = -1;
  for (int attempt = 0; attempt <= max_resample; ++attempt) {
    const int cls = rng.categorical(class_weights);
    if (cls < 0) break;
    if (present(cls)) {
      chosen = cls;
      break;
    }
  }
  if (chosen < 0) return out;

  LabelMap& lab = *out.sample.label;
  const int h = lab.height, w = lab.width;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * w + c;
      if (sl.ids[i] != chosen) continue;
      lab.ids[i] = static_cast<std::uint8_t>(chosen);
      for (int ch = 0; ch < dst.image.dim(0); ++ch) out.sample.image.at(ch, r, c) = src.image.at(ch, r, c);
      out.record.region[i] = 1;
    }
  out.record.kind = "copy_paste";
  out.record.classes = {chosen};
  return out;
}

Box cutmix_box(int height, int width, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw synth::ParameterError("cutmix ratio must lie in (0, 1)");
  numkit::Rng rng(numkit::mix_seed(seed, 0xc07));
  const long area = std::max<long>(1, std::lround(ratio * height * width));
  const double aspect = std::exp(rng.uniform(std::log(0.5), std::log(2.0)));
  const int h_min = static_cast<int>((area + width - 1) / width);
  int h = static_cast<int>(std::lround(std::sqrt(static_cast<double>(area) * aspect)));
  h = std::clamp(h, std::max(1, h_min), height);
  const int w = std::clamp(static_cast<int>(std::lround(static_cast<double>(area) / h)), 1, width);
  Box b;
  b.h = h;
  b.w = w;
  b.r0 = static_cast<int>(rng.randint(0, height - h));
  b.c0 = static_cast<int>(rng.randint(0, width - w));
  return b;
}

CutMixResult cutmix(const numkit::Tensor& a, const numkit::Tensor& b, double ratio, std::uint64_t seed,
                    const std::string& a_id, const std::string& b_id) {
  if (a.shape() != b.shape() || a.rank() != 3) throw numkit::DimensionError("cutmix: image shapes differ");
  const int h = a.dim(1), w = a.dim(2);
  CutMixResult out;
  out.box = cutmix_box(h, w, ratio, seed);
  out.image = a.clone();
  out.record.kind = "cutmix";
  out.record.source_id = b_id;
  out.record.target_id = a_id;
  out.record.box = out.box;
  out.record.region.assign(static_cast<std::size_t>(h) * w, 0);
  for (int r = out.box.r0; r < out.box.r0 + out.box.h; ++r)
    for (int c = out.box.c0; c < out.box.c0 + out.box.w; ++c) {
      for (int ch = 0; ch < a.dim(0); ++ch) out.image.at(ch, r, c) = b.at(ch, r, c);
      out.record.region[static_cast<std::size_t>(r) * w + c] = 1;
    }
  return out;
}

}  // namespace plarseg::augment
