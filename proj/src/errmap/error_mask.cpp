#include "plarseg/errmap/error_mask.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

#include "plarseg/synth/io.hpp"

namespace plarseg::errmap {

namespace nk = plarseg::numkit;

std::size_t ErrorMask::count() const {
  return static_cast<std::size_t>(std::count_if(flags.begin(), flags.end(), [](auto v) { return v != 0; }));
}

ErrorMask confidence_error_map(const nk::Tensor& prob, float tau) {
  if (!(tau > 0.0f && tau < 1.0f)) throw std::invalid_argument("confidence threshold must lie in (0, 1)");
  if (prob.rank() != 3) throw nk::DimensionError("confidence_error_map expects K x H x W probabilities");
  const int k = prob.dim(0), h = prob.dim(1), w = prob.dim(2);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  ErrorMask m{h, w, std::vector<std::uint8_t>(plane, 0), MaskSource::CONF, tau};
  auto p = prob.data();
  for (std::size_t i = 0; i < plane; ++i) {
    float best = p[i];
    for (int c = 1; c < k; ++c) best = std::max(best, p[c * plane + i]);
    m.flags[i] = best < tau ? 1 : 0;
  }
  return m;
}

ErrorMask emd_error_map(const nk::Tensor& x, float threshold) {
  if (x.rank() != 3 || x.dim(0) != 1) throw nk::DimensionError("emd_error_map expects a 1 x H x W map");
  const int h = x.dim(1), w = x.dim(2);
  ErrorMask m{h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(h) * w, 0), MaskSource::EMD, threshold};
  auto d = x.data();
  for (std::size_t i = 0; i < m.flags.size(); ++i) m.flags[i] = d[i] > threshold ? 1 : 0;
  return m;
}

ErrorMask fuse(const ErrorMask& conf, const ErrorMask& emd) {
  if (conf.height != emd.height || conf.width != emd.width || conf.flags.size() != emd.flags.size())
    throw nk::DimensionError("fuse: mask shapes differ");
  ErrorMask m{conf.height, conf.width, conf.flags, MaskSource::FUSED, conf.threshold};
  for (std::size_t i = 0; i < m.flags.size(); ++i) m.flags[i] = (conf.flags[i] || emd.flags[i]) ? 1 : 0;
  return m;
}

ErrorMask true_error_map(const std::vector<std::uint8_t>& pseudo, const synth::LabelMap& gt,
                         std::vector<std::uint8_t>* valid) {
  if (pseudo.size() != gt.ids.size()) throw nk::DimensionError("true_error_map: size mismatch");
  ErrorMask m{gt.height, gt.width, std::vector<std::uint8_t>(pseudo.size(), 0), MaskSource::TRUTH, 0.0f};
  if (valid) valid->assign(pseudo.size(), 1);
  for (std::size_t i = 0; i < pseudo.size(); ++i) {
    if (gt.ids[i] == synth::kIgnore) {
      if (valid) (*valid)[i] = 0;
      continue;
    }
    m.flags[i] = pseudo[i] != gt.ids[i] ? 1 : 0;
  }
  return m;
}

void write_mask_pgm(const std::filesystem::path& path, const ErrorMask& mask) {
  synth::LabelMap lm(mask.height, mask.width, 0);
  for (std::size_t i = 0; i < mask.flags.size(); ++i) lm.ids[i] = mask.flags[i] ? 255 : 0;
  synth::write_pgm(path, lm);
}

}  // namespace plarseg::errmap
