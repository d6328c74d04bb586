#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "plarseg/synth/sample.hpp"

namespace plarseg::synth {

enum class SceneStyle { VORONOI, BLOBS };

using Rgb = std::array<float, 3>;

struct SceneParams {
  int k = 6;
  int height = 64;
  int width = 64;
  SceneStyle style = SceneStyle::VORONOI;
  int regions = 14;            // Voronoi sites or blob count
  double noise = 0.08;         // per-pixel Gaussian std
  double overlap = 0.35;       // 0 keeps prototypes apart, 1 collapses them to grey
  double texture = 0.06;       // amplitude of the per-class sinusoid
  double illumination = 0.10;  // per-image multiplicative gain spread
  double imbalance = 0.0;      // power-law exponent on class frequencies
  double warp = 2.0;           // boundary jitter in pixels
  std::uint64_t palette_seed = 7;

  void validate() const;
};

nlohmann::json to_json(const SceneParams& p);
SceneParams scene_params_from_json(const nlohmann::json& j);

// Class prototype colors, quantised to multiples of 1/255.
std::vector<Rgb> class_prototypes(const SceneParams& p);

// Pure function of (seed, params). The first K regions receive a permutation
// of the class ids so that every class has a region to start with.
Sample generate_scene(std::uint64_t seed, const SceneParams& params, const std::string& id = "");

// Per-class pixel counts of a label map (ignored pixels skipped).
std::vector<std::size_t> class_histogram(const LabelMap& labels, int k);

}  // namespace plarseg::synth
