#include "plarseg/synth/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <nlohmann/json.hpp>

#include "plarseg/numkit/rng.hpp"

namespace plarseg::synth {

using numkit::Rng;
using numkit::mix_seed;

namespace {

float quantise(double v) {
  const double clamped = std::clamp(v, 0.0, 1.0);
  return static_cast<float>(std::round(clamped * 255.0) / 255.0);
}

std::vector<double> class_weights(const SceneParams& p) {
  std::vector<double> w(static_cast<std::size_t>(p.k));
  for (int c = 0; c < p.k; ++c) w[c] = std::pow(static_cast<double>(c + 1), -p.imbalance);
  return w;
}

struct Texture {
  double freq;
  double angle;
};

std::vector<Texture> class_textures(const SceneParams& p) {
  Rng rng(mix_seed(p.palette_seed, 0x7e47));
  std::vector<Texture> t(static_cast<std::size_t>(p.k));
  for (auto& tex : t) {
    tex.freq = rng.uniform(2.0, 9.0);
    tex.angle = rng.uniform(0.0, std::numbers::pi);
  }
  return t;
}

// Region id per pixel for a Voronoi partition with jittered boundaries.
std::vector<int> voronoi_regions(const SceneParams& p, Rng& rng) {
  const int n = p.regions;
  std::vector<double> sr(n), sc(n);
  for (int i = 0; i < n; ++i) {
    sr[i] = rng.uniform(0.0, p.height);
    sc[i] = rng.uniform(0.0, p.width);
  }
  const double ph1 = rng.uniform(0.0, 2 * std::numbers::pi);
  const double ph2 = rng.uniform(0.0, 2 * std::numbers::pi);
  const double fw = 2 * std::numbers::pi / 11.0;

  std::vector<int> region(static_cast<std::size_t>(p.height) * p.width);
  for (int r = 0; r < p.height; ++r) {
    for (int c = 0; c < p.width; ++c) {
      const double rr = r + 0.5 + p.warp * std::sin(fw * c + ph1);
      const double cc = c + 0.5 + p.warp * std::cos(fw * r + ph2);
      int best = 0;
      double best_d = 1e300;
      for (int i = 0; i < n; ++i) {
        const double d = (rr - sr[i]) * (rr - sr[i]) + (cc - sc[i]) * (cc - sc[i]);
        if (d < best_d) {
          best_d = d;
          best = i;
        }
      }
      region[static_cast<std::size_t>(r) * p.width + c] = best;
    }
  }
  return region;
}

// Blobs: region 0 is the background; ellipse i+1 painted in reverse order so the
// first ellipses end up on top.
std::vector<int> blob_regions(const SceneParams& p, Rng& rng) {
  const int n = p.regions;
  struct Ellipse {
    double cr, cc, ar, ac, rot;
  };
  std::vector<Ellipse> e(static_cast<std::size_t>(n));
  const double scale = std::min(p.height, p.width);
  for (auto& el : e) {
    el.cr = rng.uniform(0.0, p.height);
    el.cc = rng.uniform(0.0, p.width);
    el.ar = rng.uniform(0.08, 0.25) * scale;
    el.ac = rng.uniform(0.08, 0.25) * scale;
    el.rot = rng.uniform(0.0, std::numbers::pi);
  }
  std::vector<int> region(static_cast<std::size_t>(p.height) * p.width, 0);
  for (int i = n - 1; i >= 0; --i) {
    const auto& el = e[static_cast<std::size_t>(i)];
    const double cs = std::cos(el.rot), sn = std::sin(el.rot);
    for (int r = 0; r < p.height; ++r) {
      for (int c = 0; c < p.width; ++c) {
        const double dr = r + 0.5 - el.cr, dc = c + 0.5 - el.cc;
        const double u = (cs * dr + sn * dc) / el.ar;
        const double v = (-sn * dr + cs * dc) / el.ac;
        if (u * u + v * v <= 1.0) region[static_cast<std::size_t>(r) * p.width + c] = i + 1;
      }
    }
  }
  return region;
}

}  // namespace

void SceneParams::validate() const {
  if (k < 2 || k > 254) throw ParameterError("class count must be in [2, 254]");
  if (height < 16 || width < 16) throw ParameterError("scene must be at least 16x16");
  if (regions < k) throw ParameterError("need at least one region per class");
  if (noise < 0 || texture < 0 || illumination < 0 || illumination >= 1 || warp < 0)
    throw ParameterError("noise, texture, warp must be >= 0 and illumination in [0, 1)");
  if (overlap < 0 || overlap > 1) throw ParameterError("overlap must be in [0, 1]");
  if (imbalance < 0) throw ParameterError("imbalance exponent must be >= 0");
}

nlohmann::json to_json(const SceneParams& p) {
  return {{"k", p.k},
          {"height", p.height},
          {"width", p.width},
          {"style", p.style == SceneStyle::VORONOI ? "voronoi" : "blobs"},
          {"regions", p.regions},
          {"noise", p.noise},
          {"overlap", p.overlap},
          {"texture", p.texture},
          {"illumination", p.illumination},
          {"imbalance", p.imbalance},
          {"warp", p.warp},
          {"palette_seed", p.palette_seed}};
}

SceneParams scene_params_from_json(const nlohmann::json& j) {
  SceneParams p;
  p.k = j.value("k", p.k);
  p.height = j.value("height", p.height);
  p.width = j.value("width", p.width);
  const std::string style = j.value("style", std::string("voronoi"));
  if (style == "voronoi") {
    p.style = SceneStyle::VORONOI;
  } else if (style == "blobs") {
    p.style = SceneStyle::BLOBS;
  } else {
    throw ParameterError("unknown scene style '" + style + "'");
  }
  p.regions = j.value("regions", p.regions);
  p.noise = j.value("noise", p.noise);
  p.overlap = j.value("overlap", p.overlap);
  p.texture = j.value("texture", p.texture);
  p.illumination = j.value("illumination", p.illumination);
  p.imbalance = j.value("imbalance", p.imbalance);
  p.warp = j.value("warp", p.warp);
  p.palette_seed = j.value("palette_seed", p.palette_seed);
  p.validate();
  return p;
}

std::vector<Rgb> class_prototypes(const SceneParams& p) {
  Rng rng(mix_seed(p.palette_seed, 0xc0105));
  std::vector<Rgb> protos;
  // Rejection sampling for spread-out colors; the spacing target shrinks if K is large.
  double min_gap = 0.45;
  while (static_cast<int>(protos.size()) < p.k) {
    bool placed = false;
    for (int attempt = 0; attempt < 400 && !placed; ++attempt) {
      Rgb cand{static_cast<float>(rng.uniform(0.1, 0.9)), static_cast<float>(rng.uniform(0.1, 0.9)),
               static_cast<float>(rng.uniform(0.1, 0.9))};
      bool ok = true;
      for (const auto& q : protos) {
        double d2 = 0;
        for (int ch = 0; ch < 3; ++ch) d2 += (cand[ch] - q[ch]) * (cand[ch] - q[ch]);
        if (d2 < min_gap * min_gap) ok = false;
      }
      if (ok) {
        protos.push_back(cand);
        placed = true;
      }
    }
    if (!placed) min_gap *= 0.8;
  }
  for (auto& q : protos)
    for (auto& v : q) v = quantise(0.5 + (1.0 - p.overlap) * (v - 0.5));
  return protos;
}

Sample generate_scene(std::uint64_t seed, const SceneParams& params, const std::string& id) {
  params.validate();
  const SceneParams& p = params;
  Rng layout(mix_seed(seed, 1));
  Rng colour(mix_seed(seed, 2));

  const std::vector<int> region =
      p.style == SceneStyle::VORONOI ? voronoi_regions(p, layout) : blob_regions(p, layout);
  const int n_regions = p.style == SceneStyle::VORONOI ? p.regions : p.regions + 1;

  std::vector<int> perm(static_cast<std::size_t>(p.k));
  for (int c = 0; c < p.k; ++c) perm[c] = c;
  layout.shuffle(perm);
  const auto weights = class_weights(p);
  std::vector<int> region_class(static_cast<std::size_t>(n_regions));
  // For blobs the background is region 0; the permuted classes go to the
  // topmost ellipses, which are regions 1..K.
  const int first = p.style == SceneStyle::VORONOI ? 0 : 1;
  for (int i = 0; i < n_regions; ++i) {
    const int slot = i - first;
    region_class[i] = (slot >= 0 && slot < p.k) ? perm[slot] : layout.categorical(weights);
  }

  const auto protos = class_prototypes(p);
  const auto textures = class_textures(p);
  const double gain = 1.0 + p.illumination * colour.uniform(-1.0, 1.0);
  const double phase = colour.uniform(0.0, 2 * std::numbers::pi);

  Sample s;
  s.id = id.empty() ? "scene_" + std::to_string(seed) : id;
  s.image = numkit::Tensor({3, p.height, p.width});
  LabelMap labels(p.height, p.width, 0);
  for (int r = 0; r < p.height; ++r) {
    for (int c = 0; c < p.width; ++c) {
      const std::size_t idx = static_cast<std::size_t>(r) * p.width + c;
      const int cls = region_class[region[idx]];
      labels.ids[idx] = static_cast<std::uint8_t>(cls);
      const auto& tex = textures[cls];
      const double u = (r * std::cos(tex.angle) + c * std::sin(tex.angle)) / p.height;
      const double t = p.texture * std::sin(2 * std::numbers::pi * tex.freq * u + phase);
      for (int ch = 0; ch < 3; ++ch) {
        const double n = p.noise > 0 ? p.noise * colour.normal() : 0.0;
        s.image.at(ch, r, c) = quantise(gain * protos[cls][ch] + t + n);
      }
    }
  }
  s.label = std::move(labels);
  return s;
}

std::vector<std::size_t> class_histogram(const LabelMap& labels, int k) {
  std::vector<std::size_t> h(static_cast<std::size_t>(k), 0);
  for (auto id : labels.ids)
    if (id != kIgnore && id < k) ++h[id];
  return h;
}

}  // namespace plarseg::synth
