#include "plarseg/plar/weight_module.hpp"

#include <algorithm>
#include <cmath>

#include "plarseg/errmap/emd.hpp"
#include "plarseg/errmap/error_mask.hpp"
#include "plarseg/numkit/ops.hpp"
#include "plarseg/plar/distance.hpp"

namespace plarseg::plar {

namespace nk = plarseg::numkit;

WeightModule WeightModule::create(int f1_channels, int f2_channels, int hidden, std::uint64_t seed) {
  if (f1_channels <= 0 || f2_channels <= 0 || hidden <= 0)
    throw nk::DimensionError("WeightModule: sizes must be positive");
  WeightModule m;
  nk::Rng rng(nk::mix_seed(seed, 0x3e1));
  const int in = f1_channels + f2_channels;
  m.params_.push_back({"wm.fc1.w", nk::kaiming_normal({hidden, in}, in, rng)});
  m.params_.push_back({"wm.fc1.b", nk::Tensor({hidden}, 0.0f, true)});
  // Small output layer so the untrained module starts near 0.5 / 0.5.
  nk::Tensor w2({2, hidden}, 0.0f, true);
  for (float& v : w2.data()) v = static_cast<float>(0.01 * rng.normal());
  m.params_.push_back({"wm.fc2.w", w2});
  m.params_.push_back({"wm.fc2.b", nk::Tensor({2}, 0.0f, true)});
  return m;
}

WeightModule WeightModule::frozen_half() {
  WeightModule m;
  m.frozen_ = true;
  return m;
}

nk::Tensor WeightModule::forward(const nk::Tensor& f1, const nk::Tensor& f2) const {
  if (frozen_) return nk::Tensor({2}, 0.5f);
  const int c1 = f1.dim(0), c2 = f2.dim(0);
  nk::Tensor pooled = nk::concat_channels({nk::global_avg_pool(f1.detach()), nk::global_avg_pool(f2.detach())});
  pooled = nk::reshape(pooled, {c1 + c2});
  const auto& p = params_;
  nk::Tensor h = nk::relu(nk::linear(pooled, p[0].tensor, p[1].tensor));
  return nk::sigmoid(nk::linear(h, p[2].tensor, p[3].tensor));
}

Lambdas WeightModule::lambdas(const nk::Tensor& f1, const nk::Tensor& f2) const {
  nk::NoGradGuard guard;
  const nk::Tensor out = forward(f1, f2);
  auto d = out.data();
  return {d[0], d[1]};
}

WeightTrainer::WeightTrainer(WeightModule& module, const WeightTrainConfig& cfg)
    : module_(&module), cfg_(cfg), opt_(nk::PolySchedule{cfg.lr, cfg.max_iter, 0.9}, cfg.momentum) {
  if (cfg.temperature <= 0.0) throw std::invalid_argument("softmin temperature must be positive");
}

namespace {

// Distances of the masked cells, K x 1 x P per level, with the one-level
// fallback applied and unreachable classes pushed far away.
struct DistanceBlock {
  nk::Tensor e1, e2, m1, m2;
  std::vector<std::uint8_t> targets;
};

DistanceBlock build_block(const nk::Tensor& f1, const nk::Tensor& f2, const LevelStats& s1, const LevelStats& s2,
                          const std::vector<std::size_t>& cells, const synth::LabelMap& grid_gt) {
  const int k = s1.num_classes();
  const int gh = grid_gt.height, gw = grid_gt.width;
  const auto p = static_cast<int>(cells.size());
  std::vector<float> e1(static_cast<std::size_t>(k) * p), e2(e1.size()), m1(e1.size()), m2(e1.size());
  DistanceBlock b;
  b.targets.reserve(cells.size());
  double far = 0.0;
  for (int j = 0; j < p; ++j) {
    const int r = static_cast<int>(cells[static_cast<std::size_t>(j)] / gw);
    const int c = static_cast<int>(cells[static_cast<std::size_t>(j)] % gw);
    const Eigen::VectorXd v1 =
        feature_at(f1, feature_index(r, gh, f1.dim(1)), feature_index(c, gw, f1.dim(2)));
    const Eigen::VectorXd v2 = feature_at(f2, feature_index(r, gh, f2.dim(1)), feature_index(c, gw, f2.dim(2)));
    b.targets.push_back(grid_gt.at(r, c));
    for (int cls = 0; cls < k; ++cls) {
      const auto& a1 = s1.classes[static_cast<std::size_t>(cls)];
      const auto& a2 = s2.classes[static_cast<std::size_t>(cls)];
      double de1 = euclid_distance(v1, a1), de2 = euclid_distance(v2, a2);
      double dm1 = maha_distance(v1, a1), dm2 = maha_distance(v2, a2);
      if (!std::isfinite(de1)) de1 = de2;
      if (!std::isfinite(de2)) de2 = de1;
      if (!std::isfinite(dm1)) dm1 = dm2;
      if (!std::isfinite(dm2)) dm2 = dm1;
      const std::size_t i = static_cast<std::size_t>(cls) * p + j;
      e1[i] = static_cast<float>(de1);
      e2[i] = static_cast<float>(de2);
      m1[i] = static_cast<float>(dm1);
      m2[i] = static_cast<float>(dm2);
      for (double d : {de1, dm1})
        if (std::isfinite(d)) far = std::max(far, d);
    }
  }
  const auto cap = static_cast<float>(far + 30.0);
  for (auto* v : {&e1, &e2, &m1, &m2})
    for (float& x : *v)
      if (!std::isfinite(x)) x = cap;
  b.e1 = nk::Tensor({k, 1, p}, std::move(e1));
  b.e2 = nk::Tensor({k, 1, p}, std::move(e2));
  b.m1 = nk::Tensor({k, 1, p}, std::move(m1));
  b.m2 = nk::Tensor({k, 1, p}, std::move(m2));
  return b;
}

}  // namespace

std::optional<WeightStepResult> WeightTrainer::step(const tsf::SegOutput& t, const synth::LabelMap& gt, int iter) {
  if (module_->frozen()) return std::nullopt;
  const nk::Tensor f1 = t.f1.detach(), f2 = t.f2.detach();
  const int gh = t.logits_grid.dim(1), gw = t.logits_grid.dim(2);
  const int k = t.logits_grid.dim(0);
  const synth::LabelMap grid_gt = synth::resize_labels(gt, gh, gw);

  const errmap::ErrorMask conf = errmap::confidence_error_map(nk::softmax_channels(t.logits_grid.detach()), cfg_.conf_tau);
  const errmap::ErrorMask truth = errmap::true_error_map(errmap::grid_pseudo_labels(t), grid_gt);
  const errmap::ErrorMask mask = errmap::fuse(conf, truth);

  synth::LabelMap known = grid_gt;
  std::vector<std::size_t> held_out;
  for (std::size_t i = 0; i < known.ids.size(); ++i) {
    if (known.ids[i] == synth::kIgnore || !mask.flags[i]) continue;
    known.ids[i] = synth::kIgnore;
    held_out.push_back(i);
  }
  if (held_out.empty()) return std::nullopt;

  const LevelStats s1 = collect_stats(f1, known, k, Level::F1);
  const LevelStats s2 = collect_stats(f2, known, k, Level::F2);
  if (s1.euclid_count() < 2 && s2.euclid_count() < 2) return std::nullopt;

  const DistanceBlock b = build_block(f1, f2, s1, s2, held_out, grid_gt);
  const nk::Tensor lam = module_->forward(f1, f2);
  const auto inv_t = static_cast<float>(-1.0 / cfg_.temperature);
  const nk::Tensor score_e = nk::scale(nk::lerp(nk::select(lam, 0), b.e1, b.e2), inv_t);
  const nk::Tensor score_m = nk::scale(nk::lerp(nk::select(lam, 1), b.m1, b.m2), inv_t);
  const nk::Tensor ce_e = nk::softmax_cross_entropy_masked(score_e, b.targets);
  const nk::Tensor ce_m = nk::softmax_cross_entropy_masked(score_m, b.targets);
  const nk::Tensor loss = nk::add(ce_e, ce_m);

  nk::zero_grads(module_->params());
  nk::backward(loss);
  opt_.step(module_->params(), iter);
  return WeightStepResult{ce_e.item_wide(), ce_m.item_wide(), held_out.size()};
}

}  // namespace plarseg::plar
