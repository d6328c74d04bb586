#include "plarseg/errmap/emd.hpp"

#include <algorithm>
#include <numeric>

#include "plarseg/errmap/error_mask.hpp"
#include "plarseg/numkit/ops.hpp"
#include "plarseg/numkit/rng.hpp"

namespace plarseg::errmap {

namespace nk = plarseg::numkit;

EmdNet EmdNet::create(int in_channels, int hidden, std::uint64_t seed) {
  if (in_channels <= 0 || hidden <= 0) throw nk::DimensionError("EmdNet: channel counts must be positive");
  EmdNet n;
  n.in_channels_ = in_channels;
  n.hidden_ = hidden;
  nk::Rng rng(nk::mix_seed(seed, 0xe3d));
  auto& p = n.params_;
  p.push_back({"emd.conv1.w", nk::kaiming_normal({hidden, in_channels, 3, 3}, in_channels * 9, rng)});
  p.push_back({"emd.conv1.b", nk::Tensor({hidden}, 0.0f, true)});
  p.push_back({"emd.norm1.g", nk::Tensor({hidden}, 1.0f, true)});
  p.push_back({"emd.norm1.b", nk::Tensor({hidden}, 0.0f, true)});
  p.push_back({"emd.conv2.w", nk::kaiming_normal({hidden, hidden, 3, 3}, hidden * 9, rng)});
  p.push_back({"emd.conv2.b", nk::Tensor({hidden}, 0.0f, true)});
  p.push_back({"emd.norm2.g", nk::Tensor({hidden}, 1.0f, true)});
  p.push_back({"emd.norm2.b", nk::Tensor({hidden}, 0.0f, true)});
  p.push_back({"emd.out.w", nk::kaiming_normal({1, hidden, 1, 1}, hidden, rng)});
  p.push_back({"emd.out.b", nk::Tensor({1}, 0.0f, true)});
  return n;
}

nk::Tensor EmdNet::forward_logits(const nk::Tensor& features) const {
  if (features.rank() != 3 || features.dim(0) != in_channels_)
    throw nk::DimensionError("EmdNet expects " + std::to_string(in_channels_) + " input channels, got " +
                             (features.rank() == 3 ? std::to_string(features.dim(0)) : nk::shape_str(features.shape())));
  const auto& p = params_;
  nk::Tensor x = nk::relu(nk::group_norm(nk::conv2d_same(features, p[0].tensor, p[1].tensor), p[2].tensor, p[3].tensor));
  x = nk::relu(nk::group_norm(nk::conv2d_same(x, p[4].tensor, p[5].tensor), p[6].tensor, p[7].tensor));
  return nk::conv2d_same(x, p[8].tensor, p[9].tensor);
}

nk::Tensor EmdNet::forward(const nk::Tensor& features) const { return nk::sigmoid(forward_logits(features)); }

void EmdNet::zero_output_layer() {
  for (std::size_t i = 8; i < 10; ++i) {
    auto d = params_[i].tensor.data();
    std::fill(d.begin(), d.end(), 0.0f);
  }
}

int emd_input_channels(const tsf::SegModelConfig& cfg) {
  return cfg.f1_channels() + cfg.f2_channels() + cfg.num_classes;
}

nk::Tensor emd_features(const tsf::SegOutput& t) {
  nk::NoGradGuard guard;
  const int h = t.f2.dim(1), w = t.f2.dim(2);
  return nk::concat_channels(
             {nk::resize_nearest(t.f1.detach(), h, w), t.f2.detach(), nk::softmax_channels(t.logits_grid.detach())})
      .detach();
}

std::vector<std::uint8_t> grid_pseudo_labels(const tsf::SegOutput& t) { return nk::argmax_channels(t.logits_grid); }

namespace {

struct Target {
  std::vector<float> y;
  std::vector<std::uint8_t> valid;
};

Target error_target(const tsf::SegOutput& t, const synth::LabelMap& gt) {
  const int h = t.logits_grid.dim(1), w = t.logits_grid.dim(2);
  const synth::LabelMap g = synth::resize_labels(gt, h, w);
  Target out;
  const ErrorMask truth = true_error_map(grid_pseudo_labels(t), g, &out.valid);
  out.y.assign(truth.flags.begin(), truth.flags.end());
  return out;
}

}  // namespace

EmdTrainer::EmdTrainer(EmdNet net, const EmdTrainConfig& cfg)
    : net_(std::move(net)), opt_(nk::PolySchedule{cfg.lr, std::max(1, cfg.max_iter), 0.9}, cfg.momentum) {}

double EmdTrainer::step(const tsf::SegOutput& teacher_out, const synth::LabelMap& gt, int iter) {
  const nk::Tensor feats = emd_features(teacher_out);
  const Target tgt = error_target(teacher_out, gt);
  nk::zero_grads(net_.params());
  const nk::Tensor loss = nk::sigmoid_bce_masked(net_.forward_logits(feats), tgt.y, tgt.valid);
  nk::backward(loss);
  opt_.step(net_.params(), std::min(iter, opt_.schedule().max_iter - 1));
  return loss.item_wide();
}

double EmdTrainer::evaluate(const tsf::SegOutput& teacher_out, const synth::LabelMap& gt) const {
  nk::NoGradGuard guard;
  const Target tgt = error_target(teacher_out, gt);
  return nk::sigmoid_bce_masked(net_.forward_logits(emd_features(teacher_out)), tgt.y, tgt.valid).item_wide();
}

EmdNet emd_train(const std::vector<const synth::Sample*>& labelled, const tsf::SegModel& teacher,
                 const EmdTrainConfig& cfg, int steps, std::uint64_t seed) {
  if (labelled.empty()) throw std::invalid_argument("emd_train: labelled pool is empty");
  EmdTrainConfig c = cfg;
  c.max_iter = std::max(steps, 1);
  EmdTrainer trainer(EmdNet::create(emd_input_channels(teacher.config()), cfg.hidden, seed), c);
  // Teacher outputs are fixed, so compute them once.
  std::vector<tsf::SegOutput> outs;
  {
    nk::NoGradGuard guard;
    for (const auto* s : labelled) outs.push_back(teacher.forward(s->image));
  }
  nk::Rng rng(nk::mix_seed(seed, 0xe3d7));
  for (int it = 0; it < steps; ++it) {
    const auto i = static_cast<std::size_t>(rng.randint(0, static_cast<std::int64_t>(labelled.size()) - 1));
    trainer.step(outs[i], *labelled[i]->label, it);
  }
  return trainer.net();
}

double roc_auc(const std::vector<float>& scores, const std::vector<std::uint8_t>& labels,
               const std::vector<std::uint8_t>& valid) {
  if (scores.size() != labels.size()) throw nk::DimensionError("roc_auc: size mismatch");
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (valid.empty() || valid[i]) idx.push_back(i);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Mann-Whitney U with midranks for ties.
  double rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t)
      if (labels[idx[t]]) {
        rank_sum += mid;
        ++n_pos;
      }
    i = j;
  }
  const std::size_t n_neg = idx.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) return 0.5;
  return (rank_sum - static_cast<double>(n_pos) * (n_pos + 1) / 2.0) / (static_cast<double>(n_pos) * n_neg);
}

}  // namespace plarseg::errmap
