#include "plarseg/tsf/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "plarseg/augment/mix.hpp"
#include "plarseg/numkit/ops.hpp"
#include "plarseg/numkit/rng.hpp"
#include "plarseg/tsf/losses.hpp"

namespace plarseg::tsf {

namespace nk = plarseg::numkit;
using synth::Sample;

double unsup_ramp(int iter, int rampup) {
  if (rampup <= 0) return 1.0;
  const double t = std::clamp(static_cast<double>(iter) / rampup, 0.0, 1.0);
  return std::exp(-5.0 * (1.0 - t) * (1.0 - t));
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"ema_alpha", c.ema_alpha},
          {"w_sup", c.w_sup},
          {"w_t", c.w_t},
          {"w_f", c.w_f},
          {"use_friend", c.use_friend},
          {"unsupervised", c.unsupervised},
          {"unsup_rampup_iters", c.unsup_rampup_iters},
          {"cutmix_ratio", c.cutmix_ratio},
          {"copy_paste_prob", c.copy_paste_prob},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"grad_clip", c.grad_clip},
          {"lr", c.schedule.initial_lr},
          {"power", c.schedule.power},
          {"max_iter", c.schedule.max_iter},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.batch_size = j.value("batch_size", c.batch_size);
  c.ema_alpha = j.value("ema_alpha", c.ema_alpha);
  c.w_sup = j.value("w_sup", c.w_sup);
  c.w_t = j.value("w_t", c.w_t);
  c.w_f = j.value("w_f", c.w_f);
  c.use_friend = j.value("use_friend", c.use_friend);
  c.unsupervised = j.value("unsupervised", c.unsupervised);
  c.unsup_rampup_iters = j.value("unsup_rampup_iters", c.unsup_rampup_iters);
  c.cutmix_ratio = j.value("cutmix_ratio", c.cutmix_ratio);
  c.copy_paste_prob = j.value("copy_paste_prob", c.copy_paste_prob);
  c.momentum = j.value("momentum", c.momentum);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.schedule.initial_lr = j.value("lr", c.schedule.initial_lr);
  c.schedule.power = j.value("power", c.schedule.power);
  c.schedule.max_iter = j.value("max_iter", c.schedule.max_iter);
  c.seed = j.value("seed", c.seed);
  if (c.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  return c;
}

PseudoLabelMap TeacherArgmaxSource::refine(const Sample&, const SegOutput& teacher_out, int) {
  return pseudo_labels_from_logits(teacher_out.logits);
}

namespace {

std::uint64_t stream_seed(std::uint64_t seed, int iter, std::uint64_t tag) {
  return nk::mix_seed(nk::mix_seed(seed, static_cast<std::uint64_t>(iter)), tag);
}

PseudoLabelMap mix_pseudo(const PseudoLabelMap& a, const PseudoLabelMap& b, const augment::Box& box) {
  PseudoLabelMap out;
  out.height = a.height;
  out.width = a.width;
  out.cls = augment::mix_map(a.cls, b.cls, box, a.width);
  out.conf = augment::mix_map(a.conf, b.conf, box, a.width);
  out.prov = augment::mix_map(a.prov, b.prov, box, a.width);
  return out;
}

std::string batch_ids(const std::vector<const Sample*>& l, const std::vector<const Sample*>& u) {
  std::ostringstream os;
  os << "labelled [";
  for (std::size_t i = 0; i < l.size(); ++i) os << (i ? " " : "") << l[i]->id;
  os << "] unlabelled [";
  for (std::size_t i = 0; i < u.size(); ++i) os << (i ? " " : "") << u[i]->id;
  os << "]";
  return os.str();
}

}  // namespace

LossBreakdown train_step(const std::vector<const Sample*>& labelled, const std::vector<const Sample*>& unlabelled,
                         ModelTriplet& triplet, Optimizers& opt, const TrainConfig& cfg, PseudoLabelSource* source,
                         const std::vector<double>& class_weights, int iter) {
  if (labelled.empty()) throw std::invalid_argument("train_step: empty labelled batch");
  if (cfg.unsupervised && unlabelled.empty()) throw std::invalid_argument("train_step: empty unlabelled batch");
  TeacherArgmaxSource plain;
  if (!source) source = &plain;

  LossBreakdown out;
  out.iter = iter;
  try {
    // Unlabelled branch: refined teacher maps, then CutMix with a shared box.
    std::vector<nk::Tensor> mixed_images;
    std::vector<PseudoLabelMap> mixed_maps;
    if (cfg.unsupervised) {
      std::vector<PseudoLabelMap> refined;
      {
        nk::NoGradGuard no_grad;
        for (const Sample* u : unlabelled) refined.push_back(source->refine(*u, triplet.teacher.forward(u->image), iter));
      }
      const std::size_t b = unlabelled.size();
      for (std::size_t i = 0; i < b; ++i) {
        const std::size_t j = (i + 1) % b;
        const auto mix = augment::cutmix(unlabelled[i]->image, unlabelled[j]->image, cfg.cutmix_ratio,
                                         stream_seed(cfg.seed, iter, 100 + i));
        mixed_images.push_back(mix.image);
        mixed_maps.push_back(mix_pseudo(refined[i], refined[j], mix.box));
      }
    }

    // Labelled branch: class-weighted copy-paste between batch members.
    std::vector<Sample> lab_aug;
    nk::Rng lab_rng(stream_seed(cfg.seed, iter, 1));
    for (std::size_t i = 0; i < labelled.size(); ++i) {
      const Sample& dst = *labelled[i];
      const Sample& src = *labelled[(i + 1) % labelled.size()];
      const bool paste = labelled.size() > 1 && lab_rng.uniform() < cfg.copy_paste_prob;
      const std::uint64_t paste_seed = lab_rng.next_u64();
      lab_aug.push_back(paste ? augment::copy_paste(dst, src, class_weights, paste_seed).sample : dst);
    }

    nk::zero_grads(triplet.student.params());
    if (cfg.use_friend) nk::zero_grads(triplet.friend_model.params());

    const float inv_l = 1.0f / static_cast<float>(lab_aug.size());
    std::vector<nk::Tensor> sup_terms;
    std::vector<float> sup_w;
    for (const Sample& s : lab_aug) {
      sup_terms.push_back(supervised_loss(triplet.student.forward(s.image).logits, *s.label));
      sup_w.push_back(inv_l);
      if (cfg.use_friend) {
        sup_terms.push_back(supervised_loss(triplet.friend_model.forward(s.image).logits, *s.label));
        sup_w.push_back(inv_l);
      }
    }
    const nk::Tensor l_sup = nk::weighted_sum(sup_terms, sup_w);

    nk::Tensor l_t = nk::Tensor::scalar(0.0f);
    nk::Tensor l_f = nk::Tensor::scalar(0.0f);
    if (cfg.unsupervised) {
      const float inv_u = 1.0f / static_cast<float>(mixed_images.size());
      std::vector<nk::Tensor> t_terms, f_terms;
      std::vector<float> u_w;
      bool all_ignored = true;
      for (std::size_t i = 0; i < mixed_images.size(); ++i) {
        const nk::Tensor rs = triplet.student.forward(mixed_images[i]).logits;
        nk::LossDiagnostics diag;
        t_terms.push_back(teacher_pseudo_loss(rs, mixed_maps[i], &diag));
        all_ignored = all_ignored && diag.all_ignored;
        if (cfg.use_friend) f_terms.push_back(cps_loss(rs, triplet.friend_model.forward(mixed_images[i]).logits));
        u_w.push_back(inv_u);
      }
      out.all_ignored = all_ignored;
      l_t = nk::weighted_sum(t_terms, u_w);
      if (cfg.use_friend) l_f = nk::weighted_sum(f_terms, u_w);
    }

    const auto ramp = static_cast<float>(unsup_ramp(iter, cfg.unsup_rampup_iters));
    const float w_t = cfg.w_t * ramp, w_f = cfg.w_f * ramp;
    const nk::Tensor total = nk::weighted_sum({l_sup, l_t, l_f}, {cfg.w_sup, w_t, w_f});
    nk::backward(total);

    out.l_sup = static_cast<double>(cfg.w_sup) * l_sup.item_wide();
    out.l_t = static_cast<double>(w_t) * l_t.item_wide();
    out.l_f = static_cast<double>(w_f) * l_f.item_wide();
    out.total = total.item_wide();
    if (!std::isfinite(out.total)) throw nk::NonFiniteError("total loss is not finite");

    nk::clip_grad_norm(triplet.student.params(), cfg.grad_clip);
    out.lr = opt.student.step(triplet.student.params(), iter);
    if (cfg.use_friend) {
      nk::clip_grad_norm(triplet.friend_model.params(), cfg.grad_clip);
      opt.friend_model.step(triplet.friend_model.params(), iter);
    }
    nk::ema_update(triplet.teacher.params(), triplet.student.params(), cfg.ema_alpha);
  } catch (const nk::NonFiniteError& e) {
    throw TrainingAborted("non-finite value at iteration " + std::to_string(iter) + " (" + e.what() +
                          "); batch " + batch_ids(labelled, unlabelled));
  }
  return out;
}

TsfTrainer::TsfTrainer(TrainConfig cfg, ModelTriplet triplet, std::vector<const Sample*> labelled,
                       std::vector<const Sample*> unlabelled)
    : cfg_(cfg), triplet_(std::move(triplet)), opt_(cfg_), labelled_(std::move(labelled)), unlabelled_(std::move(unlabelled)) {
  if (labelled_.empty()) throw std::invalid_argument("TsfTrainer: labelled pool is empty");
  if (cfg_.unsupervised && unlabelled_.empty()) throw std::invalid_argument("TsfTrainer: unlabelled pool is empty");
  std::vector<const synth::LabelMap*> maps;
  for (const auto* s : labelled_) maps.push_back(&*s->label);
  class_weights_ = augment::inverse_frequency_weights(maps, triplet_.student.config().num_classes);
}

std::vector<const Sample*> TsfTrainer::labelled_batch(int iter) const {
  nk::Rng rng(stream_seed(cfg_.seed, iter, 11));
  std::vector<const Sample*> b;
  for (int i = 0; i < cfg_.batch_size; ++i)
    b.push_back(labelled_[static_cast<std::size_t>(rng.randint(0, static_cast<std::int64_t>(labelled_.size()) - 1))]);
  return b;
}

std::vector<const Sample*> TsfTrainer::unlabelled_batch(int iter) const {
  if (!cfg_.unsupervised) return {};
  nk::Rng rng(stream_seed(cfg_.seed, iter, 12));
  std::vector<const Sample*> b;
  for (int i = 0; i < cfg_.batch_size; ++i)
    b.push_back(
        unlabelled_[static_cast<std::size_t>(rng.randint(0, static_cast<std::int64_t>(unlabelled_.size()) - 1))]);
  return b;
}

LossBreakdown TsfTrainer::step(int iter, PseudoLabelSource* source) {
  return train_step(labelled_batch(iter), unlabelled_batch(iter), triplet_, opt_, cfg_, source, class_weights_, iter);
}

}  // namespace plarseg::tsf
