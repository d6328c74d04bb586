#include "plarseg/eval/metrics.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "plarseg/numkit/ops.hpp"

namespace plarseg::eval {

ConfusionMatrix::ConfusionMatrix(int k) : k_(k), counts_(static_cast<std::size_t>(k) * k, 0) {
  if (k < 0) throw std::invalid_argument("class count must be non-negative");
}

void ConfusionMatrix::add(int truth, int pred) {
  if (truth == synth::kIgnore) return;
  if (truth < 0 || truth >= k_ || pred < 0 || pred >= k_)
    throw std::out_of_range("class id outside confusion matrix");
  ++counts_[static_cast<std::size_t>(truth) * k_ + pred];
}

void ConfusionMatrix::add(std::span<const std::uint8_t> truth, std::span<const std::uint8_t> pred) {
  if (truth.size() != pred.size()) throw numkit::DimensionError("truth and prediction differ in size");
  for (std::size_t i = 0; i < truth.size(); ++i) add(truth[i], pred[i]);
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.k_ != k_) throw numkit::DimensionError("confusion matrices differ in class count");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::int64_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::int64_t{0}); }

IouResult iou(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw std::invalid_argument("iou of an empty evaluation set");
  const int k = cm.num_classes();
  IouResult r;
  r.per_class.assign(static_cast<std::size_t>(k), std::numeric_limits<double>::quiet_NaN());
  r.zero_union.assign(static_cast<std::size_t>(k), false);
  double sum = 0.0;
  for (int c = 0; c < k; ++c) {
    std::int64_t tp = cm.at(c, c), fp = 0, fn = 0;
    for (int o = 0; o < k; ++o) {
      if (o == c) continue;
      fp += cm.at(o, c);
      fn += cm.at(c, o);
    }
    const std::int64_t uni = tp + fp + fn;
    if (uni == 0) {
      r.zero_union[static_cast<std::size_t>(c)] = true;
      continue;
    }
    const double v = static_cast<double>(tp) / static_cast<double>(uni);
    r.per_class[static_cast<std::size_t>(c)] = v;
    sum += v;
    ++r.counted;
  }
  r.miou = r.counted > 0 ? sum / r.counted : 0.0;
  return r;
}

nlohmann::json to_json(const IouResult& r) {
  nlohmann::json per = nlohmann::json::array();
  nlohmann::json excluded = nlohmann::json::array();
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    per.push_back(r.zero_union[c] ? nlohmann::json(nullptr) : nlohmann::json(r.per_class[c]));
    if (r.zero_union[c]) excluded.push_back(c);
  }
  return {{"miou", r.miou}, {"per_class", per}, {"zero_union", excluded}, {"counted", r.counted}};
}

ConfusionMatrix evaluate_model(const tsf::SegModel& model, const std::vector<const synth::Sample*>& samples) {
  numkit::NoGradGuard guard;
  ConfusionMatrix cm(model.config().num_classes);
  for (const synth::Sample* s : samples) {
    if (!s->label) throw std::invalid_argument("evaluation sample '" + s->id + "' has no label");
    const auto out = model.forward(s->image);
    cm.add(s->label->ids, numkit::argmax_channels(out.logits));
  }
  return cm;
}

void PseudoLabelTally::add(const tsf::PseudoLabelMap& before, const tsf::PseudoLabelMap& after,
                           const synth::LabelMap& gt) {
  if (before.size() != gt.ids.size() || after.size() != gt.ids.size())
    throw numkit::DimensionError("pseudo-label maps and ground truth differ in size");
  for (std::size_t i = 0; i < gt.ids.size(); ++i) {
    const std::uint8_t t = gt.ids[i];
    if (t == synth::kIgnore) continue;
    ++valid_;
    correct_before_ += before.cls[i] == t;
    correct_after_ += after.cls[i] == t;
    if (before.cls[i] != after.cls[i]) {
      ++changed_;
      changed_correct_ += after.cls[i] == t;
    }
    if (after.prov[i] == tsf::Provenance::PLAR_AUTO) {
      ++auto_;
      auto_correct_ += after.cls[i] == t;
      auto_before_correct_ += before.cls[i] == t;
    } else if (after.prov[i] == tsf::Provenance::MANUAL) {
      ++manual_;
    }
  }
}

PseudoLabelMetrics PseudoLabelTally::result() const {
  PseudoLabelMetrics m;
  m.pixels = valid_;
  m.changed = changed_;
  m.auto_pixels = auto_;
  m.manual_pixels = manual_;
  if (valid_ == 0) return m;
  const auto v = static_cast<double>(valid_);
  m.accuracy_before = correct_before_ / v;
  m.accuracy_after = correct_after_ / v;
  m.auto_fraction = auto_ / v;
  m.manual_fraction = manual_ / v;
  if (changed_ > 0) m.corrected_pixel_accuracy = static_cast<double>(changed_correct_) / changed_;
  if (auto_ > 0) {
    m.auto_precision = static_cast<double>(auto_correct_) / auto_;
    m.auto_baseline_accuracy = static_cast<double>(auto_before_correct_) / auto_;
  }
  return m;
}

PseudoLabelMetrics pseudo_label_metrics(const tsf::PseudoLabelMap& before, const tsf::PseudoLabelMap& after,
                                        const synth::LabelMap& gt) {
  PseudoLabelTally t;
  t.add(before, after, gt);
  return t.result();
}

MaskQuality mask_quality(const errmap::ErrorMask& predicted, const errmap::ErrorMask& truth,
                         const std::vector<std::uint8_t>& valid) {
  if (predicted.flags.size() != truth.flags.size()) throw numkit::DimensionError("masks differ in size");
  std::int64_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < truth.flags.size(); ++i) {
    if (!valid.empty() && !valid[i]) continue;
    const bool p = predicted.flags[i], t = truth.flags[i];
    tp += p && t;
    fp += p && !t;
    fn += !p && t;
  }
  MaskQuality q;
  if (tp + fp > 0) q.precision = static_cast<double>(tp) / (tp + fp);
  if (tp + fn > 0) q.recall = static_cast<double>(tp) / (tp + fn);
  return q;
}

}  // namespace plarseg::eval
