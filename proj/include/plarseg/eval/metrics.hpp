#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "plarseg/errmap/error_mask.hpp"
#include "plarseg/synth/sample.hpp"
#include "plarseg/tsf/model.hpp"
#include "plarseg/tsf/pseudo_label.hpp"

namespace plarseg::eval {

// K x K counts, rows = ground truth, columns = prediction. Pixels whose truth
// is the ignore id are skipped.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes = 0);

  void add(std::span<const std::uint8_t> truth, std::span<const std::uint8_t> pred);
  void add(int truth, int pred);
  void merge(const ConfusionMatrix& other);

  int num_classes() const { return k_; }
  std::int64_t at(int truth, int pred) const { return counts_[static_cast<std::size_t>(truth) * k_ + pred]; }
  std::int64_t total() const;

 private:
  int k_ = 0;
  std::vector<std::int64_t> counts_;
};

struct IouResult {
  std::vector<double> per_class;     // NaN where the union is empty
  std::vector<bool> zero_union;      // classes excluded from the mean
  double miou = 0.0;
  int counted = 0;                   // classes in the mean
};

// Throws std::invalid_argument on an empty matrix.
IouResult iou(const ConfusionMatrix& cm);

nlohmann::json to_json(const IouResult& r);

// Teacher (or any model) inference over a split.
ConfusionMatrix evaluate_model(const tsf::SegModel& model, const std::vector<const synth::Sample*>& samples);

struct PseudoLabelMetrics {
  double accuracy_before = 0.0;
  double accuracy_after = 0.0;
  std::optional<double> corrected_pixel_accuracy;  // over pixels whose class changed
  std::optional<double> auto_precision;            // over PLAR_AUTO pixels
  std::optional<double> auto_baseline_accuracy;    // the unrefined map on those same pixels
  double auto_fraction = 0.0;
  double manual_fraction = 0.0;
  std::int64_t pixels = 0;
  std::int64_t changed = 0;
  std::int64_t auto_pixels = 0;
  std::int64_t manual_pixels = 0;
};

// Accumulates pseudo-label quality over several images.
class PseudoLabelTally {
 public:
  void add(const tsf::PseudoLabelMap& before, const tsf::PseudoLabelMap& after, const synth::LabelMap& gt);
  PseudoLabelMetrics result() const;

 private:
  std::int64_t valid_ = 0, correct_before_ = 0, correct_after_ = 0;
  std::int64_t changed_ = 0, changed_correct_ = 0;
  std::int64_t auto_ = 0, auto_correct_ = 0, auto_before_correct_ = 0, manual_ = 0;
};

PseudoLabelMetrics pseudo_label_metrics(const tsf::PseudoLabelMap& before, const tsf::PseudoLabelMap& after,
                                        const synth::LabelMap& gt);

struct MaskQuality {
  std::optional<double> precision;
  std::optional<double> recall;
};

MaskQuality mask_quality(const errmap::ErrorMask& predicted, const errmap::ErrorMask& truth,
                         const std::vector<std::uint8_t>& valid = {});

}  // namespace plarseg::eval
