#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "plarseg/numkit/tensor.hpp"
#include "plarseg/synth/sample.hpp"

namespace plarseg::plar {

enum class Level { F1, F2 };

// What a class's statistics support. FULL needs n + 1 samples, DIAGONAL at
// least kDiagonalMinCount; below that only the mean is usable.
enum class CovKind { ABSENT, MEAN_ONLY, DIAGONAL, FULL };

inline constexpr std::int64_t kDiagonalMinCount = 8;

struct ClassStats {
  std::int64_t count = 0;
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;      // population covariance
  Eigen::MatrixXd inverse;  // (C + eps I)^-1, or its diagonal analogue
  double eps = 0.0;
  CovKind kind = CovKind::ABSENT;

  bool euclid_ready() const { return kind != CovKind::ABSENT; }
  bool maha_ready() const { return kind == CovKind::DIAGONAL || kind == CovKind::FULL; }
};

struct LevelStats {
  Level level = Level::F1;
  int dims = 0;
  std::vector<ClassStats> classes;  // indexed by class id

  int num_classes() const { return static_cast<int>(classes.size()); }
  int euclid_count() const;
  int maha_count() const;
};

// eps = max(1e-6, 1e-3 * trace(C) / n)
double regularisation_eps(const Eigen::MatrixXd& cov);

// Finalises statistics from raw sums.
ClassStats make_class_stats(std::int64_t count, const Eigen::VectorXd& sum, const Eigen::MatrixXd& outer_sum);

// Running first and second moments per class, in double precision.
class StatsAccumulator {
 public:
  StatsAccumulator() = default;
  StatsAccumulator(int num_classes, int dims);

  void add(int cls, std::span<const float> feature);
  void add(int cls, const Eigen::VectorXd& feature);
  void merge(const StatsAccumulator& other);
  void clear();
  LevelStats finalize(Level level) const;

  int num_classes() const { return static_cast<int>(count_.size()); }
  int dims() const { return dims_; }
  std::int64_t count(int cls) const { return count_[static_cast<std::size_t>(cls)]; }

 private:
  int dims_ = 0;
  std::vector<std::int64_t> count_;
  std::vector<Eigen::VectorXd> sum_;
  std::vector<Eigen::MatrixXd> outer_;
};

// Feature vector (C) at cell (r, c) of a C x h x w tensor.
Eigen::VectorXd feature_at(const numkit::Tensor& feature, int r, int c);

// Feature cell that a label-map cell (r, c) falls into, using the nearest
// neighbour rule (label map at equal or finer resolution than the feature).
inline int feature_index(int i, int label_size, int feature_size) {
  return static_cast<int>(static_cast<long>(i) * feature_size / label_size);
}

// Accumulates every labelled cell (value != ignore) of `labels` using the
// feature vector of the cell it falls into.
void accumulate_stats(StatsAccumulator& acc, const numkit::Tensor& feature, const synth::LabelMap& labels);

LevelStats collect_stats(const numkit::Tensor& feature, const synth::LabelMap& labels, int num_classes, Level level);

// Per class: own statistics when they have at least min_count samples,
// otherwise the bank's.
LevelStats merge_with_bank(const LevelStats& own, const LevelStats& bank, std::int64_t min_count = kDiagonalMinCount);

}  // namespace plarseg::plar
