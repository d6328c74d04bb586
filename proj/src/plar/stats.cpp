#include "plarseg/plar/stats.hpp"

#include <algorithm>

namespace plarseg::plar {

int LevelStats::euclid_count() const {
  return static_cast<int>(std::count_if(classes.begin(), classes.end(), [](const auto& s) { return s.euclid_ready(); }));
}

int LevelStats::maha_count() const {
  return static_cast<int>(std::count_if(classes.begin(), classes.end(), [](const auto& s) { return s.maha_ready(); }));
}

double regularisation_eps(const Eigen::MatrixXd& cov) {
  const auto n = static_cast<double>(cov.rows());
  return std::max(1e-6, 1e-3 * cov.trace() / n);
}

ClassStats make_class_stats(std::int64_t count, const Eigen::VectorXd& sum, const Eigen::MatrixXd& outer_sum) {
  ClassStats s;
  const auto n = static_cast<int>(sum.size());
  s.count = count;
  if (count <= 0) {
    s.mean = Eigen::VectorXd::Zero(n);
    return s;
  }
  const double inv = 1.0 / static_cast<double>(count);
  s.mean = sum * inv;
  s.cov = outer_sum * inv - s.mean * s.mean.transpose();
  s.cov = 0.5 * (s.cov + s.cov.transpose());
  // Cancellation can leave tiny negative variances on the diagonal.
  for (int i = 0; i < n; ++i) s.cov(i, i) = std::max(s.cov(i, i), 0.0);
  s.eps = regularisation_eps(s.cov);

  if (count >= n + 1) {
    s.kind = CovKind::FULL;
    const Eigen::MatrixXd reg = s.cov + s.eps * Eigen::MatrixXd::Identity(n, n);
    s.inverse = reg.ldlt().solve(Eigen::MatrixXd::Identity(n, n));
    s.inverse = 0.5 * (s.inverse + s.inverse.transpose());
  } else if (count >= kDiagonalMinCount) {
    s.kind = CovKind::DIAGONAL;
    s.inverse = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i) s.inverse(i, i) = 1.0 / (s.cov(i, i) + s.eps);
  } else {
    s.kind = CovKind::MEAN_ONLY;
  }
  return s;
}

StatsAccumulator::StatsAccumulator(int num_classes, int dims)
    : dims_(dims),
      count_(static_cast<std::size_t>(num_classes), 0),
      sum_(static_cast<std::size_t>(num_classes), Eigen::VectorXd::Zero(dims)),
      outer_(static_cast<std::size_t>(num_classes), Eigen::MatrixXd::Zero(dims, dims)) {}

void StatsAccumulator::add(int cls, const Eigen::VectorXd& f) {
  if (cls < 0 || cls >= num_classes()) throw numkit::DimensionError("class id outside accumulator range");
  if (f.size() != dims_) throw numkit::DimensionError("feature length mismatch in accumulator");
  const auto i = static_cast<std::size_t>(cls);
  ++count_[i];
  sum_[i] += f;
  outer_[i].selfadjointView<Eigen::Lower>().rankUpdate(f);
}

void StatsAccumulator::add(int cls, std::span<const float> feature) {
  Eigen::VectorXd f(static_cast<Eigen::Index>(feature.size()));
  for (std::size_t i = 0; i < feature.size(); ++i) f(static_cast<Eigen::Index>(i)) = feature[i];
  add(cls, f);
}

void StatsAccumulator::merge(const StatsAccumulator& other) {
  if (other.num_classes() != num_classes() || other.dims_ != dims_)
    throw numkit::DimensionError("cannot merge accumulators of different shape");
  for (std::size_t i = 0; i < count_.size(); ++i) {
    count_[i] += other.count_[i];
    sum_[i] += other.sum_[i];
    outer_[i] += other.outer_[i];
  }
}

void StatsAccumulator::clear() {
  for (std::size_t i = 0; i < count_.size(); ++i) {
    count_[i] = 0;
    sum_[i].setZero();
    outer_[i].setZero();
  }
}

LevelStats StatsAccumulator::finalize(Level level) const {
  LevelStats ls;
  ls.level = level;
  ls.dims = dims_;
  for (std::size_t i = 0; i < count_.size(); ++i) {
    // Only the lower triangle is maintained by rankUpdate.
    const Eigen::MatrixXd full = outer_[i].selfadjointView<Eigen::Lower>();
    ls.classes.push_back(make_class_stats(count_[i], sum_[i], full));
  }
  return ls;
}

Eigen::VectorXd feature_at(const numkit::Tensor& feature, int r, int c) {
  const int ch = feature.dim(0), h = feature.dim(1), w = feature.dim(2);
  Eigen::VectorXd v(ch);
  auto d = feature.data();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const std::size_t off = static_cast<std::size_t>(r) * w + c;
  for (int k = 0; k < ch; ++k) v(k) = d[k * plane + off];
  return v;
}

void accumulate_stats(StatsAccumulator& acc, const numkit::Tensor& feature, const synth::LabelMap& labels) {
  if (feature.rank() != 3) throw numkit::DimensionError("features must be C x h x w");
  const int fh = feature.dim(1), fw = feature.dim(2);
  if (labels.height < fh || labels.width < fw)
    throw numkit::DimensionError("label map coarser than the feature map");
  for (int r = 0; r < labels.height; ++r)
    for (int c = 0; c < labels.width; ++c) {
      const int cls = labels.at(r, c);
      if (cls == synth::kIgnore) continue;
      acc.add(cls, feature_at(feature, feature_index(r, labels.height, fh), feature_index(c, labels.width, fw)));
    }
}

LevelStats collect_stats(const numkit::Tensor& feature, const synth::LabelMap& labels, int num_classes, Level level) {
  StatsAccumulator acc(num_classes, feature.dim(0));
  accumulate_stats(acc, feature, labels);
  return acc.finalize(level);
}

LevelStats merge_with_bank(const LevelStats& own, const LevelStats& bank, std::int64_t min_count) {
  if (own.num_classes() != bank.num_classes() || own.dims != bank.dims)
    throw numkit::DimensionError("bank and image statistics differ in shape");
  LevelStats out = own;
  for (std::size_t i = 0; i < out.classes.size(); ++i)
    if (own.classes[i].count < min_count) out.classes[i] = bank.classes[i];
  return out;
}

}  // namespace plarseg::plar
