#include "plarseg/plar/distance.hpp"

#include <algorithm>
#include <cmath>

namespace plarseg::plar {

namespace {

using LevelFn = double (*)(const Eigen::VectorXd&, const ClassStats&);

ClassDistances hybrid(const Eigen::VectorXd& f1, const Eigen::VectorXd& f2, const LevelStats& s1,
                      const LevelStats& s2, double lambda, LevelFn fn) {
  if (s1.num_classes() != s2.num_classes()) throw numkit::DimensionError("levels disagree on class count");
  ClassDistances out;
  out.per_class.resize(static_cast<std::size_t>(s1.num_classes()), kUnavailable);
  for (int c = 0; c < s1.num_classes(); ++c) {
    const double d1 = fn(f1, s1.classes[static_cast<std::size_t>(c)]);
    const double d2 = fn(f2, s2.classes[static_cast<std::size_t>(c)]);
    const bool ok1 = std::isfinite(d1), ok2 = std::isfinite(d2);
    double d = kUnavailable;
    if (ok1 && ok2)
      d = lambda * d1 + (1.0 - lambda) * d2;
    else if (ok1)
      d = d1;
    else if (ok2)
      d = d2;
    out.per_class[static_cast<std::size_t>(c)] = d;
  }
  out.best = argmin_class(out.per_class);
  return out;
}

}  // namespace

double euclid_distance(const Eigen::VectorXd& f, const ClassStats& s) {
  if (!s.euclid_ready()) return kUnavailable;
  if (f.size() != s.mean.size()) throw numkit::DimensionError("feature and class mean differ in length");
  return (f - s.mean).norm();
}

double maha_distance(const Eigen::VectorXd& f, const ClassStats& s) {
  if (!s.maha_ready()) return kUnavailable;
  if (f.size() != s.mean.size()) throw numkit::DimensionError("feature and class mean differ in length");
  const Eigen::VectorXd d = f - s.mean;
  return std::sqrt(std::max(0.0, d.dot(s.inverse * d)));
}

int argmin_class(const std::vector<double>& d) {
  int best = kNoCandidate;
  for (std::size_t c = 0; c < d.size(); ++c) {
    if (!std::isfinite(d[c])) continue;
    if (best == kNoCandidate || d[c] < d[static_cast<std::size_t>(best)]) best = static_cast<int>(c);
  }
  return best;
}

ClassDistances euclid_class_distance(const Eigen::VectorXd& f1, const Eigen::VectorXd& f2, const LevelStats& s1,
                                     const LevelStats& s2, double lambda) {
  return hybrid(f1, f2, s1, s2, lambda, &euclid_distance);
}

ClassDistances maha_class_distance(const Eigen::VectorXd& f1, const Eigen::VectorXd& f2, const LevelStats& s1,
                                   const LevelStats& s2, double lambda) {
  return hybrid(f1, f2, s1, s2, lambda, &maha_distance);
}

}  // namespace plarseg::plar
