#pragma once

#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "plarseg/plar/stats.hpp"

namespace plarseg::plar {

inline constexpr double kUnavailable = std::numeric_limits<double>::infinity();
inline constexpr int kNoCandidate = -1;

// Per-class hybrid distance and its argmin (smallest class id on ties,
// kNoCandidate when no class is reachable).
struct ClassDistances {
  std::vector<double> per_class;
  int best = kNoCandidate;
};

// ||f - m||, or kUnavailable without a mean.
double euclid_distance(const Eigen::VectorXd& f, const ClassStats& s);
// sqrt((f - m)^T C^-1 (f - m)), or kUnavailable without a usable covariance.
double maha_distance(const Eigen::VectorXd& f, const ClassStats& s);

int argmin_class(const std::vector<double>& d);

// lambda * E1 + (1 - lambda) * E2 per class. A class known at only one level
// uses that level's distance for both terms.
ClassDistances euclid_class_distance(const Eigen::VectorXd& f1, const Eigen::VectorXd& f2, const LevelStats& s1,
                                     const LevelStats& s2, double lambda);

// Same combination rule with Mahalanobis distances.
ClassDistances maha_class_distance(const Eigen::VectorXd& f1, const Eigen::VectorXd& f2, const LevelStats& s1,
                                   const LevelStats& s2, double lambda);

}  // namespace plarseg::plar
