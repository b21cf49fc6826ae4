#pragma once

// Closed-set classifier weight constraints: per-class max-norm projection
// applied after each optimizer step, and L2 weight decay folded into the
// update.

#include "oslt/common.hpp"

namespace oslt {

struct MaxNormPolicy {
  double radius = 1.0;
  bool enabled = true;

  void validate() const { require(radius > 0.0, "MaxNormPolicy: radius must be positive"); }
};

struct WeightDecayPolicy {
  double coefficient = 0.0;             // all parameters
  double classifier_coefficient = -1.0; // closed-set head override; <0 means "same as coefficient"

  double for_classifier() const { return classifier_coefficient < 0 ? coefficient : classifier_coefficient; }
  void validate() const {
    require(coefficient >= 0.0, "WeightDecayPolicy: coefficient must be nonnegative");
  }
};

// Rescales every row whose l2 norm exceeds the radius back onto the ball;
// rows inside the ball pass through bitwise unchanged.
inline void max_norm_project_inplace(Matrix& weights, double radius) {
  require(radius > 0.0, "max_norm_project: radius must be positive");
  if (!weights.allFinite()) throw std::invalid_argument("max_norm_project: non-finite weights");
  for (Eigen::Index i = 0; i < weights.rows(); ++i) {
    const double norm = weights.row(i).norm();
    if (norm > radius) weights.row(i) *= radius / norm;
  }
}

inline Matrix max_norm_project(Matrix weights, double radius) {
  max_norm_project_inplace(weights, radius);
  return weights;
}

// One decay-only update: w <- w - lr * coefficient * w. The optimizer folds
// the same term into the gradient step.
inline void weight_decay_step(Matrix& weights, double coefficient, double lr) {
  require(coefficient >= 0.0, "weight_decay_step: coefficient must be nonnegative");
  weights *= (1.0 - lr * coefficient);
}

}  // namespace oslt
