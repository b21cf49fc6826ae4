#pragma once

// Loss terms for the two-branch training objective: supervised CE, feature
// center regularization against the fixed simplex-ETF head, one-vs-rest
// multi-binary loss with hard negatives, open-set target fusion, and the two
// unlabelled-batch consistency losses with confidence/inlier filtering.

#include <cmath>
#include <string>
#include <vector>

#include "oslt/common.hpp"

namespace oslt {

struct LossWeights {
  double lambda_sup = 1.0;
  double lambda_reg = 1.0;
  double lambda_mb = 1.0;
  double lambda_o = 1.0;
  double lambda_ui = 1.0;
  double tau_r = 0.5;   // open-set target confidence threshold
  double tau_p = 0.95;  // pseudo-label confidence threshold
  int mu = 1;           // unlabelled-to-labelled batch size ratio

  void validate() const {
    require(lambda_sup >= 0 && lambda_reg >= 0 && lambda_mb >= 0 && lambda_o >= 0 && lambda_ui >= 0,
            "LossWeights: lambdas must be nonnegative");
    require(tau_r >= 0.0 && tau_r <= 1.0, "LossWeights: tau_r must lie in [0,1]");
    require(tau_p >= 0.0 && tau_p <= 1.0, "LossWeights: tau_p must lie in [0,1]");
    require(mu >= 1, "LossWeights: mu must be a positive integer");
  }
};

struct ScalarWithGrad {
  double value = 0.0;
  Matrix grad;              // same shape as the logits argument
  int contributing = 0;     // rows that passed the filter (where one applies)
};

inline double logsumexp_row(const Matrix& logits, Eigen::Index i) {
  const double m = logits.row(i).maxCoeff();
  double s = 0.0;
  for (Eigen::Index j = 0; j < logits.cols(); ++j) s += std::exp(logits(i, j) - m);
  return m + std::log(s);
}

inline Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double lse = logsumexp_row(logits, i);
    for (Eigen::Index j = 0; j < logits.cols(); ++j) p(i, j) = std::exp(logits(i, j) - lse);
  }
  return p;
}

namespace detail {

inline void check_labels(const std::vector<int>& labels, Eigen::Index rows, Eigen::Index num_classes,
                         const char* who) {
  require(static_cast<Eigen::Index>(labels.size()) == rows, std::string(who) + ": label count != batch size");
  for (int y : labels)
    if (y < 0 || y >= num_classes) throw std::invalid_argument(std::string(who) + ": label out of range");
}

}  // namespace detail

// Mean cross-entropy of K-way logits against integer labels.
inline ScalarWithGrad sup_ce_with_grad(const Matrix& logits, const std::vector<int>& labels) {
  detail::check_labels(labels, logits.rows(), logits.cols(), "sup_ce");
  require(logits.rows() >= 1, "sup_ce: empty batch");
  const auto m = static_cast<double>(logits.rows());
  ScalarWithGrad out;
  out.grad = softmax_rows(logits);
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    out.value += logsumexp_row(logits, i) - logits(i, labels[static_cast<std::size_t>(i)]);
    out.grad(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
  }
  out.value /= m;
  out.grad /= m;
  out.contributing = static_cast<int>(logits.rows());
  return out;
}

inline double sup_ce(const Matrix& logits, const std::vector<int>& labels) {
  return sup_ce_with_grad(logits, labels).value;
}

// Cross-entropy of per-class center logits against their class indices,
// averaged over the classes present in the batch. One logit row per present
// class; the row's label is that class.
inline ScalarWithGrad reg_loss_with_grad(const Matrix& center_logits, const std::vector<int>& present_labels) {
  return sup_ce_with_grad(center_logits, present_labels);
}

inline double reg_loss(const Matrix& center_logits, const std::vector<int>& present_labels) {
  return reg_loss_with_grad(center_logits, present_labels).value;
}

// One-vs-rest loss with hard-negative mining, on probability pairs:
// mean_i [ -log o_{i,y_i} - min_{k != y_i} log obar_{i,k} ].
// inlier(i,k) is the probability that sample i belongs to class k, outlier the
// complement; each pair sums to one.
inline double multi_binary_loss(const Matrix& inlier, const Matrix& outlier, const std::vector<int>& labels) {
  const Eigen::Index m = inlier.rows();
  const Eigen::Index k = inlier.cols();
  require(k >= 2, "multi_binary_loss: need K >= 2 (no negative class exists)");
  require(outlier.rows() == m && outlier.cols() == k, "multi_binary_loss: pair matrices must match");
  detail::check_labels(labels, m, k, "multi_binary_loss");
  double total = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    double min_outlier = std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < k; ++c)
      if (c != y) min_outlier = std::min(min_outlier, outlier(i, c));
    total += -safe_log(inlier(i, y)) - safe_log(min_outlier);
  }
  return total / static_cast<double>(m);
}

// Same loss from head logits, paired as columns (2k, 2k+1) = (inlier, outlier)
// per class k; returns the gradient in that layout.
inline ScalarWithGrad multi_binary_loss_logits(const Matrix& pair_logits, const std::vector<int>& labels) {
  const Eigen::Index m = pair_logits.rows();
  require(pair_logits.cols() % 2 == 0, "multi_binary_loss: logits must hold (inlier, outlier) pairs");
  const Eigen::Index k = pair_logits.cols() / 2;
  require(k >= 2, "multi_binary_loss: need K >= 2 (no negative class exists)");
  detail::check_labels(labels, m, k, "multi_binary_loss");

  ScalarWithGrad out;
  out.grad = Matrix::Zero(m, pair_logits.cols());
  for (Eigen::Index i = 0; i < m; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    // per-class 2-way softmax
    Eigen::Index hard = -1;
    double min_outlier = std::numeric_limits<double>::infinity();
    Vector p_in(k), p_out(k);
    for (Eigen::Index c = 0; c < k; ++c) {
      const double a = pair_logits(i, 2 * c);
      const double b = pair_logits(i, 2 * c + 1);
      const double mx = std::max(a, b);
      const double za = std::exp(a - mx), zb = std::exp(b - mx);
      p_in(c) = za / (za + zb);
      p_out(c) = zb / (za + zb);
      if (c != y && p_out(c) < min_outlier) {
        min_outlier = p_out(c);
        hard = c;
      }
    }
    out.value += -safe_log(p_in(y)) - safe_log(min_outlier);
    // -log softmax_0 of the label pair
    out.grad(i, 2 * y) += p_in(y) - 1.0;
    out.grad(i, 2 * y + 1) += p_out(y);
    // -log softmax_1 of the hardest negative pair
    out.grad(i, 2 * hard) += p_in(hard);
    out.grad(i, 2 * hard + 1) += p_out(hard) - 1.0;
  }
  out.value /= static_cast<double>(m);
  out.grad /= static_cast<double>(m);
  out.contributing = static_cast<int>(m);
  return out;
}

// Fused (K+1)-way target for one unlabelled sample: closed-set probabilities
// scaled by the per-class inlier likelihoods, with the residual mass
// sum_j z_j * obar_j collected in the last (outlier) slot.
struct OpenSetTarget {
  Vector probs;            // length K+1
  bool confident = false;  // max entry > tau_r, set by mark_confident
};

inline OpenSetTarget fuse_open_set_targets(const Vector& closed_probs, const Vector& inlier, const Vector& outlier) {
  const Eigen::Index k = closed_probs.size();
  require(inlier.size() == k && outlier.size() == k, "fuse_open_set_targets: size mismatch");
  OpenSetTarget t;
  t.probs.resize(k + 1);
  double residual = 0.0;
  for (Eigen::Index c = 0; c < k; ++c) {
    t.probs(c) = closed_probs(c) * inlier(c);
    residual += closed_probs(c) * outlier(c);
  }
  t.probs(k) = residual;
  return t;
}

inline OpenSetTarget& mark_confident(OpenSetTarget& t, double tau_r) {
  t.confident = t.probs.maxCoeff() > tau_r;
  return t;
}

// Row-wise fusion for a whole unlabelled batch.
inline Matrix fuse_open_set_targets_batch(const Matrix& closed_probs, const Matrix& inlier, const Matrix& outlier) {
  const Eigen::Index m = closed_probs.rows();
  const Eigen::Index k = closed_probs.cols();
  require(inlier.rows() == m && inlier.cols() == k && outlier.rows() == m && outlier.cols() == k,
          "fuse_open_set_targets: size mismatch");
  Matrix t(m, k + 1);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index c = 0; c < k; ++c) t(i, c) = closed_probs(i, c) * inlier(i, c);
    t(i, k) = (closed_probs.row(i).array() * outlier.row(i).array()).sum();
  }
  return t;
}

// Soft-target cross-entropy against the strong-view (K+1)-way logits, masked
// by target confidence; the mean runs over the whole batch, so filtered-out
// rows contribute zero without shrinking the denominator.
inline ScalarWithGrad open_set_loss_with_grad(const Matrix& targets, const Matrix& strong_open_logits, double tau_r) {
  const Eigen::Index m = targets.rows();
  require(strong_open_logits.rows() == m && strong_open_logits.cols() == targets.cols(),
          "open_set_loss: target/logit shape mismatch");
  require(m >= 1, "open_set_loss: empty batch");
  ScalarWithGrad out;
  out.grad = Matrix::Zero(m, targets.cols());
  for (Eigen::Index i = 0; i < m; ++i) {
    if (!(targets.row(i).maxCoeff() > tau_r)) continue;
    ++out.contributing;
    const double lse = logsumexp_row(strong_open_logits, i);
    const double tsum = targets.row(i).sum();
    for (Eigen::Index j = 0; j < targets.cols(); ++j) {
      out.value += targets(i, j) * (lse - strong_open_logits(i, j));
      out.grad(i, j) = std::exp(strong_open_logits(i, j) - lse) * tsum - targets(i, j);
    }
  }
  out.value /= static_cast<double>(m);
  out.grad /= static_cast<double>(m);
  return out;
}

inline double open_set_loss(const Matrix& targets, const Matrix& strong_open_logits, double tau_r) {
  return open_set_loss_with_grad(targets, strong_open_logits, tau_r).value;
}

// Pseudo-label loss on the strong-view closed-set logits. A row contributes
// iff the weak view is confident (max prob > tau_p) and its argmax class
// passes the inlier check (weak inlier likelihood > 0.5). Ties in the argmax
// resolve to the lower class index.
inline ScalarWithGrad filtered_inlier_loss_with_grad(const Matrix& weak_closed_probs, const Matrix& weak_inlier,
                                                     const Matrix& strong_closed_logits, double tau_p) {
  const Eigen::Index m = weak_closed_probs.rows();
  const Eigen::Index k = weak_closed_probs.cols();
  require(weak_inlier.rows() == m && weak_inlier.cols() == k, "filtered_inlier_loss: inlier shape mismatch");
  require(strong_closed_logits.rows() == m && strong_closed_logits.cols() == k,
          "filtered_inlier_loss: logits shape mismatch");
  require(m >= 1, "filtered_inlier_loss: empty batch");
  ScalarWithGrad out;
  out.grad = Matrix::Zero(m, k);
  for (Eigen::Index i = 0; i < m; ++i) {
    Eigen::Index khat = 0;
    weak_closed_probs.row(i).maxCoeff(&khat);
    const bool keep = weak_closed_probs(i, khat) > tau_p && weak_inlier(i, khat) > 0.5;
    if (!keep) continue;
    ++out.contributing;
    const double lse = logsumexp_row(strong_closed_logits, i);
    out.value += lse - strong_closed_logits(i, khat);
    for (Eigen::Index j = 0; j < k; ++j) out.grad(i, j) = std::exp(strong_closed_logits(i, j) - lse);
    out.grad(i, khat) -= 1.0;
  }
  out.value /= static_cast<double>(m);
  out.grad /= static_cast<double>(m);
  return out;
}

inline double filtered_inlier_loss(const Matrix& weak_closed_probs, const Matrix& weak_inlier,
                                   const Matrix& strong_closed_logits, double tau_p) {
  return filtered_inlier_loss_with_grad(weak_closed_probs, weak_inlier, strong_closed_logits, tau_p).value;
}

struct LossTerms {
  double sup = 0.0;
  double reg = 0.0;
  double mb = 0.0;
  double open_set = 0.0;
  double inlier = 0.0;
};

// Weighted combination; rejects non-finite components by name.
inline double total_loss(const LossTerms& t, const LossWeights& w) {
  const std::pair<const char*, double> named[] = {
      {"sup", t.sup}, {"reg", t.reg}, {"mb", t.mb}, {"open_set", t.open_set}, {"inlier", t.inlier}};
  for (const auto& [name, v] : named)
    if (!std::isfinite(v)) throw std::runtime_error(std::string("total_loss: non-finite component '") + name + "'");
  return w.lambda_sup * t.sup + w.lambda_reg * t.reg + w.lambda_mb * t.mb + w.lambda_o * t.open_set +
         w.lambda_ui * t.inlier;
}

}  // namespace oslt
