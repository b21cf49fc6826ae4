#pragma once

// Closed-set and open-set evaluation. Closed accuracy reads only the K-way
// head; open-set detection reads only the (K+1)-way head's outlier slot; the
// hard-threshold protocol scores models that lack an open-set head.

#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "oslt/data.hpp"
#include "oslt/model.hpp"

namespace oslt {

struct ClosedEval {
  double accuracy = 0.0;               // percent over the given samples
  std::vector<double> per_class_acc;   // length K
  std::vector<long> per_class_total;
};

inline ClosedEval eval_closed(Model& model, const Matrix& x_seen, const std::vector<int>& y_model) {
  require(x_seen.rows() >= 1, "eval_closed: empty test set");
  require(static_cast<Eigen::Index>(y_model.size()) == x_seen.rows(), "eval_closed: label count mismatch");
  const int k = model.num_classes();
  ClosedEval out;
  out.per_class_acc.assign(static_cast<std::size_t>(k), 0.0);
  out.per_class_total.assign(static_cast<std::size_t>(k), 0);
  std::vector<long> correct(static_cast<std::size_t>(k), 0);
  const Matrix logits = model.closed_logits(encode_all(model, x_seen));
  long total_correct = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index pred = 0;
    logits.row(i).maxCoeff(&pred);
    const int y = y_model[static_cast<std::size_t>(i)];
    require(y >= 0 && y < k, "eval_closed: label out of range");
    ++out.per_class_total[static_cast<std::size_t>(y)];
    if (static_cast<int>(pred) == y) {
      ++correct[static_cast<std::size_t>(y)];
      ++total_correct;
    }
  }
  for (int c = 0; c < k; ++c)
    if (out.per_class_total[static_cast<std::size_t>(c)] > 0)
      out.per_class_acc[static_cast<std::size_t>(c)] =
          100.0 * correct[static_cast<std::size_t>(c)] / static_cast<double>(out.per_class_total[static_cast<std::size_t>(c)]);
  out.accuracy = 100.0 * static_cast<double>(total_correct) / static_cast<double>(logits.rows());
  return out;
}

// Detection accuracy on unseen-class samples: correct iff the (K+1)-way
// argmax lands in the outlier slot.
inline double eval_open(Model& model, const Matrix& x_unseen) {
  require(x_unseen.rows() >= 1, "eval_open: empty unseen test set");
  const int k = model.num_classes();
  const Matrix logits = model.open_logits(encode_all(model, x_unseen));
  long detected = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index pred = 0;
    logits.row(i).maxCoeff(&pred);
    if (static_cast<int>(pred) == k) ++detected;
  }
  return 100.0 * static_cast<double>(detected) / static_cast<double>(logits.rows());
}

enum class OutlierScore { closed_softmax, mb_inlier };

// Per-sample inlier confidence used by the hard-threshold protocol.
inline Vector outlier_scores(Model& model, const Matrix& x, OutlierScore source) {
  const Matrix feats = encode_all(model, x);
  Vector score(x.rows());
  if (source == OutlierScore::closed_softmax) {
    const Matrix probs = softmax_rows(model.closed_logits(feats));
    for (Eigen::Index i = 0; i < probs.rows(); ++i) score(i) = probs.row(i).maxCoeff();
  } else {
    const Matrix pairs = pair_softmax(model.multi_binary_head().apply(model.proj_head().forward(feats)));
    const Matrix inlier = even_columns(pairs);
    for (Eigen::Index i = 0; i < inlier.rows(); ++i) score(i) = inlier.row(i).maxCoeff();
  }
  return score;
}

// Hard-threshold outlier detection for models without an open-set head: a
// sample is declared an outlier iff its confidence is <= tau. Returns the
// detection accuracy over the given (unseen-class) samples.
inline double threshold_outlier_eval(Model& model, const Matrix& x_unseen, double tau,
                                     OutlierScore source = OutlierScore::closed_softmax) {
  if (x_unseen.rows() == 0) return 0.0;
  const Vector score = outlier_scores(model, x_unseen, source);
  long declared = 0;
  for (Eigen::Index i = 0; i < score.size(); ++i)
    if (score(i) <= tau) ++declared;
  return 100.0 * static_cast<double>(declared) / static_cast<double>(score.size());
}

// Sweep of the hard-threshold protocol. best_tau maximizes the joint
// (K+1)-way accuracy over seen + unseen test samples, the only selection
// signal that does not peek at unseen-only labels; the unseen-only detection
// is reported alongside for each tau.
struct ThresholdSweep {
  std::vector<double> taus;
  std::vector<double> unseen_detection;  // percent, per tau
  std::vector<double> joint_accuracy;    // percent, per tau
  double best_tau = 0.0;
  double detection_at_best = 0.0;
  double joint_at_best = 0.0;
};

inline ThresholdSweep threshold_sweep(Model& model, const Matrix& x_seen, const std::vector<int>& y_model,
                                      const Matrix& x_unseen, const std::vector<double>& taus,
                                      OutlierScore source = OutlierScore::closed_softmax) {
  require(!taus.empty(), "threshold_sweep: empty tau grid");
  const Vector seen_score = outlier_scores(model, x_seen, source);
  const Vector unseen_score = outlier_scores(model, x_unseen, source);
  Matrix closed = model.closed_logits(encode_all(model, x_seen));

  std::vector<int> seen_pred(static_cast<std::size_t>(closed.rows()));
  for (Eigen::Index i = 0; i < closed.rows(); ++i) {
    Eigen::Index p = 0;
    closed.row(i).maxCoeff(&p);
    seen_pred[static_cast<std::size_t>(i)] = static_cast<int>(p);
  }

  ThresholdSweep sweep;
  sweep.taus = taus;
  const double total = static_cast<double>(x_seen.rows() + x_unseen.rows());
  for (double tau : taus) {
    long unseen_hit = 0;
    for (Eigen::Index i = 0; i < unseen_score.size(); ++i)
      if (unseen_score(i) <= tau) ++unseen_hit;
    long joint = unseen_hit;
    for (Eigen::Index i = 0; i < seen_score.size(); ++i)
      if (seen_score(i) > tau && seen_pred[static_cast<std::size_t>(i)] == y_model[static_cast<std::size_t>(i)]) ++joint;
    const double det = 100.0 * static_cast<double>(unseen_hit) / static_cast<double>(x_unseen.rows());
    const double jacc = 100.0 * static_cast<double>(joint) / total;
    sweep.unseen_detection.push_back(det);
    sweep.joint_accuracy.push_back(jacc);
    if (jacc > sweep.joint_at_best) {
      sweep.joint_at_best = jacc;
      sweep.best_tau = tau;
      sweep.detection_at_best = det;
    }
  }
  return sweep;
}

struct MetricsReport {
  double closed_set_acc = 0.0;               // seen-class test samples, K-way head
  double open_set_acc = 0.0;                 // unseen-class test samples, outlier slot
  double combined_open_acc = 0.0;            // joint (K+1)-way accuracy, open head, whole test set
  std::vector<double> per_class_acc;         // length K, model class order
  std::vector<std::vector<long>> confusion;  // (K+1) x (K+1): true (seen..., unseen) x open-head prediction
  std::string dataset_id;
  std::vector<int> seen_classes;
  nlohmann::json config_snapshot;
};

inline MetricsReport report(Model& model, const Dataset& ds, const SplitManifest& manifest,
                            const nlohmann::json& config_snapshot = {}) {
  require(manifest.num_seen() == model.num_classes(),
          "report: manifest seen-class count (" + std::to_string(manifest.num_seen()) + ") != model classes (" +
              std::to_string(model.num_classes()) + ")");
  const int k = model.num_classes();

  std::vector<int> seen_rows, unseen_rows;
  std::vector<int> y_seen;
  for (int id : manifest.test_ids) {
    const int midx = manifest.model_index(ds.test.y[static_cast<std::size_t>(id)]);
    if (midx >= 0) {
      seen_rows.push_back(id);
      y_seen.push_back(midx);
    } else {
      unseen_rows.push_back(id);
    }
  }
  auto gather = [&ds](const std::vector<int>& rows) {
    Matrix x(static_cast<Eigen::Index>(rows.size()), ds.shape.flat());
    for (std::size_t i = 0; i < rows.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = ds.test.x.row(rows[i]);
    return x;
  };
  const Matrix x_seen = gather(seen_rows);
  const Matrix x_unseen = gather(unseen_rows);

  MetricsReport rep;
  rep.dataset_id = ds.id;
  rep.seen_classes = manifest.seen_classes;
  rep.config_snapshot = config_snapshot;

  const ClosedEval closed = eval_closed(model, x_seen, y_seen);
  rep.closed_set_acc = closed.accuracy;
  rep.per_class_acc = closed.per_class_acc;
  rep.open_set_acc = x_unseen.rows() > 0 ? eval_open(model, x_unseen) : 0.0;

  rep.confusion.assign(static_cast<std::size_t>(k + 1), std::vector<long>(static_cast<std::size_t>(k + 1), 0));
  auto tally = [&](const Matrix& x, const std::vector<int>& true_rows) {
    if (x.rows() == 0) return;
    const Matrix logits = model.open_logits(encode_all(model, x));
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      Eigen::Index pred = 0;
      logits.row(i).maxCoeff(&pred);
      ++rep.confusion[static_cast<std::size_t>(true_rows[static_cast<std::size_t>(i)])][static_cast<std::size_t>(pred)];
    }
  };
  std::vector<int> rows_seen(y_seen.begin(), y_seen.end());
  std::vector<int> rows_unseen(static_cast<std::size_t>(x_unseen.rows()), k);
  tally(x_seen, rows_seen);
  tally(x_unseen, rows_unseen);

  long diag = 0, total = 0;
  for (int i = 0; i <= k; ++i)
    for (int j = 0; j <= k; ++j) {
      total += rep.confusion[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      if (i == j) diag += rep.confusion[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    }
  rep.combined_open_acc = total > 0 ? 100.0 * static_cast<double>(diag) / static_cast<double>(total) : 0.0;
  return rep;
}

inline nlohmann::json report_to_json(const MetricsReport& r) {
  return nlohmann::json{{"closed_set_acc", r.closed_set_acc},
                        {"open_set_acc", r.open_set_acc},
                        {"combined_open_acc", r.combined_open_acc},
                        {"per_class_acc", r.per_class_acc},
                        {"confusion", r.confusion},
                        {"dataset_id", r.dataset_id},
                        {"seen_classes", r.seen_classes},
                        {"config", r.config_snapshot}};
}

inline MetricsReport report_from_json(const nlohmann::json& j) {
  MetricsReport r;
  r.closed_set_acc = j.at("closed_set_acc").get<double>();
  r.open_set_acc = j.at("open_set_acc").get<double>();
  r.combined_open_acc = j.at("combined_open_acc").get<double>();
  r.per_class_acc = j.at("per_class_acc").get<std::vector<double>>();
  r.confusion = j.at("confusion").get<std::vector<std::vector<long>>>();
  r.dataset_id = j.at("dataset_id").get<std::string>();
  r.seen_classes = j.at("seen_classes").get<std::vector<int>>();
  r.config_snapshot = j.value("config", nlohmann::json{});
  return r;
}

inline void save_report(const MetricsReport& r, const std::string& json_path) {
  std::ofstream f(json_path);
  if (!f) throw std::runtime_error("report: cannot open " + json_path);
  f << report_to_json(r).dump(2) << "\n";
}

// Comma-separated confusion table: header row of predictions, one row per
// true class with its label in the first column.
inline void save_confusion_csv(const MetricsReport& r, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("report: cannot open " + path);
  const int k = static_cast<int>(r.per_class_acc.size());
  f << "true\\pred";
  for (int j = 0; j < k; ++j) f << ",class_" << j;
  f << ",outlier\n";
  for (int i = 0; i <= k; ++i) {
    f << (i < k ? "class_" + std::to_string(i) : std::string("unseen"));
    for (int j = 0; j <= k; ++j) f << ',' << r.confusion[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    f << "\n";
  }
}

}  // namespace oslt
