#pragma once

// Joint training over labelled and unlabelled batches: one SGD step couples
// the supervised CE, the fixed-frame center regularization, the multi-binary
// loss, and the two unlabelled consistency losses, followed by the max-norm
// projection of the closed-set classifier rows.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "oslt/augment.hpp"
#include "oslt/config.hpp"
#include "oslt/data.hpp"
#include "oslt/losses.hpp"
#include "oslt/model.hpp"
#include "oslt/npz.hpp"

#ifndef OSLT_SOURCE_REV
#define OSLT_SOURCE_REV "unknown"
#endif

namespace oslt {

struct StepRecord {
  LossTerms terms;
  double total = 0.0;
  int pseudo_label_kept = 0;  // rows passing the double filter
  int open_confident = 0;     // rows passing the target-confidence mask
};

// One optimizer step. The weak unlabelled view only produces (detached)
// targets; gradients flow through the labelled view and the strong view.
inline StepRecord train_step(Model& model, const Matrix& x_lab, const std::vector<int>& y_lab,
                             const Matrix& xu_weak, const Matrix& xu_strong, const RunConfig& cfg, nn::Sgd& opt,
                             double lr) {
  const LossWeights& w = cfg.weights;
  const int k = model.num_classes();
  StepRecord rec;
  nn::Sgd::zero_grad(model.params());

  // targets from the weak view (no gradient)
  Matrix weak_closed_probs, weak_inlier, weak_outlier;
  const bool need_weak = w.lambda_o > 0 || w.lambda_ui > 0;
  const bool need_weak_pairs = w.lambda_o > 0 || (w.lambda_ui > 0 && w.lambda_mb > 0);
  if (need_weak) {
    const Matrix feats = model.encode(xu_weak);
    weak_closed_probs = softmax_rows(model.closed_logits(feats));
    if (need_weak_pairs) {
      const Matrix pairs = pair_softmax(model.multi_binary_head().apply(model.proj_head().forward(feats)));
      weak_inlier = even_columns(pairs);
      weak_outlier = odd_columns(pairs);
    }
  }

  // labelled branch: supervised CE + center regularization + multi-binary
  {
    const Matrix feats = model.encode(x_lab);
    Matrix d_feat = Matrix::Zero(feats.rows(), feats.cols());

    const Matrix closed = model.closed_head().forward(feats);
    const auto sup = sup_ce_with_grad(closed, y_lab);
    rec.terms.sup = sup.value;
    if (w.lambda_sup > 0) d_feat += model.closed_head().backward(w.lambda_sup * sup.grad);

    const ClassCenters centers = feature_centers(feats, y_lab, k);
    const EtfLogits etf = apply_etf_head(centers, model.frame());
    const auto reg = reg_loss_with_grad(etf.logits, etf.labels);
    rec.terms.reg = reg.value;
    if (w.lambda_reg > 0) {
      const Matrix d_centers = w.lambda_reg * reg.grad * model.frame().vectors.transpose();  // P x d
      for (Eigen::Index row = 0; row < d_centers.rows(); ++row) {
        const int cls = etf.labels[static_cast<std::size_t>(row)];
        const double share = 1.0 / centers.counts[static_cast<std::size_t>(cls)];
        for (Eigen::Index i = 0; i < feats.rows(); ++i)
          if (y_lab[static_cast<std::size_t>(i)] == cls) d_feat.row(i) += share * d_centers.row(row);
      }
    }

    const Matrix emb = model.proj_head().forward(feats);
    const Matrix mb_logits = model.multi_binary_head().forward(emb);
    const auto mb = multi_binary_loss_logits(mb_logits, y_lab);
    rec.terms.mb = mb.value;
    if (w.lambda_mb > 0)
      d_feat += model.proj_head().backward(model.multi_binary_head().backward(w.lambda_mb * mb.grad));

    model.backbone_backward(d_feat);
  }

  // strong unlabelled branch: open-set loss + filtered pseudo-label loss
  if (need_weak) {
    const Matrix feats = model.encode(xu_strong);
    Matrix d_feat = Matrix::Zero(feats.rows(), feats.cols());

    if (w.lambda_o > 0) {
      const Matrix targets = fuse_open_set_targets_batch(weak_closed_probs, weak_inlier, weak_outlier);
      const Matrix open_logits = model.open_head().forward(feats);
      const auto open = open_set_loss_with_grad(targets, open_logits, w.tau_r);
      rec.terms.open_set = open.value;
      rec.open_confident = open.contributing;
      d_feat += model.open_head().backward(w.lambda_o * open.grad);
    }

    if (w.lambda_ui > 0) {
      // without a trained multi-binary head the inlier gate degenerates to
      // the confidence gate alone
      const Matrix gate = w.lambda_mb > 0 ? weak_inlier : Matrix::Ones(weak_closed_probs.rows(), k);
      const Matrix strong_closed = model.closed_head().forward(feats);
      const auto ui = filtered_inlier_loss_with_grad(weak_closed_probs, gate, strong_closed, w.tau_p);
      rec.terms.inlier = ui.value;
      rec.pseudo_label_kept = ui.contributing;
      d_feat += model.closed_head().backward(w.lambda_ui * ui.grad);
    }

    model.backbone_backward(d_feat);
  }

  rec.total = total_loss(rec.terms, w);  // throws on a non-finite component

  opt.step(model.params(), lr);
  if (cfg.max_norm.enabled) max_norm_project_inplace(model.closed_head().weights(), cfg.max_norm.radius);
  return rec;
}

struct EpochStats {
  int epoch = 0;
  LossTerms mean_terms;
  double mean_total = 0.0;
  double val_closed_acc = 0.0;
  double lr_end = 0.0;
};

struct RunRecord {
  std::vector<EpochStats> epochs;
  int best_epoch = -1;  // index of the max validation accuracy (first on ties)
  nlohmann::json config_snapshot;
  std::string source_rev = OSLT_SOURCE_REV;
};

inline std::string metrics_csv_header() {
  return "epoch,loss_sup,loss_reg,loss_mb,loss_open,loss_ui,loss_total,val_closed_acc,lr";
}

inline std::string metrics_csv_row(const EpochStats& e) {
  std::ostringstream os;
  os << e.epoch << std::setprecision(10) << std::fixed;
  os << ',' << e.mean_terms.sup << ',' << e.mean_terms.reg << ',' << e.mean_terms.mb << ',' << e.mean_terms.open_set
     << ',' << e.mean_terms.inlier << ',' << e.mean_total << ',' << e.val_closed_acc << ',' << e.lr_end;
  return os.str();
}

inline void save_run_record(const RunRecord& rec, const std::string& json_path, const std::string& csv_path) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : rec.epochs)
    epochs.push_back({{"epoch", e.epoch},
                      {"loss_sup", e.mean_terms.sup},
                      {"loss_reg", e.mean_terms.reg},
                      {"loss_mb", e.mean_terms.mb},
                      {"loss_open", e.mean_terms.open_set},
                      {"loss_ui", e.mean_terms.inlier},
                      {"loss_total", e.mean_total},
                      {"val_closed_acc", e.val_closed_acc},
                      {"lr", e.lr_end}});
  nlohmann::json j{{"epochs", epochs},
                   {"best_epoch", rec.best_epoch},
                   {"config", rec.config_snapshot},
                   {"source_rev", rec.source_rev}};
  std::ofstream jf(json_path);
  if (!jf) throw std::runtime_error("run record: cannot open " + json_path);
  jf << j.dump(2) << "\n";

  std::ofstream cf(csv_path);
  if (!cf) throw std::runtime_error("run record: cannot open " + csv_path);
  cf << metrics_csv_header() << "\n";
  for (const auto& e : rec.epochs) cf << metrics_csv_row(e) << "\n";
}

// Checkpoint: every head/backbone parameter with its optimizer state, the
// frozen frame, the epoch counter and the config, in one named-array archive.
inline void save_checkpoint(Model& model, const RunConfig& cfg, int next_epoch, const std::string& path) {
  std::vector<std::pair<std::string, npz::OutArray>> entries;
  auto push_matrix = [&entries](const std::string& key, const Matrix& m) {
    npz::OutArray arr;
    arr.shape = {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())};
    arr.f8.resize(arr.shape[0] * arr.shape[1]);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) arr.f8[static_cast<std::size_t>(i) * m.cols() + j] = m(i, j);
    entries.emplace_back(key, std::move(arr));
  };
  for (nn::Param* p : model.params()) {
    push_matrix("param/" + p->name, p->value);
    push_matrix("opt/" + p->name, p->velocity);
  }
  push_matrix("frame", model.frame().vectors);

  npz::OutArray epoch_arr;
  epoch_arr.shape = {1};
  epoch_arr.f8 = {static_cast<double>(next_epoch)};
  entries.emplace_back("epoch", std::move(epoch_arr));

  nlohmann::json meta{{"run", config_to_json(cfg)},
                      {"model",
                       {{"backbone", model.config().backbone},
                        {"channels", model.config().input.channels},
                        {"height", model.config().input.height},
                        {"width", model.config().input.width},
                        {"vec_dim", model.config().input.vec_dim},
                        {"num_classes", model.config().num_classes},
                        {"feature_dim", model.config().feature_dim},
                        {"hidden_dim", model.config().hidden_dim},
                        {"embed_dim", model.config().embed_dim},
                        {"seed", model.config().seed}}},
                      {"source_rev", OSLT_SOURCE_REV}};
  const std::string text = meta.dump();
  npz::OutArray cfg_arr;
  cfg_arr.shape = {text.size()};
  cfg_arr.u1.assign(text.begin(), text.end());
  entries.emplace_back("config", std::move(cfg_arr));

  npz::save_npz(path, entries);
}

struct Checkpoint {
  std::unique_ptr<Model> model;
  RunConfig run_config;
  int next_epoch = 0;
};

inline Checkpoint load_checkpoint(const std::string& path) {
  auto arrays = npz::load_npz(path);
  if (!arrays.count("config")) throw std::runtime_error("checkpoint: missing config entry");
  const auto& cfg_bytes = arrays.at("config").bytes;
  const nlohmann::json meta = nlohmann::json::parse(std::string(cfg_bytes.begin(), cfg_bytes.end()));

  Checkpoint ck;
  ck.run_config = config_from_json(meta.at("run"));
  const auto& mj = meta.at("model");
  ModelConfig mc;
  mc.backbone = mj.at("backbone").get<std::string>();
  mc.input.channels = mj.at("channels").get<int>();
  mc.input.height = mj.at("height").get<int>();
  mc.input.width = mj.at("width").get<int>();
  mc.input.vec_dim = mj.at("vec_dim").get<int>();
  mc.num_classes = mj.at("num_classes").get<int>();
  mc.feature_dim = mj.at("feature_dim").get<int>();
  mc.hidden_dim = mj.at("hidden_dim").get<int>();
  mc.embed_dim = mj.at("embed_dim").get<int>();
  mc.seed = mj.at("seed").get<std::uint64_t>();
  ck.model = std::make_unique<Model>(mc);

  auto fill = [&arrays](const std::string& key, Matrix& m) {
    const auto it = arrays.find(key);
    if (it == arrays.end()) throw std::runtime_error("checkpoint: missing array " + key);
    const auto& a = it->second;
    if (a.shape.size() != 2 || static_cast<Eigen::Index>(a.shape[0]) != m.rows() ||
        static_cast<Eigen::Index>(a.shape[1]) != m.cols())
      throw std::runtime_error("checkpoint: shape mismatch for " + key);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = a.data[static_cast<std::size_t>(i) * m.cols() + j];
  };
  for (nn::Param* p : ck.model->params()) {
    fill("param/" + p->name, p->value);
    fill("opt/" + p->name, p->velocity);
  }
  fill("frame", ck.model->mutable_frame().vectors);
  if (arrays.count("epoch")) ck.next_epoch = static_cast<int>(arrays.at("epoch").data.at(0));
  return ck;
}

// Assembles the training view of a manifest: labelled inputs/labels (model
// class indices), unlabelled inputs, and the validation block. Reading a
// label outside the seen set on the training path is counted and rejected.
struct TrainData {
  Matrix x_lab;
  std::vector<int> y_lab;  // model indices
  Matrix x_unlab;
  std::vector<long> unlab_ids;
  Matrix x_val;
  std::vector<int> y_val;
  long unseen_label_reads = 0;
};

inline TrainData assemble_train_data(const Dataset& ds, const SplitManifest& manifest) {
  TrainData td;
  td.x_lab.resize(static_cast<Eigen::Index>(manifest.labelled_ids.size()), ds.shape.flat());
  td.y_lab.resize(manifest.labelled_ids.size());
  for (std::size_t i = 0; i < manifest.labelled_ids.size(); ++i) {
    const int id = manifest.labelled_ids[i];
    const int model_idx = manifest.model_index(ds.train.y[static_cast<std::size_t>(id)]);
    if (model_idx < 0) {
      ++td.unseen_label_reads;
      throw std::runtime_error("train data: labelled sample " + std::to_string(id) + " carries an unseen class");
    }
    td.x_lab.row(static_cast<Eigen::Index>(i)) = ds.train.x.row(id);
    td.y_lab[i] = model_idx;
  }

  td.x_unlab.resize(static_cast<Eigen::Index>(manifest.unlabelled_ids.size()), ds.shape.flat());
  td.unlab_ids.reserve(manifest.unlabelled_ids.size());
  for (std::size_t i = 0; i < manifest.unlabelled_ids.size(); ++i) {
    td.x_unlab.row(static_cast<Eigen::Index>(i)) = ds.train.x.row(manifest.unlabelled_ids[i]);
    td.unlab_ids.push_back(manifest.unlabelled_ids[i]);
  }

  const SplitArrays& val_block = manifest.val_source == "official" ? ds.val : ds.train;
  td.x_val.resize(static_cast<Eigen::Index>(manifest.val_ids.size()), ds.shape.flat());
  td.y_val.resize(manifest.val_ids.size());
  for (std::size_t i = 0; i < manifest.val_ids.size(); ++i) {
    const int id = manifest.val_ids[i];
    const int model_idx = manifest.model_index(val_block.y[static_cast<std::size_t>(id)]);
    require(model_idx >= 0, "train data: validation sample of an unseen class");
    td.x_val.row(static_cast<Eigen::Index>(i)) = val_block.x.row(id);
    td.y_val[i] = model_idx;
  }
  return td;
}

inline double closed_accuracy(Model& model, const Matrix& x, const std::vector<int>& y) {
  if (x.rows() == 0) return 0.0;
  long correct = 0;
  constexpr Eigen::Index chunk = 256;
  for (Eigen::Index start = 0; start < x.rows(); start += chunk) {
    const Eigen::Index n = std::min(chunk, x.rows() - start);
    const Matrix logits = model.closed_logits(model.encode(x.middleRows(start, n)));
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index pred = 0;
      logits.row(i).maxCoeff(&pred);
      if (static_cast<int>(pred) == y[static_cast<std::size_t>(start + i)]) ++correct;
    }
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(x.rows());
}

struct FitResult {
  RunRecord record;
  std::string best_checkpoint;
  std::string last_checkpoint;
  double best_val_acc = 0.0;
};

// Full training run. steps per epoch = ceil(|unlabelled| / (mu*M)); the
// labelled stream cycles with a reshuffle at each wraparound. Augmentation
// randomness is keyed by (seed, epoch, sample id), so a resumed run replays
// the identical remaining trajectory.
inline FitResult fit(Model& model, const Dataset& ds, const SplitManifest& manifest, const RunConfig& cfg,
                     const std::string& out_dir, int start_epoch = 0) {
  cfg.validate();
  require(cfg.epochs >= 1, "fit: epochs must be >= 1");
  require(manifest.num_seen() == model.num_classes(), "fit: manifest seen-class count (" +
                                                          std::to_string(manifest.num_seen()) +
                                                          ") != model classes (" +
                                                          std::to_string(model.num_classes()) + ")");
  require(ds.shape.flat() == model.config().input.flat(), "fit: dataset shape does not match model input");

  std::filesystem::create_directories(out_dir);
  TrainData td = assemble_train_data(ds, manifest);
  require(td.x_lab.rows() >= 1, "fit: empty labelled set");
  require(td.x_unlab.rows() >= 1, "fit: empty unlabelled set");

  const int m_lab = cfg.batch_size;
  const int m_unlab = cfg.weights.mu * cfg.batch_size;
  const long steps_per_epoch = (td.x_unlab.rows() + m_unlab - 1) / m_unlab;
  const long total_steps = static_cast<long>(cfg.epochs) * steps_per_epoch;

  nn::Sgd opt(cfg.momentum, cfg.decay);
  FitResult out;
  out.record.config_snapshot = config_to_json(cfg);
  out.best_checkpoint = out_dir + "/checkpoint_best.npz";
  out.last_checkpoint = out_dir + "/checkpoint_last.npz";
  out.best_val_acc = -1.0;

  // labelled cycling state, reconstructed deterministically from (seed, pass)
  std::vector<int> lab_order(static_cast<std::size_t>(td.x_lab.rows()));
  long lab_pass = 0;
  std::size_t lab_pos = lab_order.size();  // forces an initial shuffle
  auto next_lab_index = [&]() {
    if (lab_pos >= lab_order.size()) {
      for (std::size_t i = 0; i < lab_order.size(); ++i) lab_order[i] = static_cast<int>(i);
      Rng rng(derive_seed(cfg.seed, 42, static_cast<std::uint64_t>(lab_pass++)));
      rng.shuffle(lab_order);
      lab_pos = 0;
    }
    return lab_order[lab_pos++];
  };
  // replay consumed labelled batches when resuming mid-run
  for (long s = 0; s < static_cast<long>(start_epoch) * steps_per_epoch * m_lab; ++s) next_lab_index();

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    std::vector<long> unlab_order(static_cast<std::size_t>(td.x_unlab.rows()));
    for (std::size_t i = 0; i < unlab_order.size(); ++i) unlab_order[i] = static_cast<long>(i);
    Rng urng(derive_seed(cfg.seed, 41, static_cast<std::uint64_t>(epoch)));
    urng.shuffle(unlab_order);

    EpochStats stats;
    stats.epoch = epoch;
    double lr_now = cfg.lr;
    for (long step = 0; step < steps_per_epoch; ++step) {
      const long global_step = static_cast<long>(epoch) * steps_per_epoch + step;
      lr_now = cfg.lr_schedule == "cosine" ? nn::cosine_lr(cfg.lr, global_step, total_steps) : cfg.lr;

      Matrix x_lab(m_lab, ds.shape.flat());
      std::vector<int> y_lab(static_cast<std::size_t>(m_lab));
      for (int i = 0; i < m_lab; ++i) {
        const int idx = next_lab_index();
        x_lab.row(i) = augment(td.x_lab.row(idx), ds.shape, AugMode::weak,
                               augment_seed(cfg.seed, epoch, -(idx + 1), AugMode::weak));
        y_lab[static_cast<std::size_t>(i)] = td.y_lab[static_cast<std::size_t>(idx)];
      }

      Matrix xu_weak(m_unlab, ds.shape.flat());
      Matrix xu_strong(m_unlab, ds.shape.flat());
      for (int i = 0; i < m_unlab; ++i) {
        const long pos = (step * m_unlab + i) % static_cast<long>(unlab_order.size());
        const long row = unlab_order[static_cast<std::size_t>(pos)];
        const long sample_id = td.unlab_ids[static_cast<std::size_t>(row)];
        xu_weak.row(i) =
            augment(td.x_unlab.row(row), ds.shape, AugMode::weak, augment_seed(cfg.seed, epoch, sample_id, AugMode::weak));
        xu_strong.row(i) = augment(td.x_unlab.row(row), ds.shape, AugMode::strong,
                                   augment_seed(cfg.seed, epoch, sample_id, AugMode::strong));
      }

      const StepRecord rec = train_step(model, x_lab, y_lab, xu_weak, xu_strong, cfg, opt, lr_now);
      stats.mean_terms.sup += rec.terms.sup;
      stats.mean_terms.reg += rec.terms.reg;
      stats.mean_terms.mb += rec.terms.mb;
      stats.mean_terms.open_set += rec.terms.open_set;
      stats.mean_terms.inlier += rec.terms.inlier;
      stats.mean_total += rec.total;
    }
    const double inv = 1.0 / static_cast<double>(steps_per_epoch);
    stats.mean_terms.sup *= inv;
    stats.mean_terms.reg *= inv;
    stats.mean_terms.mb *= inv;
    stats.mean_terms.open_set *= inv;
    stats.mean_terms.inlier *= inv;
    stats.mean_total *= inv;
    stats.lr_end = lr_now;
    stats.val_closed_acc = closed_accuracy(model, td.x_val, td.y_val);
    out.record.epochs.push_back(stats);

    if (stats.val_closed_acc > out.best_val_acc) {
      out.best_val_acc = stats.val_closed_acc;
      out.record.best_epoch = epoch;
      save_checkpoint(model, cfg, epoch + 1, out.best_checkpoint);
    }
  }

  save_checkpoint(model, cfg, cfg.epochs, out.last_checkpoint);
  save_run_record(out.record, out_dir + "/run_record.json", out_dir + "/metrics.csv");
  return out;
}

}  // namespace oslt
