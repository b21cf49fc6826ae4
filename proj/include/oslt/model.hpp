#pragma once

// Backbone encoders plus the four heads: a K-way closed-set classifier, a
// (K+1)-way open-set classifier, a projection head into the embedding space,
// and K independent one-vs-rest binary classifiers on that embedding. The
// fixed simplex-ETF frame scores per-class feature centers and never
// receives gradient updates.

#include <memory>
#include <string>
#include <vector>

#include "oslt/common.hpp"
#include "oslt/etf.hpp"
#include "oslt/nn.hpp"

namespace oslt {

class Backbone {
 public:
  virtual ~Backbone() = default;
  virtual Matrix forward(const Matrix& x) = 0;
  virtual Matrix backward(const Matrix& g) = 0;
  virtual std::vector<nn::Param*> params() = 0;
  virtual int feature_dim() const = 0;
};

class MlpBackbone : public Backbone {
 public:
  MlpBackbone(int in_dim, int hidden, int out_dim, Rng& rng) : dim_(out_dim) {
    net_.emplace<nn::Dense>(in_dim, hidden, rng, "backbone.fc1");
    net_.emplace<nn::Relu>();
    net_.emplace<nn::Dense>(hidden, out_dim, rng, "backbone.fc2");
    net_.emplace<nn::Relu>();
  }
  Matrix forward(const Matrix& x) override { return net_.forward(x); }
  Matrix backward(const Matrix& g) override { return net_.backward(g); }
  std::vector<nn::Param*> params() override { return net_.params(); }
  int feature_dim() const override { return dim_; }

 private:
  nn::Sequential net_;
  int dim_;
};

// Three conv stages with pooling for small inputs (28x28 class imagery).
class SmallConvBackbone : public Backbone {
 public:
  SmallConvBackbone(const DataShape& shape, Rng& rng) {
    require(shape.is_image(), "SmallConvBackbone: image input required");
    auto* c1 = net_.emplace<nn::Conv2d>(shape.channels, shape.height, shape.width, 16, 3, 1, 1, rng, "backbone.c1");
    net_.emplace<nn::Relu>();
    auto* p1 = net_.emplace<nn::MaxPool2d>(16, c1->out_h(), c1->out_w());
    auto* c2 = net_.emplace<nn::Conv2d>(16, p1->out_h(), p1->out_w(), 32, 3, 1, 1, rng, "backbone.c2");
    net_.emplace<nn::Relu>();
    auto* p2 = net_.emplace<nn::MaxPool2d>(32, c2->out_h(), c2->out_w());
    auto* c3 = net_.emplace<nn::Conv2d>(32, p2->out_h(), p2->out_w(), 64, 3, 1, 1, rng, "backbone.c3");
    net_.emplace<nn::Relu>();
    net_.emplace<nn::GlobalAvgPool>(64, c3->out_h(), c3->out_w());
  }
  Matrix forward(const Matrix& x) override { return net_.forward(x); }
  Matrix backward(const Matrix& g) override { return net_.backward(g); }
  std::vector<nn::Param*> params() override { return net_.params(); }
  int feature_dim() const override { return 64; }

 private:
  nn::Sequential net_;
};

// Mid-size residual encoder for larger inputs (224x224 and similar).
class ResidualBackbone : public Backbone {
 public:
  ResidualBackbone(const DataShape& shape, Rng& rng) {
    require(shape.is_image(), "ResidualBackbone: image input required");
    require(shape.height >= 32 && shape.width >= 32, "ResidualBackbone: input must be at least 32x32");
    auto* stem = net_.emplace<nn::Conv2d>(shape.channels, shape.height, shape.width, 16, 3, 2, 1, rng, "backbone.stem");
    net_.emplace<nn::Relu>();
    auto* r1 = net_.emplace<nn::ResidualBlock>(16, stem->out_h(), stem->out_w(), 32, 2, rng, "backbone.res1");
    auto* r2 = net_.emplace<nn::ResidualBlock>(32, r1->out_h(), r1->out_w(), 64, 2, rng, "backbone.res2");
    auto* r3 = net_.emplace<nn::ResidualBlock>(64, r2->out_h(), r2->out_w(), 128, 2, rng, "backbone.res3");
    net_.emplace<nn::GlobalAvgPool>(128, r3->out_h(), r3->out_w());
  }
  Matrix forward(const Matrix& x) override { return net_.forward(x); }
  Matrix backward(const Matrix& g) override { return net_.backward(g); }
  std::vector<nn::Param*> params() override { return net_.params(); }
  int feature_dim() const override { return 128; }

 private:
  nn::Sequential net_;
};

struct ModelConfig {
  std::string backbone = "mlp";  // mlp | conv_small | residual
  DataShape input;
  int num_classes = 0;   // K (seen classes)
  int feature_dim = 64;  // d for the mlp backbone; conv backbones fix their own
  int hidden_dim = 64;   // mlp/projection hidden width
  int embed_dim = 128;   // e
  std::uint64_t seed = 0;

  void validate() const {
    require(num_classes >= 2, "ModelConfig: need at least 2 seen classes");
    require(input.flat() > 0, "ModelConfig: input shape unset");
    require(embed_dim > 0 && hidden_dim > 0 && feature_dim > 0, "ModelConfig: dims must be positive");
    require(backbone == "mlp" || backbone == "conv_small" || backbone == "residual",
            "ModelConfig: unknown backbone '" + backbone + "'");
  }
};

// Per-class feature means over a batch; absent classes carry a zero row and
// a cleared mask bit, and contribute nothing downstream.
struct ClassCenters {
  Matrix centers;             // K x d
  std::vector<bool> present;  // class appears in the batch
  std::vector<int> counts;    // samples per class, for distributing gradients
};

inline ClassCenters feature_centers(const Matrix& features, const std::vector<int>& labels, int num_classes) {
  require(features.rows() >= 1, "feature_centers: empty batch");
  require(static_cast<Eigen::Index>(labels.size()) == features.rows(), "feature_centers: label count mismatch");
  ClassCenters cc;
  cc.centers = Matrix::Zero(num_classes, features.cols());
  cc.present.assign(static_cast<std::size_t>(num_classes), false);
  cc.counts.assign(static_cast<std::size_t>(num_classes), 0);
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    require(y >= 0 && y < num_classes, "feature_centers: label out of range");
    cc.centers.row(y) += features.row(i);
    ++cc.counts[static_cast<std::size_t>(y)];
  }
  for (int k = 0; k < num_classes; ++k)
    if (cc.counts[static_cast<std::size_t>(k)] > 0) {
      cc.centers.row(k) /= cc.counts[static_cast<std::size_t>(k)];
      cc.present[static_cast<std::size_t>(k)] = true;
    }
  return cc;
}

// Present-class center logits under the fixed frame: one row per present
// class, labelled by that class index.
struct EtfLogits {
  Matrix logits;            // P x L
  std::vector<int> labels;  // the present class indices, row-aligned
};

inline EtfLogits apply_etf_head(const ClassCenters& centers, const SimplexEtf& frame) {
  require(frame.num_classes == static_cast<int>(centers.present.size()),
          "apply_etf_head: frame classes != center classes");
  require(frame.dim == static_cast<int>(centers.centers.cols()), "apply_etf_head: frame dim != feature dim");
  EtfLogits out;
  int p = 0;
  for (bool b : centers.present) p += b ? 1 : 0;
  out.logits.resize(p, frame.num_classes);
  out.labels.reserve(static_cast<std::size_t>(p));
  int row = 0;
  for (int k = 0; k < frame.num_classes; ++k) {
    if (!centers.present[static_cast<std::size_t>(k)]) continue;
    out.logits.row(row++) = centers.centers.row(k) * frame.vectors;
    out.labels.push_back(k);
  }
  return out;
}

// Per-class 2-way softmax over (inlier, outlier) logit pairs laid out as
// columns (2k, 2k+1).
inline Matrix pair_softmax(const Matrix& pair_logits) {
  require(pair_logits.cols() % 2 == 0, "pair_softmax: odd column count");
  Matrix p(pair_logits.rows(), pair_logits.cols());
  for (Eigen::Index i = 0; i < pair_logits.rows(); ++i)
    for (Eigen::Index c = 0; c < pair_logits.cols() / 2; ++c) {
      const double a = pair_logits(i, 2 * c), b = pair_logits(i, 2 * c + 1);
      const double mx = std::max(a, b);
      const double za = std::exp(a - mx), zb = std::exp(b - mx);
      p(i, 2 * c) = za / (za + zb);
      p(i, 2 * c + 1) = zb / (za + zb);
    }
  return p;
}

inline Matrix even_columns(const Matrix& pairs) {
  Matrix out(pairs.rows(), pairs.cols() / 2);
  for (Eigen::Index c = 0; c < out.cols(); ++c) out.col(c) = pairs.col(2 * c);
  return out;
}

inline Matrix odd_columns(const Matrix& pairs) {
  Matrix out(pairs.rows(), pairs.cols() / 2);
  for (Eigen::Index c = 0; c < out.cols(); ++c) out.col(c) = pairs.col(2 * c + 1);
  return out;
}

// The trainable network: backbone encoder plus four heads and the fixed
// frame sized to the backbone's pooled feature width.
class Model {
 public:
  explicit Model(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng brng(derive_seed(cfg.seed, 1));
    if (cfg.backbone == "mlp") {
      backbone_ = std::make_unique<MlpBackbone>(cfg.input.flat(), cfg.hidden_dim, cfg.feature_dim, brng);
    } else if (cfg.backbone == "conv_small") {
      backbone_ = std::make_unique<SmallConvBackbone>(cfg.input, brng);
    } else {
      backbone_ = std::make_unique<ResidualBackbone>(cfg.input, brng);
    }
    const int d = backbone_->feature_dim();
    Rng hrng(derive_seed(cfg.seed, 2));
    closed_ = nn::LinearHead(d, cfg.num_classes, hrng, "closed", nn::ParamGroup::classifier);
    open_ = nn::LinearHead(d, cfg.num_classes + 1, hrng, "open");
    proj_.emplace<nn::Dense>(d, cfg.hidden_dim, hrng, "proj.fc1");
    proj_.emplace<nn::Relu>();
    proj_.emplace<nn::Dense>(cfg.hidden_dim, cfg.embed_dim, hrng, "proj.fc2");
    mb_ = nn::LinearHead(cfg.embed_dim, 2 * cfg.num_classes, hrng, "multi_binary");
    frame_ = make_simplex_etf(d, cfg.num_classes, derive_seed(cfg.seed, 3));
  }

  const ModelConfig& config() const { return cfg_; }
  int num_classes() const { return cfg_.num_classes; }
  int feature_dim() const { return backbone_->feature_dim(); }
  const SimplexEtf& frame() const { return frame_; }
  SimplexEtf& mutable_frame() { return frame_; }

  // Pooled features for a batch; the training path keeps activations for the
  // following backward call.
  Matrix encode(const Matrix& x) {
    require(x.rows() >= 1, "encode: empty batch");
    require(x.cols() == cfg_.input.flat(), "encode: sample width " + std::to_string(x.cols()) +
                                               " does not match input shape " + std::to_string(cfg_.input.flat()));
    return backbone_->forward(x);
  }

  Matrix backbone_backward(const Matrix& g) { return backbone_->backward(g); }

  nn::LinearHead& closed_head() { return closed_; }
  nn::LinearHead& open_head() { return open_; }
  nn::LinearHead& multi_binary_head() { return mb_; }
  nn::Sequential& proj_head() { return proj_; }

  // Inference-path conveniences (no stored activations on the heads).
  Matrix closed_logits(const Matrix& features) const { return closed_.apply(features); }
  Matrix open_logits(const Matrix& features) const { return open_.apply(features); }

  Matrix embed(const Matrix& features) { return proj_.forward(features); }

  // One-vs-rest probability pairs for embeddings: columns (2k, 2k+1) sum to 1.
  Matrix multi_binary_scores(const Matrix& embeddings) { return pair_softmax(mb_.forward(embeddings)); }

  std::vector<nn::Param*> params() {
    std::vector<nn::Param*> ps = backbone_->params();
    for (auto* p : closed_.params()) ps.push_back(p);
    for (auto* p : open_.params()) ps.push_back(p);
    for (auto* p : proj_.params()) ps.push_back(p);
    for (auto* p : mb_.params()) ps.push_back(p);
    return ps;
  }

 private:
  ModelConfig cfg_;
  std::unique_ptr<Backbone> backbone_;
  nn::LinearHead closed_, open_, mb_;
  nn::Sequential proj_;
  SimplexEtf frame_;
};

// Chunked inference over a whole block of samples.
inline Matrix encode_all(Model& model, const Matrix& x, Eigen::Index chunk = 256) {
  Matrix feats(x.rows(), model.feature_dim());
  for (Eigen::Index start = 0; start < x.rows(); start += chunk) {
    const Eigen::Index n = std::min(chunk, x.rows() - start);
    feats.middleRows(start, n) = model.encode(x.middleRows(start, n));
  }
  return feats;
}

}  // namespace oslt
