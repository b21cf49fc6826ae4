#pragma once

// Small feed-forward engine with explicit backward passes. Batches are row
// vectors (one sample per row); image tensors travel flattened in C,H,W
// order with the shape tracked by the layers. A backward call must follow
// its matching forward, which is how the training loop drives it.

#include <memory>
#include <vector>

#include "oslt/common.hpp"
#include "oslt/regularizers.hpp"

namespace oslt::nn {

enum class ParamGroup { general, classifier };

struct Param {
  Matrix value;
  Matrix grad;
  Matrix velocity;
  bool decay = true;  // biases opt out
  ParamGroup group = ParamGroup::general;
  std::string name;

  void init_zero_state() {
    grad = Matrix::Zero(value.rows(), value.cols());
    velocity = Matrix::Zero(value.rows(), value.cols());
  }
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual Matrix forward(const Matrix& x) = 0;
  virtual Matrix backward(const Matrix& grad_out) = 0;
  virtual std::vector<Param*> params() { return {}; }
};

class Dense : public Layer {
 public:
  Dense(int in, int out, Rng& rng, const std::string& name = "dense") {
    w_.value = random_normal_matrix(in, out, rng) * std::sqrt(2.0 / in);
    b_.value = Matrix::Zero(1, out);
    b_.decay = false;
    w_.name = name + ".w";
    b_.name = name + ".b";
    w_.init_zero_state();
    b_.init_zero_state();
  }

  Matrix forward(const Matrix& x) override {
    in_ = x;
    return (x * w_.value).rowwise() + b_.value.row(0);
  }

  Matrix backward(const Matrix& g) override {
    w_.grad += in_.transpose() * g;
    b_.grad.row(0) += g.colwise().sum();
    return g * w_.value.transpose();
  }

  std::vector<Param*> params() override { return {&w_, &b_}; }

 private:
  Param w_, b_;
  Matrix in_;
};

class Relu : public Layer {
 public:
  Matrix forward(const Matrix& x) override {
    mask_ = (x.array() > 0.0).cast<double>();
    return x.cwiseProduct(mask_);
  }
  Matrix backward(const Matrix& g) override { return g.cwiseProduct(mask_); }

 private:
  Matrix mask_;
};

// 2-d convolution over flattened C,H,W rows, via im2col.
class Conv2d : public Layer {
 public:
  Conv2d(int in_c, int in_h, int in_w, int out_c, int ksize, int stride, int pad, Rng& rng,
         const std::string& name = "conv")
      : in_c_(in_c), in_h_(in_h), in_w_(in_w), out_c_(out_c), k_(ksize), stride_(stride), pad_(pad) {
    out_h_ = (in_h + 2 * pad - ksize) / stride + 1;
    out_w_ = (in_w + 2 * pad - ksize) / stride + 1;
    require(out_h_ > 0 && out_w_ > 0, "Conv2d: output collapses to zero size");
    const int fan_in = in_c * ksize * ksize;
    w_.value = random_normal_matrix(out_c, fan_in, rng) * std::sqrt(2.0 / fan_in);
    b_.value = Matrix::Zero(1, out_c);
    b_.decay = false;
    w_.name = name + ".w";
    b_.name = name + ".b";
    w_.init_zero_state();
    b_.init_zero_state();
  }

  int out_c() const { return out_c_; }
  int out_h() const { return out_h_; }
  int out_w() const { return out_w_; }

  Matrix forward(const Matrix& x) override {
    require(x.cols() == in_c_ * in_h_ * in_w_, "Conv2d: input width mismatch");
    const Eigen::Index m = x.rows();
    cols_.resize(static_cast<std::size_t>(m));
    Matrix y(m, static_cast<Eigen::Index>(out_c_) * out_h_ * out_w_);
    for (Eigen::Index s = 0; s < m; ++s) {
      Matrix col = im2col(x.row(s));
      Matrix out = w_.value * col;  // out_c x (oh*ow)
      out.colwise() += b_.value.row(0).transpose();
      for (int c = 0; c < out_c_; ++c)
        for (int p = 0; p < out_h_ * out_w_; ++p) y(s, static_cast<Eigen::Index>(c) * out_h_ * out_w_ + p) = out(c, p);
      cols_[static_cast<std::size_t>(s)] = std::move(col);
    }
    return y;
  }

  Matrix backward(const Matrix& g) override {
    const Eigen::Index m = g.rows();
    Matrix gx = Matrix::Zero(m, static_cast<Eigen::Index>(in_c_) * in_h_ * in_w_);
    for (Eigen::Index s = 0; s < m; ++s) {
      Matrix go(out_c_, out_h_ * out_w_);
      for (int c = 0; c < out_c_; ++c)
        for (int p = 0; p < out_h_ * out_w_; ++p) go(c, p) = g(s, static_cast<Eigen::Index>(c) * out_h_ * out_w_ + p);
      w_.grad += go * cols_[static_cast<std::size_t>(s)].transpose();
      b_.grad.row(0) += go.rowwise().sum().transpose();
      col2im(w_.value.transpose() * go, gx.row(s));
    }
    return gx;
  }

  std::vector<Param*> params() override { return {&w_, &b_}; }

 private:
  Matrix im2col(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
    Matrix col(static_cast<Eigen::Index>(in_c_) * k_ * k_, static_cast<Eigen::Index>(out_h_) * out_w_);
    for (int oy = 0; oy < out_h_; ++oy)
      for (int ox = 0; ox < out_w_; ++ox) {
        const int p = oy * out_w_ + ox;
        for (int c = 0; c < in_c_; ++c)
          for (int ky = 0; ky < k_; ++ky)
            for (int kx = 0; kx < k_; ++kx) {
              const int iy = oy * stride_ + ky - pad_;
              const int ix = ox * stride_ + kx - pad_;
              const Eigen::Index r = (static_cast<Eigen::Index>(c) * k_ + ky) * k_ + kx;
              col(r, p) = (iy < 0 || iy >= in_h_ || ix < 0 || ix >= in_w_)
                              ? 0.0
                              : row((static_cast<Eigen::Index>(c) * in_h_ + iy) * in_w_ + ix);
            }
      }
    return col;
  }

  void col2im(const Matrix& dcol, Eigen::Ref<Eigen::RowVectorXd> out) const {
    for (int oy = 0; oy < out_h_; ++oy)
      for (int ox = 0; ox < out_w_; ++ox) {
        const int p = oy * out_w_ + ox;
        for (int c = 0; c < in_c_; ++c)
          for (int ky = 0; ky < k_; ++ky)
            for (int kx = 0; kx < k_; ++kx) {
              const int iy = oy * stride_ + ky - pad_;
              const int ix = ox * stride_ + kx - pad_;
              if (iy < 0 || iy >= in_h_ || ix < 0 || ix >= in_w_) continue;
              const Eigen::Index r = (static_cast<Eigen::Index>(c) * k_ + ky) * k_ + kx;
              out((static_cast<Eigen::Index>(c) * in_h_ + iy) * in_w_ + ix) += dcol(r, p);
            }
      }
  }

  int in_c_, in_h_, in_w_, out_c_, k_, stride_, pad_;
  int out_h_, out_w_;
  Param w_, b_;
  std::vector<Matrix> cols_;
};

class MaxPool2d : public Layer {
 public:
  MaxPool2d(int channels, int in_h, int in_w, int ksize = 2, int stride = 2)
      : c_(channels), in_h_(in_h), in_w_(in_w), k_(ksize), stride_(stride) {
    out_h_ = (in_h - ksize) / stride + 1;
    out_w_ = (in_w - ksize) / stride + 1;
  }

  int out_h() const { return out_h_; }
  int out_w() const { return out_w_; }

  Matrix forward(const Matrix& x) override {
    const Eigen::Index m = x.rows();
    Matrix y(m, static_cast<Eigen::Index>(c_) * out_h_ * out_w_);
    argmax_.resize(static_cast<std::size_t>(m) * c_ * out_h_ * out_w_);
    for (Eigen::Index s = 0; s < m; ++s)
      for (int c = 0; c < c_; ++c)
        for (int oy = 0; oy < out_h_; ++oy)
          for (int ox = 0; ox < out_w_; ++ox) {
            double best = -std::numeric_limits<double>::infinity();
            Eigen::Index best_idx = 0;
            for (int ky = 0; ky < k_; ++ky)
              for (int kx = 0; kx < k_; ++kx) {
                const int iy = oy * stride_ + ky;
                const int ix = ox * stride_ + kx;
                if (iy >= in_h_ || ix >= in_w_) continue;
                const Eigen::Index idx = (static_cast<Eigen::Index>(c) * in_h_ + iy) * in_w_ + ix;
                if (x(s, idx) > best) {
                  best = x(s, idx);
                  best_idx = idx;
                }
              }
            const Eigen::Index o = (static_cast<Eigen::Index>(c) * out_h_ + oy) * out_w_ + ox;
            y(s, o) = best;
            argmax_[static_cast<std::size_t>(s * (static_cast<Eigen::Index>(c_) * out_h_ * out_w_) + o)] = best_idx;
          }
    in_cols_ = static_cast<Eigen::Index>(c_) * in_h_ * in_w_;
    return y;
  }

  Matrix backward(const Matrix& g) override {
    Matrix gx = Matrix::Zero(g.rows(), in_cols_);
    const Eigen::Index per_row = static_cast<Eigen::Index>(c_) * out_h_ * out_w_;
    for (Eigen::Index s = 0; s < g.rows(); ++s)
      for (Eigen::Index o = 0; o < per_row; ++o)
        gx(s, argmax_[static_cast<std::size_t>(s * per_row + o)]) += g(s, o);
    return gx;
  }

 private:
  int c_, in_h_, in_w_, k_, stride_, out_h_, out_w_;
  Eigen::Index in_cols_ = 0;
  std::vector<Eigen::Index> argmax_;
};

class GlobalAvgPool : public Layer {
 public:
  GlobalAvgPool(int channels, int in_h, int in_w) : c_(channels), hw_(in_h * in_w) {}

  Matrix forward(const Matrix& x) override {
    Matrix y(x.rows(), c_);
    for (Eigen::Index s = 0; s < x.rows(); ++s)
      for (int c = 0; c < c_; ++c) y(s, c) = x.row(s).segment(static_cast<Eigen::Index>(c) * hw_, hw_).mean();
    return y;
  }

  Matrix backward(const Matrix& g) override {
    Matrix gx(g.rows(), static_cast<Eigen::Index>(c_) * hw_);
    for (Eigen::Index s = 0; s < g.rows(); ++s)
      for (int c = 0; c < c_; ++c) gx.row(s).segment(static_cast<Eigen::Index>(c) * hw_, hw_).setConstant(g(s, c) / hw_);
    return gx;
  }

 private:
  int c_, hw_;
};

class Sequential : public Layer {
 public:
  Sequential() = default;

  template <typename L, typename... Args>
  L* emplace(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L* raw = layer.get();
    layers_.push_back(std::move(layer));
    return raw;
  }

  Matrix forward(const Matrix& x) override {
    Matrix h = x;
    for (auto& l : layers_) h = l->forward(h);
    return h;
  }

  Matrix backward(const Matrix& g) override {
    Matrix d = g;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) d = (*it)->backward(d);
    return d;
  }

  std::vector<Param*> params() override {
    std::vector<Param*> ps;
    for (auto& l : layers_)
      for (Param* p : l->params()) ps.push_back(p);
    return ps;
  }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

// Two 3x3 convolutions with a skip connection; a 1x1 projection matches
// channels/stride when they change.
class ResidualBlock : public Layer {
 public:
  ResidualBlock(int in_c, int in_h, int in_w, int out_c, int stride, Rng& rng, const std::string& name = "res") {
    conv1_ = std::make_unique<Conv2d>(in_c, in_h, in_w, out_c, 3, stride, 1, rng, name + ".conv1");
    relu1_ = std::make_unique<Relu>();
    conv2_ = std::make_unique<Conv2d>(out_c, conv1_->out_h(), conv1_->out_w(), out_c, 3, 1, 1, rng, name + ".conv2");
    if (in_c != out_c || stride != 1)
      proj_ = std::make_unique<Conv2d>(in_c, in_h, in_w, out_c, 1, stride, 0, rng, name + ".proj");
  }

  int out_c() const { return conv2_->out_c(); }
  int out_h() const { return conv2_->out_h(); }
  int out_w() const { return conv2_->out_w(); }

  Matrix forward(const Matrix& x) override {
    Matrix f = conv2_->forward(relu1_->forward(conv1_->forward(x)));
    Matrix s = proj_ ? proj_->forward(x) : x;
    Matrix y = f + s;
    mask_ = (y.array() > 0.0).cast<double>();
    return y.cwiseProduct(mask_);
  }

  Matrix backward(const Matrix& g) override {
    const Matrix gy = g.cwiseProduct(mask_);
    Matrix gx = conv1_->backward(relu1_->backward(conv2_->backward(gy)));
    gx += proj_ ? proj_->backward(gy) : gy;
    return gx;
  }

  std::vector<Param*> params() override {
    std::vector<Param*> ps = conv1_->params();
    for (Param* p : conv2_->params()) ps.push_back(p);
    if (proj_)
      for (Param* p : proj_->params()) ps.push_back(p);
    return ps;
  }

 private:
  std::unique_ptr<Conv2d> conv1_, conv2_, proj_;
  std::unique_ptr<Relu> relu1_;
  Matrix mask_;
};

// Class-major linear map: weights are K x d with one row per output class,
// which is the granularity the max-norm constraint works at.
class LinearHead {
 public:
  LinearHead() = default;
  LinearHead(int in, int out, Rng& rng, const std::string& name, ParamGroup group = ParamGroup::general) {
    w_.value = random_normal_matrix(out, in, rng) * std::sqrt(1.0 / in);
    b_.value = Matrix::Zero(1, out);
    b_.decay = false;
    w_.group = group;
    w_.name = name + ".w";
    b_.name = name + ".b";
    w_.init_zero_state();
    b_.init_zero_state();
  }

  Matrix forward(const Matrix& x) {
    in_ = x;
    return (x * w_.value.transpose()).rowwise() + b_.value.row(0);
  }

  // Inference-only variant; does not disturb the stored activations.
  Matrix apply(const Matrix& x) const { return (x * w_.value.transpose()).rowwise() + b_.value.row(0); }

  Matrix backward(const Matrix& g) {
    w_.grad += g.transpose() * in_;
    b_.grad.row(0) += g.colwise().sum();
    return g * w_.value;
  }

  Matrix& weights() { return w_.value; }
  const Matrix& weights() const { return w_.value; }
  std::vector<Param*> params() { return {&w_, &b_}; }

 private:
  Param w_, b_;
  Matrix in_;
};

// SGD with momentum; L2 decay folds into the gradient, with the classifier
// group taking its own coefficient.
class Sgd {
 public:
  Sgd(double momentum, WeightDecayPolicy decay) : momentum_(momentum), decay_(decay) {}

  void step(const std::vector<Param*>& params, double lr) {
    for (Param* p : params) {
      Matrix g = p->grad;
      if (p->decay) {
        const double c = p->group == ParamGroup::classifier ? decay_.for_classifier() : decay_.coefficient;
        if (c > 0.0) g += c * p->value;
      }
      p->velocity = momentum_ * p->velocity + g;
      p->value -= lr * p->velocity;
    }
  }

  static void zero_grad(const std::vector<Param*>& params) {
    for (Param* p : params) p->grad.setZero();
  }

 private:
  double momentum_;
  WeightDecayPolicy decay_;
};

inline double cosine_lr(double base_lr, long step, long total_steps) {
  if (total_steps <= 0) return base_lr;
  const double t = std::min<double>(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
  return base_lr * 0.5 * (1.0 + std::cos(M_PI * t));
}

}  // namespace oslt::nn
