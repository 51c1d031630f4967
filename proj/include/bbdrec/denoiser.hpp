#pragma once

#include "bbdrec/nn.hpp"
#include "bbdrec/params.hpp"
#include "bbdrec/tensor.hpp"

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>

namespace bbdrec {

struct DenoiserShape {
  Index dim = 64;
  Index time_dim = 64;
  Index hidden = 128;
  int max_step = 20;
  bool conditional = false;  // also consumes the history representation e_s
};

/// Two-layer MLP g(x_t, t) predicting x_0 from concat(x_t, step_embedding(t))
/// (and e_s in the conditional variant), with a SiLU between the layers.
template <typename Scalar>
class Denoiser {
 public:
  struct Cache {
    Matrix<Scalar> input;
    Matrix<Scalar> pre;
    Matrix<Scalar> act;
  };

  Denoiser() = default;

  Denoiser(ParamLayout& layout, DenoiserShape shape) : shape_(shape) {
    if (shape.max_step < 1) throw std::invalid_argument("denoiser: max_step must be >= 1");
    w1_ = layout.add("denoiser.w1", input_dim(), shape.hidden);
    b1_ = layout.add("denoiser.b1", 1, shape.hidden);
    w2_ = layout.add("denoiser.w2", shape.hidden, shape.dim);
    b2_ = layout.add("denoiser.b2", 1, shape.dim);
    steps_.resize(shape.max_step + 1, shape.time_dim);
    steps_.row(0).setZero();
    for (int t = 1; t <= shape.max_step; ++t) steps_.row(t) = nn::step_embedding<Scalar>(t, shape.time_dim);
  }

  const DenoiserShape& shape() const { return shape_; }
  Index input_dim() const { return shape_.dim * (shape_.conditional ? 2 : 1) + shape_.time_dim; }

  // Rows of the first weight matrix that read e_s (conditional variant only).
  Index history_block_offset() const { return shape_.dim + shape_.time_dim; }

  const ParamBlock& w1_block() const { return w1_; }

  void init(Vector<Scalar>& params, Rng& rng) const {
    for (const auto* b : {&w1_, &w2_}) {
      const double a = std::sqrt(6.0 / static_cast<double>(b->rows + b->cols));
      std::uniform_real_distribution<double> u(-a, a);
      auto w = view(params, *b);
      for (Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<Scalar>(u(rng));
    }
    view(params, b1_).setZero();
    view(params, b2_).setZero();
  }

  RowVector<Scalar> step_embedding(int t) const {
    check(t);
    return steps_.row(t);
  }

  /// Batched forward pass; `steps[r]` is the diffusion step of row r.
  /// `history` must have the same rows as `x` in the conditional variant and
  /// is ignored otherwise.
  Matrix<Scalar> forward(const Vector<Scalar>& params, const Matrix<Scalar>& x, std::span<const int> steps,
                         const Matrix<Scalar>* history = nullptr, Cache* cache = nullptr) const {
    const Index n = x.rows();
    if (x.cols() != shape_.dim) throw std::invalid_argument("denoiser: input dimension mismatch");
    if (static_cast<Index>(steps.size()) != n) throw std::invalid_argument("denoiser: one step per row required");
    if (shape_.conditional && (!history || history->rows() != n || history->cols() != shape_.dim)) {
      throw std::invalid_argument("conditional denoiser needs a history representation per row");
    }
    Cache local;
    Cache& c = cache ? *cache : local;
    c.input.resize(n, input_dim());
    c.input.leftCols(shape_.dim) = x;
    for (Index r = 0; r < n; ++r) {
      check(steps[r]);
      c.input.block(r, shape_.dim, 1, shape_.time_dim) = steps_.row(steps[r]);
    }
    if (shape_.conditional) c.input.rightCols(shape_.dim) = *history;
    c.pre = (c.input * view(params, w1_)).rowwise() + row_view(params, b1_);
    c.act = nn::silu_array(c.pre.array()).matrix();
    return (c.act * view(params, w2_)).rowwise() + row_view(params, b2_);
  }

  /// Same step for every row; the step-embedding contribution to the first
  /// layer is computed once.
  Matrix<Scalar> forward_step(const Vector<Scalar>& params, const Matrix<Scalar>& x, int t,
                              const Matrix<Scalar>* history = nullptr) const {
    check(t);
    if (x.cols() != shape_.dim) throw std::invalid_argument("denoiser: input dimension mismatch");
    const auto w1 = view(params, w1_);
    const RowVector<Scalar> bias = steps_.row(t) * w1.middleRows(shape_.dim, shape_.time_dim) +
                                   row_view(params, b1_);
    Matrix<Scalar> pre = (x * w1.topRows(shape_.dim)).rowwise() + bias;
    if (shape_.conditional) {
      if (!history || history->rows() != x.rows()) {
        throw std::invalid_argument("conditional denoiser needs a history representation per row");
      }
      pre.noalias() += *history * w1.bottomRows(shape_.dim);
    }
    pre = nn::silu_array(pre.array()).matrix();
    return (pre * view(params, w2_)).rowwise() + row_view(params, b2_);
  }

  /// Single-vector convenience wrapper.
  Vector<Scalar> denoise(const Vector<Scalar>& params, const Vector<Scalar>& x_t, int t,
                         const Vector<Scalar>* e_s = nullptr) const {
    const Matrix<Scalar> x = x_t.transpose();
    const int steps[1] = {t};
    if (shape_.conditional) {
      if (!e_s) throw std::invalid_argument("conditional denoiser needs e_s");
      const Matrix<Scalar> h = e_s->transpose();
      return forward(params, x, steps, &h).row(0).transpose();
    }
    return forward(params, x, steps).row(0).transpose();
  }

  /// Accumulates parameter gradients and returns dL/dx (and dL/de_s through
  /// `d_history` in the conditional variant).
  Matrix<Scalar> backward(const Vector<Scalar>& params, const Cache& c, const Matrix<Scalar>& d_out,
                          Vector<Scalar>& grad, Matrix<Scalar>* d_history = nullptr) const {
    view(grad, w2_).noalias() += c.act.transpose() * d_out;
    row_view(grad, b2_) += d_out.colwise().sum();
    Matrix<Scalar> d_pre = d_out * view(params, w2_).transpose();
    d_pre.array() *= c.pre.unaryExpr([](Scalar v) { return nn::silu_grad(v); }).array();
    view(grad, w1_).noalias() += c.input.transpose() * d_pre;
    row_view(grad, b1_) += d_pre.colwise().sum();
    const auto w1 = view(params, w1_);
    if (shape_.conditional && d_history) *d_history = d_pre * w1.bottomRows(shape_.dim).transpose();
    return d_pre * w1.topRows(shape_.dim).transpose();
  }

 private:
  void check(int t) const {
    if (t < 1 || t > shape_.max_step) {
      throw std::out_of_range("denoiser step " + std::to_string(t) + " outside [1, " +
                              std::to_string(shape_.max_step) + "]");
    }
  }

  DenoiserShape shape_;
  ParamBlock w1_, b1_, w2_, b2_;
  Matrix<Scalar> steps_;
};

}  // namespace bbdrec
