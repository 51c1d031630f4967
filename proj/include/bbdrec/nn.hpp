#pragma once

#include "bbdrec/tensor.hpp"

#include <cmath>
#include <numbers>

namespace bbdrec::nn {

inline constexpr double kLayerNormEps = 1e-5;

// Row-wise layer normalization cache: normalized input and 1/sigma per row.
template <typename Scalar>
struct LayerNormCache {
  Matrix<Scalar> xhat;
  Vector<Scalar> rstd;
};

template <typename Scalar, typename In, typename Gain, typename Bias>
Matrix<Scalar> layer_norm(const Eigen::MatrixBase<In>& x, const Eigen::MatrixBase<Gain>& gain,
                          const Eigen::MatrixBase<Bias>& bias, LayerNormCache<Scalar>* cache) {
  const Index rows = x.rows();
  const Index cols = x.cols();
  Matrix<Scalar> xhat(rows, cols);
  Vector<Scalar> rstd(rows);
  for (Index r = 0; r < rows; ++r) {
    const Scalar mean = x.row(r).mean();
    const auto centered = (x.row(r).array() - mean).matrix();
    const Scalar var = centered.squaredNorm() / static_cast<Scalar>(cols);
    rstd[r] = Scalar(1) / std::sqrt(var + static_cast<Scalar>(kLayerNormEps));
    xhat.row(r) = centered * rstd[r];
  }
  Matrix<Scalar> y = (xhat.array().rowwise() * gain.array()).rowwise() + bias.array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

// Returns dL/dx and accumulates dL/dgain, dL/dbias.
template <typename Scalar, typename Gain, typename DGain, typename DBias>
Matrix<Scalar> layer_norm_backward(const Matrix<Scalar>& dy, const LayerNormCache<Scalar>& cache,
                                   const Eigen::MatrixBase<Gain>& gain, Eigen::MatrixBase<DGain>& dgain,
                                   Eigen::MatrixBase<DBias>& dbias) {
  dgain += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  dbias += dy.colwise().sum();
  const Index cols = dy.cols();
  Matrix<Scalar> dxhat = dy.array().rowwise() * gain.array();
  Matrix<Scalar> dx(dy.rows(), cols);
  for (Index r = 0; r < dy.rows(); ++r) {
    const Scalar mean_d = dxhat.row(r).mean();
    const Scalar mean_dx = dxhat.row(r).dot(cache.xhat.row(r)) / static_cast<Scalar>(cols);
    dx.row(r) = cache.rstd[r] * (dxhat.row(r).array() - mean_d - cache.xhat.row(r).array() * mean_dx).matrix();
  }
  return dx;
}

// tanh-approximated GELU and its derivative.
template <typename Scalar>
Scalar gelu(Scalar x) {
  const Scalar k = static_cast<Scalar>(std::sqrt(2.0 / std::numbers::pi));
  const Scalar inner = k * (x + Scalar(0.044715) * x * x * x);
  return Scalar(0.5) * x * (Scalar(1) + std::tanh(inner));
}

template <typename Scalar>
Scalar gelu_grad(Scalar x) {
  const Scalar k = static_cast<Scalar>(std::sqrt(2.0 / std::numbers::pi));
  const Scalar inner = k * (x + Scalar(0.044715) * x * x * x);
  const Scalar th = std::tanh(inner);
  return Scalar(0.5) * (Scalar(1) + th) +
         Scalar(0.5) * x * (Scalar(1) - th * th) * k * (Scalar(1) + Scalar(3 * 0.044715) * x * x);
}

// SiLU (x * sigmoid(x)), the gating nonlinearity of the denoiser MLP.
template <typename Scalar>
Scalar silu(Scalar x) {
  return x / (Scalar(1) + std::exp(-x));
}

// Whole-matrix form; Eigen vectorizes the exp.
template <typename Derived>
auto silu_array(const Eigen::ArrayBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return x / (Scalar(1) + (-x).exp());
}

template <typename Scalar>
Scalar silu_grad(Scalar x) {
  const Scalar s = Scalar(1) / (Scalar(1) + std::exp(-x));
  return s * (Scalar(1) + x * (Scalar(1) - s));
}

// Sinusoidal step embedding: [sin(t w_k), cos(t w_k)], w_k = 10000^(-2k/dim).
template <typename Scalar>
RowVector<Scalar> step_embedding(int t, Index dim) {
  RowVector<Scalar> out(dim);
  const Index half = dim / 2;
  for (Index k = 0; k < half; ++k) {
    const double w = std::pow(10000.0, -2.0 * static_cast<double>(k) / static_cast<double>(dim));
    out[k] = static_cast<Scalar>(std::sin(t * w));
    out[half + k] = static_cast<Scalar>(std::cos(t * w));
  }
  if (dim % 2 == 1) out[dim - 1] = static_cast<Scalar>(std::sin(static_cast<double>(t)));
  return out;
}

// Inverted dropout mask: entries are 0 or 1/(1-rate).
template <typename Scalar, typename Derived>
void dropout_mask(Eigen::DenseBase<Derived>& mask, double rate, Rng& rng) {
  if (rate <= 0.0) {
    mask.setConstant(Scalar(1));
    return;
  }
  std::bernoulli_distribution keep(1.0 - rate);
  const auto scale = static_cast<Scalar>(1.0 / (1.0 - rate));
  for (Index r = 0; r < mask.rows(); ++r) {
    for (Index c = 0; c < mask.cols(); ++c) mask(r, c) = keep(rng) ? scale : Scalar(0);
  }
}

}  // namespace bbdrec::nn
