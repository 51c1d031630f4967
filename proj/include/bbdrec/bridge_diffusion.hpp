#pragma once

#include "bbdrec/bridge_schedule.hpp"
#include "bbdrec/tensor.hpp"

#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>

namespace bbdrec {

enum class NoiseMode { stochastic, deterministic };

namespace detail {

inline void require_same_dim(Index a, Index b, const char* what) {
  if (a != b) {
    throw std::invalid_argument(std::string(what) + ": dimension mismatch (" + std::to_string(a) +
                                " vs " + std::to_string(b) + ")");
  }
}

template <typename Scalar>
void draw_noise(Vector<Scalar>& eps, Rng& rng, NoiseMode mode) {
  if (mode == NoiseMode::deterministic) {
    eps.setZero();
    return;
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Index i = 0; i < eps.size(); ++i) eps[i] = static_cast<Scalar>(normal(rng));
}

}  // namespace detail

/// Draws x_t ~ q(x_t | x_0, x_T) given a standard-normal draw eps.
template <typename Scalar>
Vector<Scalar> forward_sample(const BridgeSchedule& s, int t, const Vector<Scalar>& x0,
                              const Vector<Scalar>& xT, const Vector<Scalar>& eps) {
  check_step(s, t, 0);
  detail::require_same_dim(x0.size(), xT.size(), "forward_sample");
  detail::require_same_dim(x0.size(), eps.size(), "forward_sample");
  const auto a = static_cast<Scalar>(1.0 - s.beta[t]);
  const auto b = static_cast<Scalar>(s.beta[t]);
  const auto c = static_cast<Scalar>(std::sqrt(s.delta[t]));
  return a * x0 + b * xT + c * eps;
}

/// One forward transition x_{t-1} -> x_t of the bridge (t >= 1).
template <typename Scalar>
Vector<Scalar> forward_transition_sample(const BridgeSchedule& s, int t, const Vector<Scalar>& x_prev,
                                         const Vector<Scalar>& xT, const Vector<Scalar>& eps) {
  check_step(s, t, 1);
  detail::require_same_dim(x_prev.size(), xT.size(), "forward_transition_sample");
  detail::require_same_dim(x_prev.size(), eps.size(), "forward_transition_sample");
  const auto g = static_cast<Scalar>(s.gamma[t]);
  const auto shift = static_cast<Scalar>(s.beta[t] - s.gamma[t] * s.beta[t - 1]);
  const auto c = static_cast<Scalar>(std::sqrt(s.delta_hat[t]));
  return g * x_prev + shift * xT + c * eps;
}

template <typename Scalar>
struct GaussianParams {
  Vector<Scalar> mean;
  double variance = 0.0;
};

template <typename Scalar>
GaussianParams<Scalar> posterior_mean_var(const BridgeSchedule& s, int t, const Vector<Scalar>& x_t,
                                          const Vector<Scalar>& x0, const Vector<Scalar>& xT) {
  const PosteriorCoefficients pc = posterior_coefficients(s, t);
  detail::require_same_dim(x_t.size(), x0.size(), "posterior_mean_var");
  detail::require_same_dim(x_t.size(), xT.size(), "posterior_mean_var");
  GaussianParams<Scalar> out;
  out.mean = static_cast<Scalar>(pc.coef_x) * x_t + static_cast<Scalar>(pc.coef_0) * x0 +
             static_cast<Scalar>(pc.coef_T) * xT;
  out.variance = pc.variance;
  return out;
}

/// Reverse step x_t -> x_{t-1} with the denoiser's x_0 prediction plugged into
/// the posterior mean. At t = 1 the variance is zero and the result is x0_pred.
template <typename Scalar>
Vector<Scalar> reverse_step(const BridgeSchedule& s, int t, const Vector<Scalar>& x_t,
                            const Vector<Scalar>& xT, const Vector<Scalar>& x0_pred,
                            const Vector<Scalar>& eps) {
  const PosteriorCoefficients pc = posterior_coefficients(s, t);
  detail::require_same_dim(x_t.size(), xT.size(), "reverse_step");
  detail::require_same_dim(x_t.size(), x0_pred.size(), "reverse_step");
  detail::require_same_dim(x_t.size(), eps.size(), "reverse_step");
  Vector<Scalar> out = static_cast<Scalar>(pc.coef_x) * x_t + static_cast<Scalar>(pc.coef_0) * x0_pred +
                       static_cast<Scalar>(pc.coef_T) * xT;
  if (pc.variance > 0.0) out += static_cast<Scalar>(std::sqrt(pc.variance)) * eps;
  return out;
}

/// Runs the reverse chain t = T..1 from x_T and returns x_0.
/// `denoiser(x_t, t)` must return a vector of the same dimension.
template <typename Scalar, typename Denoise>
Vector<Scalar> generate(const BridgeSchedule& s, Denoise&& denoiser, const Vector<Scalar>& xT, Rng& rng,
                        NoiseMode mode = NoiseMode::stochastic) {
  Vector<Scalar> x = xT;
  Vector<Scalar> eps(xT.size());
  for (int t = s.T; t >= 1; --t) {
    Vector<Scalar> pred = denoiser(static_cast<const Vector<Scalar>&>(x), t);
    detail::require_same_dim(pred.size(), x.size(), "generate: denoiser output");
    detail::draw_noise(eps, rng, mode);
    x = reverse_step(s, t, x, xT, pred, eps);
  }
  return x;
}

/// Batched reverse chain: one row per sequence, all rows share the step.
/// Row r draws its noise from rngs[r], so a row's trajectory does not depend
/// on which other rows are in the batch. `denoiser(X, t)` maps B x d -> B x d.
template <typename Scalar, typename DenoiseBatch>
Matrix<Scalar> generate_batch(const BridgeSchedule& s, DenoiseBatch&& denoiser, const Matrix<Scalar>& XT,
                              std::span<Rng> rngs, NoiseMode mode = NoiseMode::stochastic) {
  if (mode == NoiseMode::stochastic && static_cast<Index>(rngs.size()) != XT.rows()) {
    throw std::invalid_argument("generate_batch: need one generator per row");
  }
  Matrix<Scalar> X = XT;
  Matrix<Scalar> eps(XT.rows(), XT.cols());
  for (int t = s.T; t >= 1; --t) {
    const PosteriorCoefficients pc = posterior_coefficients(s, t);
    Matrix<Scalar> pred = denoiser(static_cast<const Matrix<Scalar>&>(X), t);
    if (pred.rows() != X.rows() || pred.cols() != X.cols()) {
      throw std::invalid_argument("generate_batch: denoiser output has wrong shape");
    }
    Matrix<Scalar> next = static_cast<Scalar>(pc.coef_x) * X + static_cast<Scalar>(pc.coef_0) * pred +
                          static_cast<Scalar>(pc.coef_T) * XT;
    if (mode == NoiseMode::stochastic && pc.variance > 0.0) {
      fill_normal_rows<Scalar>(eps, rngs.data());
      next += static_cast<Scalar>(std::sqrt(pc.variance)) * eps;
    }
    X = std::move(next);
  }
  return X;
}

/// Mean over the batch of ||x0 - g(x_t, t)||^2 with x_t drawn by forward_sample
/// from the supplied (t, eps) pairs. Rows of X0/XT/eps are samples.
template <typename Scalar, typename Denoise>
double diffusion_loss(const BridgeSchedule& s, const Matrix<Scalar>& X0, const Matrix<Scalar>& XT,
                      Denoise&& denoiser, std::span<const int> t_draws, const Matrix<Scalar>& eps) {
  const Index n = X0.rows();
  if (n == 0) throw std::invalid_argument("diffusion_loss: empty batch");
  if (XT.rows() != n || eps.rows() != n || static_cast<Index>(t_draws.size()) != n) {
    throw std::invalid_argument("diffusion_loss: batch size mismatch");
  }
  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    const Vector<Scalar> x0 = X0.row(i).transpose();
    const Vector<Scalar> xt = forward_sample<Scalar>(s, t_draws[i], x0, XT.row(i).transpose(),
                                                     eps.row(i).transpose());
    const Vector<Scalar> pred = denoiser(xt, t_draws[i]);
    total += static_cast<double>((x0 - pred).squaredNorm());
  }
  return total / static_cast<double>(n);
}

/// Mean negative log-softmax of the target logit, where logits are inner
/// products against table rows 1..|V| (row 0 is padding and never a candidate).
template <typename Scalar>
double rec_loss(const Matrix<Scalar>& reps, std::span<const ItemId> targets, const Matrix<Scalar>& table) {
  const Index n = reps.rows();
  if (n == 0) throw std::invalid_argument("rec_loss: empty batch");
  if (static_cast<Index>(targets.size()) != n) throw std::invalid_argument("rec_loss: batch size mismatch");
  detail::require_same_dim(reps.cols(), table.cols(), "rec_loss");
  const Index vocab = table.rows() - 1;
  const Matrix<Scalar> logits = reps * table.bottomRows(vocab).transpose();
  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    const ItemId y = targets[i];
    if (y <= kPaddingId || y > vocab) {
      throw std::out_of_range("rec_loss: target id " + std::to_string(y) + " outside [1, " +
                              std::to_string(vocab) + "]");
    }
    const double mx = static_cast<double>(logits.row(i).maxCoeff());
    double sum = 0.0;
    for (Index j = 0; j < vocab; ++j) sum += std::exp(static_cast<double>(logits(i, j)) - mx);
    total += mx + std::log(sum) - static_cast<double>(logits(i, y - 1));
  }
  return total / static_cast<double>(n);
}

inline double combined_loss(double l_diff, double l_rec, double lambda1, double lambda2) {
  return lambda1 * l_diff + lambda2 * l_rec;
}

// Weight multiplying ||x0 - g||^2 in the KL between the true posterior and the
// model's reverse step (equal variances). `exact` squares the x0 coefficient
// as the Gaussian KL requires; `literal` keeps it unsquared, as the weight is
// sometimes written. Diagnostics only; training uses the unweighted loss.
struct ElboWeight {
  double exact = 0.0;
  double literal = 0.0;
};

inline ElboWeight elbo_step_weight(const BridgeSchedule& s, int t) {
  if (t < 2 || t > s.T - 1) {
    throw std::out_of_range("elbo_step_weight: step " + std::to_string(t) + " outside [2, " +
                            std::to_string(s.T - 1) + "]");
  }
  const double c0 = s.coef_0[t];
  const double var = s.delta_tilde[t];
  return {c0 * c0 / (2.0 * var), c0 / (2.0 * var)};
}

/// KL(N(a, var I) || N(b, var I)).
template <typename Scalar>
double gaussian_kl_equal_var(const Vector<Scalar>& a, const Vector<Scalar>& b, double var) {
  detail::require_same_dim(a.size(), b.size(), "gaussian_kl_equal_var");
  return static_cast<double>((a - b).squaredNorm()) / (2.0 * var);
}

}  // namespace bbdrec
