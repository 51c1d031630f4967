#pragma once

#include "bbdrec/bridge_schedule.hpp"
#include "bbdrec/model.hpp"
#include "bbdrec/tensor.hpp"

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

namespace bbdrec {

struct ObjectiveOptions {
  double lambda1 = 1.0;  // diffusion loss weight
  double lambda2 = 1.0;  // recommendation loss weight
  bool stop_grad_target = false;
};

// Random inputs of one training step, drawn up front so the objective is a
// deterministic function of (params, batch, draws).
template <typename Scalar>
struct StepDraws {
  std::vector<int> steps;                  // t per sample, uniform on [1, T]
  Matrix<Scalar> eps;                      // standard normal, B x d
  std::vector<std::uint64_t> dropout_seeds;  // per sample; empty disables dropout
};

template <typename Scalar>
StepDraws<Scalar> draw_step(const BridgeSchedule& s, Index batch, Index dim, Rng& rng, bool dropout = true) {
  StepDraws<Scalar> d;
  std::uniform_int_distribution<int> step(1, s.T);
  d.steps.resize(batch);
  for (auto& t : d.steps) t = step(rng);
  d.eps.resize(batch, dim);
  fill_normal<Scalar>(d.eps, rng);
  if (dropout) {
    d.dropout_seeds.resize(batch);
    for (auto& seed : d.dropout_seeds) seed = rng();
  }
  return d;
}

struct LossParts {
  double diffusion = 0.0;
  double rec = 0.0;
  double total = 0.0;
};

/// Evaluates lambda1 * L_diff + lambda2 * L_rec on a batch and, when `grad` is
/// given, accumulates its exact gradient w.r.t. every model parameter.
///
///   e_s = encoder(history), e_y = table[y]
///   x_t = (1 - beta_t) e_y + beta_t e_s + sqrt(delta_t) eps
///   L_diff = mean_b ||e_y - g(x_t, t)||^2
///   L_rec  = mean_b -log softmax(e_s . table[1..V])[y]
///
/// Gradients reach e_y both through x_t and as the regression target (the
/// latter is cut by `stop_grad_target`), and reach e_s through x_t, the
/// softmax and, for the conditional denoiser, its extra input.
template <typename Scalar>
LossParts compute_objective(const BasicModel<Scalar>& model, const BridgeSchedule& s, const HistoryBatch& histories,
                            std::span<const ItemId> targets, const StepDraws<Scalar>& draws,
                            const ObjectiveOptions& opt, Vector<Scalar>* grad = nullptr) {
  const Index n = histories.size();
  const Index d = model.shape().dim;
  const Index vocab = model.shape().n_items;
  if (n == 0) throw std::invalid_argument("objective: empty batch");
  if (static_cast<Index>(targets.size()) != n || static_cast<Index>(draws.steps.size()) != n ||
      draws.eps.rows() != n || draws.eps.cols() != d) {
    throw std::invalid_argument("objective: batch/draw size mismatch");
  }
  if (model.denoiser().shape().max_step < s.T) {
    throw std::invalid_argument("objective: denoiser was built for fewer steps than the schedule");
  }

  typename SeqEncoder<Scalar>::Cache enc_cache;
  const Matrix<Scalar> es = model.encoder().forward(model.params(), histories, SeqEncoder<Scalar>::Readout::last,
                                                    draws.dropout_seeds, &enc_cache);
  const auto out_table = model.output_table();
  Matrix<Scalar> ey(n, d);
  for (Index i = 0; i < n; ++i) {
    const ItemId y = targets[i];
    if (y <= kPaddingId || y > vocab) throw std::out_of_range("objective: target id out of range");
    ey.row(i) = out_table.row(y);
  }

  Vector<Scalar> a(n), b(n);
  Matrix<Scalar> xt(n, d);
  for (Index i = 0; i < n; ++i) {
    const int t = draws.steps[i];
    check_step(s, t, 1);
    a[i] = static_cast<Scalar>(1.0 - s.beta[t]);
    b[i] = static_cast<Scalar>(s.beta[t]);
    xt.row(i) = a[i] * ey.row(i) + b[i] * es.row(i) + static_cast<Scalar>(std::sqrt(s.delta[t])) * draws.eps.row(i);
  }

  typename Denoiser<Scalar>::Cache den_cache;
  const Matrix<Scalar> g = model.denoiser().forward(model.params(), xt, draws.steps, &es, &den_cache);
  const Matrix<Scalar> resid = g - ey;

  const Matrix<Scalar> logits = es * out_table.bottomRows(vocab).transpose();
  Matrix<Scalar> probs(n, vocab);
  double rec = 0.0;
  for (Index i = 0; i < n; ++i) {
    const Scalar mx = logits.row(i).maxCoeff();
    probs.row(i) = (logits.row(i).array() - mx).exp();
    const Scalar sum = probs.row(i).sum();
    probs.row(i) /= sum;
    rec += static_cast<double>(mx + std::log(sum) - logits(i, targets[i] - 1));
  }

  LossParts parts;
  parts.diffusion = static_cast<double>(resid.rowwise().squaredNorm().sum()) / static_cast<double>(n);
  parts.rec = rec / static_cast<double>(n);
  parts.total = opt.lambda1 * parts.diffusion + opt.lambda2 * parts.rec;
  if (!grad) return parts;

  if (grad->size() != model.layout().total()) throw std::invalid_argument("objective: gradient size mismatch");
  const auto inv_n = static_cast<Scalar>(1.0 / static_cast<double>(n));
  const auto l1 = static_cast<Scalar>(opt.lambda1);
  const auto l2 = static_cast<Scalar>(opt.lambda2);

  const Matrix<Scalar> dg = (Scalar(2) * l1 * inv_n) * resid;
  Matrix<Scalar> d_cond;
  const Matrix<Scalar> dxt = model.denoiser().backward(model.params(), den_cache, dg, *grad, &d_cond);

  Matrix<Scalar> d_ey = a.asDiagonal() * dxt;
  if (!opt.stop_grad_target) d_ey -= dg;
  Matrix<Scalar> d_es = b.asDiagonal() * dxt;
  if (model.shape().conditional) d_es += d_cond;

  Matrix<Scalar> d_logits = probs;
  for (Index i = 0; i < n; ++i) d_logits(i, targets[i] - 1) -= Scalar(1);
  d_logits *= l2 * inv_n;
  d_es.noalias() += d_logits * out_table.bottomRows(vocab);

  auto d_out_table = view(*grad, model.output_block());
  d_out_table.bottomRows(vocab).noalias() += d_logits.transpose() * es;
  for (Index i = 0; i < n; ++i) d_out_table.row(targets[i]) += d_ey.row(i);

  model.encoder().backward(model.params(), enc_cache, d_es, *grad);
  return parts;
}

}  // namespace bbdrec
