#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace bbdrec {

// Affine weights of the Gaussian posterior q(x_{t-1} | x_t, x_0, x_T):
//   mean = coef_x * x_t + coef_0 * x_0 + coef_T * x_T,   cov = variance * I
struct PosteriorCoefficients {
  double coef_x = 0.0;
  double coef_0 = 0.0;
  double coef_T = 0.0;
  double variance = 0.0;
};

// Closed-form Brownian-bridge schedule for a (T, m) pair.
//
// All arrays are indexed by the diffusion step t. beta/delta cover [0, T];
// the per-transition quantities (gamma, delta_hat, delta_tilde and the
// posterior coefficients) cover [1, T] and leave index 0 at zero.
//
//   beta_t        = t / T
//   delta_t       = 4 m beta_t (1 - beta_t)
//   gamma_t       = (1 - beta_t) / (1 - beta_{t-1})
//   delta_hat_t   = delta_t - gamma_t^2 delta_{t-1}
//   delta_tilde_t = delta_hat_t delta_{t-1} / delta_t          (t < T)
//
// At t = T the forward transition is deterministic (gamma_T = 0,
// delta_hat_T = 0) and delta_T = 0, so the posterior collapses to the
// marginal q(x_{T-1} | x_0, x_T): coefficients (0, 1 - beta_{T-1},
// beta_{T-1}) with variance delta_{T-1}.
//
// The object is filled once by build_schedule() and only read afterwards.
struct BridgeSchedule {
  int T = 0;
  double m = 0.0;
  std::vector<double> beta;
  std::vector<double> delta;
  std::vector<double> gamma;
  std::vector<double> delta_hat;
  std::vector<double> delta_tilde;
  std::vector<double> coef_x;
  std::vector<double> coef_0;
  std::vector<double> coef_T;

  int steps() const { return T; }
};

inline BridgeSchedule build_schedule(int T, double m) {
  if (T < 2) {
    throw std::invalid_argument("bridge schedule needs T >= 2, got " + std::to_string(T));
  }
  if (!std::isfinite(m) || m <= 0.0) {
    throw std::invalid_argument("bridge variance scale m must be finite and > 0");
  }

  BridgeSchedule s;
  s.T = T;
  s.m = m;
  const auto n = static_cast<std::size_t>(T) + 1;
  s.beta.assign(n, 0.0);
  s.delta.assign(n, 0.0);
  s.gamma.assign(n, 0.0);
  s.delta_hat.assign(n, 0.0);
  s.delta_tilde.assign(n, 0.0);
  s.coef_x.assign(n, 0.0);
  s.coef_0.assign(n, 0.0);
  s.coef_T.assign(n, 0.0);

  const double TT = static_cast<double>(T);
  for (int t = 0; t <= T; ++t) {
    s.beta[t] = static_cast<double>(t) / TT;
    // 4 t (T - t) / T^2 is exactly 1 at t = T/2, so delta peaks at m exactly,
    // and the integer form keeps delta_t == delta_{T-t} bit-for-bit.
    s.delta[t] = m * (4.0 * static_cast<double>(t) * static_cast<double>(T - t) / (TT * TT));
  }

  for (int t = 1; t <= T; ++t) {
    s.gamma[t] = static_cast<double>(T - t) / static_cast<double>(T - t + 1);
    s.delta_hat[t] = s.delta[t] - s.gamma[t] * s.gamma[t] * s.delta[t - 1];
    if (t < T) {
      const double ratio = s.delta[t - 1] / s.delta[t];
      s.delta_tilde[t] = s.delta_hat[t] * ratio;
      s.coef_x[t] = ratio * s.gamma[t];
      s.coef_0[t] = s.delta_hat[t] / s.delta[t] * (1.0 - s.beta[t - 1]);
      s.coef_T[t] = s.beta[t - 1] - ratio * s.gamma[t] * s.beta[t];
    } else {
      s.delta_tilde[t] = s.delta[t - 1];
      s.coef_x[t] = 0.0;
      s.coef_0[t] = 1.0 - s.beta[t - 1];
      s.coef_T[t] = s.beta[t - 1];
    }
  }
  return s;
}

inline void check_step(const BridgeSchedule& s, int t, int lo) {
  if (t < lo || t > s.T) {
    throw std::out_of_range("diffusion step " + std::to_string(t) + " outside [" +
                            std::to_string(lo) + ", " + std::to_string(s.T) + "]");
  }
}

inline PosteriorCoefficients posterior_coefficients(const BridgeSchedule& s, int t) {
  check_step(s, t, 1);
  return {s.coef_x[t], s.coef_0[t], s.coef_T[t], s.delta_tilde[t]};
}

}  // namespace bbdrec
