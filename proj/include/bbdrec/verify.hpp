#pragma once

#include "bbdrec/bridge_diffusion.hpp"
#include "bbdrec/bridge_schedule.hpp"
#include "bbdrec/model.hpp"
#include "bbdrec/objective.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace bbdrec::verify {

struct Check {
  std::string suite;
  std::string name;
  bool pass = false;
  double error = 0.0;      // worst observed error
  double tolerance = 0.0;
  std::string detail;
};

struct Report {
  std::vector<Check> checks;

  bool ok() const {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
  }
  std::size_t failures() const {
    return static_cast<std::size_t>(std::count_if(checks.begin(), checks.end(), [](const Check& c) { return !c.pass; }));
  }
  double max_error() const {
    double e = 0.0;
    for (const auto& c : checks) e = std::max(e, c.error);
    return e;
  }
  void add(Check c) { checks.push_back(std::move(c)); }
  void append(const Report& other) { checks.insert(checks.end(), other.checks.begin(), other.checks.end()); }
};

// One line per check: `PASS|FAIL <suite> <name> error=<e> tol=<t> [detail]`.
inline void write_report(const Report& r, std::ostream& out) {
  const auto flags = out.flags();
  out << std::scientific << std::setprecision(3);
  for (const auto& c : r.checks) {
    out << (c.pass ? "PASS " : "FAIL ") << c.suite << ' ' << c.name << " error=" << c.error << " tol=" << c.tolerance;
    if (!c.detail.empty()) out << ' ' << c.detail;
    out << '\n';
  }
  out << (r.ok() ? "OK " : "FAILED ") << r.checks.size() - r.failures() << '/' << r.checks.size() << '\n';
  out.flags(flags);
}

namespace detail {

// |a - b| relative to |b|, falling back to absolute error when b == 0.
inline double rel_err(double a, double b) {
  const double diff = std::abs(a - b);
  return b == 0.0 ? diff : diff / std::abs(b);
}

class Worst {
 public:
  void see(double err, std::string where) {
    if (!(err <= worst_)) {  // NaN sticks
      worst_ = std::isnan(err) ? std::numeric_limits<double>::infinity() : err;
      where_ = std::move(where);
    }
  }
  double value() const { return worst_; }
  const std::string& where() const { return where_; }

 private:
  double worst_ = 0.0;
  std::string where_;
};

inline std::string tm_label(int T, double m) {
  std::ostringstream o;
  o << "T=" << T << " m=" << m;
  return o.str();
}

inline Check make(const std::string& suite, const std::string& name, const Worst& w, double tol,
                  const std::string& label) {
  Check c{suite, name, w.value() <= tol, w.value(), tol, label};
  if (!w.where().empty()) c.detail += " worst_at=" + w.where();
  return c;
}

}  // namespace detail

// Marginal of a linear-beta DDPM: x_t = sqrt(abar_t) x_0 + sqrt(1 - abar_t) eps.
struct DdpmMarginal {
  std::vector<double> x0_coef;   // sqrt(abar_t), t = 0..T
  std::vector<double> variance;  // 1 - abar_t
};

inline DdpmMarginal ddpm_marginal(int T, double beta_start = 1e-4, double beta_end = 2e-2) {
  DdpmMarginal d;
  d.x0_coef.assign(static_cast<std::size_t>(T) + 1, 1.0);
  d.variance.assign(static_cast<std::size_t>(T) + 1, 0.0);
  double abar = 1.0;
  for (int t = 1; t <= T; ++t) {
    const double b = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * (t - 1) / (T - 1);
    abar *= 1.0 - b;
    d.x0_coef[t] = std::sqrt(abar);
    d.variance[t] = 1.0 - abar;
  }
  return d;
}

/// Algebraic identities of the schedule against independent closed forms.
inline Report check_schedule_identities(int T, double m, double tol = 1e-9) {
  const BridgeSchedule s = build_schedule(T, m);
  const std::string label = detail::tm_label(T, m);
  const double TT = T;
  Report r;

  // closed forms of the per-step quantities
  detail::Worst closed;
  for (int t = 1; t <= T; ++t) {
    const double dh = 4.0 * m * (T - t) / (TT * (T - t + 1));
    closed.see(detail::rel_err(s.delta_hat[t], dh), "delta_hat t=" + std::to_string(t));
    const double g = (1.0 - s.beta[t]) / (1.0 - s.beta[t - 1]);
    closed.see(detail::rel_err(s.gamma[t], g), "gamma t=" + std::to_string(t));
    const double dt = t < T ? 4.0 * m * (t - 1) / (TT * t) : s.delta[T - 1];
    closed.see(detail::rel_err(s.delta_tilde[t], dt), "delta_tilde t=" + std::to_string(t));
    closed.see(detail::rel_err(s.delta_hat[t], s.delta[t] - s.gamma[t] * s.gamma[t] * s.delta[t - 1]),
               "delta_hat identity t=" + std::to_string(t));
  }
  r.add(detail::make("schedule", "closed_forms", closed, tol, label));

  // endpoints, symmetry and the peak
  detail::Worst shape;
  shape.see(std::abs(s.delta[0]) + std::abs(s.delta[T]), "endpoints");
  for (int t = 0; t <= T; ++t) {
    shape.see(detail::rel_err(s.delta[t], s.delta[T - t]), "symmetry t=" + std::to_string(t));
    shape.see(std::max(0.0, s.delta[t] - m) / m, "peak bound t=" + std::to_string(t));
  }
  if (T % 2 == 0) shape.see(detail::rel_err(s.delta[T / 2], m), "midpoint");
  r.add(detail::make("schedule", "symmetry", shape, tol, label));

  // posterior: coefficients sum to one and match the Gaussian product form
  detail::Worst post;
  for (int t = 1; t <= T; ++t) {
    const auto pc = posterior_coefficients(s, t);
    post.see(std::abs(pc.coef_x + pc.coef_0 + pc.coef_T - 1.0), "sum t=" + std::to_string(t));
    if (t >= 2 && t <= T - 1) {
      // prior x_{t-1} ~ N(mu, delta_{t-1}); likelihood x_t ~ N(gamma x_{t-1} + c x_T, delta_hat_t)
      const double c = s.beta[t] - s.gamma[t] * s.beta[t - 1];
      const double var = 1.0 / (1.0 / s.delta[t - 1] + s.gamma[t] * s.gamma[t] / s.delta_hat[t]);
      const double cx = var * s.gamma[t] / s.delta_hat[t];
      const double c0 = var * (1.0 - s.beta[t - 1]) / s.delta[t - 1];
      const double cT = var * (s.beta[t - 1] / s.delta[t - 1] - s.gamma[t] * c / s.delta_hat[t]);
      const std::string at = " t=" + std::to_string(t);
      post.see(detail::rel_err(pc.variance, var), "variance" + at);
      post.see(detail::rel_err(pc.coef_x, cx), "coef_x" + at);
      post.see(detail::rel_err(pc.coef_0, c0), "coef_0" + at);
      post.see(std::abs(pc.coef_T - cT) / std::max(std::abs(cT), 1.0), "coef_T" + at);
    }
  }
  const auto p1 = posterior_coefficients(s, 1);
  post.see(std::abs(p1.coef_0 - 1.0) + std::abs(p1.coef_x) + std::abs(p1.coef_T) + std::abs(p1.variance), "t=1");
  const auto pT = posterior_coefficients(s, T);
  post.see(std::abs(pT.coef_x) + detail::rel_err(pT.variance, s.delta[T - 1]), "t=T");
  r.add(detail::make("schedule", "posterior", post, tol, label));

  // chaining the one-step transitions reproduces the marginal coefficients
  detail::Worst comp;
  double a = 1.0, b = 0.0, v = 0.0;
  for (int k = 1; k <= T; ++k) {
    const double g = s.gamma[k];
    a = g * a;
    b = g * b + (s.beta[k] - g * s.beta[k - 1]);
    v = g * g * v + s.delta_hat[k];
    const std::string at = " k=" + std::to_string(k);
    comp.see(std::abs(a - (1.0 - s.beta[k])), "a" + at);
    comp.see(std::abs(b - s.beta[k]), "b" + at);
    comp.see(std::abs(v - s.delta[k]) / m, "v" + at);
  }
  r.add(detail::make("schedule", "composition", comp, tol, label));

  // the bridge must not coincide with a DDPM marginal away from t = 0
  const DdpmMarginal ddpm = ddpm_marginal(T);
  double closest = std::numeric_limits<double>::infinity();
  for (int t = 1; t <= T - 1; ++t) {
    const double gap = std::max(std::abs(ddpm.x0_coef[t] - (1.0 - s.beta[t])), std::abs(ddpm.variance[t] - s.delta[t]));
    closest = std::min(closest, gap);
  }
  const bool distinct = T < 2 || closest > 1e-6;
  const bool endpoint = ddpm.x0_coef[0] == 1.0 - s.beta[0] && ddpm.variance[0] == s.delta[0];
  std::ostringstream det;
  det << label << " min_interior_gap=" << closest;
  r.add(Check{"schedule", "ddpm_mismatch", distinct && endpoint, distinct ? 0.0 : 1.0, 0.0, det.str()});
  return r;
}

struct GridSpec {
  int points = 8193;
  double half_width_sd = 10.0;
};

struct GridMoments {
  double mean = 0.0;
  double variance = 0.0;
};

/// Mean and variance of an unnormalized 1-D density given by its log on a
/// uniform grid (trapezoid rule).
template <typename LogDensity>
GridMoments grid_moments(LogDensity&& log_p, double lo, double hi, int points) {
  const double h = (hi - lo) / (points - 1);
  std::vector<double> lp(points);
  double mx = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < points; ++i) {
    lp[i] = log_p(lo + h * i);
    mx = std::max(mx, lp[i]);
  }
  double z = 0.0, s1 = 0.0;
  for (int i = 0; i < points; ++i) {
    const double w = (i == 0 || i == points - 1 ? 0.5 : 1.0) * std::exp(lp[i] - mx);
    z += w;
    s1 += w * (lo + h * i);
  }
  const double mean = s1 / z;
  double s2 = 0.0;
  for (int i = 0; i < points; ++i) {
    const double w = (i == 0 || i == points - 1 ? 0.5 : 1.0) * std::exp(lp[i] - mx);
    const double dx = lo + h * i - mean;
    s2 += w * dx * dx;
  }
  return {mean, s2 / z};
}

/// Numerically normalizes q(x_t | x_{t-1}, x_T) q(x_{t-1} | x_0, x_T) over
/// x_{t-1} on a grid and compares its moments with the closed-form posterior.
inline Report check_posterior_bayes_1d(int T, double m, int t, double x0, double xT, double xt,
                                       GridSpec grid = {}, double tol = 1e-4) {
  if (grid.points < 4096) throw std::invalid_argument("bayes grid needs at least 4096 points");
  if (!(grid.half_width_sd >= 4.0)) throw std::invalid_argument("bayes grid must cover at least 8 standard deviations");
  const BridgeSchedule s = build_schedule(T, m);
  if (t < 2 || t > T - 1) throw std::out_of_range("bayes check needs 2 <= t <= T-1");

  const double prior_mean = (1.0 - s.beta[t - 1]) * x0 + s.beta[t - 1] * xT;
  const double prior_var = s.delta[t - 1];
  const double g = s.gamma[t];
  const double shift = s.beta[t] - g * s.beta[t - 1];
  const double lik_var = s.delta_hat[t];
  auto log_p = [&](double x) {
    const double a = x - prior_mean;
    const double b = xt - g * x - shift * xT;
    return -0.5 * a * a / prior_var - 0.5 * b * b / lik_var;
  };

  // coarse pass spanning both factors, then a fine grid around the bulk
  const double lik_center = (xt - shift * xT) / g;
  const double lik_sd = std::sqrt(lik_var) / g;
  const double prior_sd = std::sqrt(prior_var);
  const double lo0 = std::min(prior_mean - 12 * prior_sd, lik_center - 12 * lik_sd);
  const double hi0 = std::max(prior_mean + 12 * prior_sd, lik_center + 12 * lik_sd);
  const GridMoments coarse = grid_moments(log_p, lo0, hi0, 1 << 16);
  const double sd = std::sqrt(coarse.variance);
  const GridMoments fine = grid_moments(log_p, coarse.mean - grid.half_width_sd * sd,
                                        coarse.mean + grid.half_width_sd * sd, grid.points);

  Vector<double> vx(1), v0(1), vT(1);
  vx << xt;
  v0 << x0;
  vT << xT;
  const auto closed = posterior_mean_var<double>(s, t, vx, v0, vT);
  const double mean_err = std::abs(fine.mean - closed.mean[0]) / std::max(std::abs(closed.mean[0]), std::sqrt(closed.variance));
  const double var_err = detail::rel_err(fine.variance, closed.variance);

  std::ostringstream det;
  det << detail::tm_label(T, m) << " t=" << t << " x0=" << x0 << " xT=" << xT << " xt=" << xt
      << " grid_mean=" << fine.mean << " closed_mean=" << closed.mean[0] << " grid_var=" << fine.variance
      << " closed_var=" << closed.variance;
  Report r;
  r.add(Check{"bayes", "posterior_mean", mean_err <= tol, mean_err, tol, det.str()});
  r.add(Check{"bayes", "posterior_variance", var_err <= tol, var_err, tol, det.str()});
  return r;
}

/// `count` random (t, x0, xT, xt) tuples at a fixed (T, m).
inline Report check_posterior_bayes_random(int T, double m, int count, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_int_distribution<int> step(2, T - 1);
  std::uniform_real_distribution<double> value(-3.0, 3.0);
  Report r;
  for (int i = 0; i < count; ++i) {
    const int t = step(rng);
    const double x0 = value(rng), xT = value(rng);
    // x_t drawn near its forward marginal so the tuple is plausible
    const BridgeSchedule s = build_schedule(T, m);
    std::normal_distribution<double> noise(0.0, std::sqrt(s.delta[t]));
    const double xt = (1.0 - s.beta[t]) * x0 + s.beta[t] * xT + noise(rng);
    r.append(check_posterior_bayes_1d(T, m, t, x0, xT, xt));
  }
  return r;
}

/// Empirical moments of x_t from the direct sampler and from t chained
/// one-step transitions; each coordinate of one long vector is a sample.
inline Report check_forward_moments(int T, double m, int t, Index n_samples, std::uint64_t seed,
                                    double x0_value = 1.5, double xT_value = -0.5) {
  if (n_samples < 100000) throw std::invalid_argument("forward moment check needs at least 1e5 samples");
  const BridgeSchedule s = build_schedule(T, m);
  check_step(s, t, 0);
  const Vector<double> x0 = Vector<double>::Constant(n_samples, x0_value);
  const Vector<double> xT = Vector<double>::Constant(n_samples, xT_value);
  const double mean = (1.0 - s.beta[t]) * x0_value + s.beta[t] * xT_value;
  const double var = s.delta[t];
  Rng rng(seed);
  Vector<double> eps(n_samples);

  auto assess = [&](const Vector<double>& x, const std::string& name) {
    const double emp_mean = x.mean();
    const double emp_var = (x.array() - emp_mean).square().sum() / static_cast<double>(n_samples - 1);
    std::ostringstream det;
    det << detail::tm_label(T, m) << " t=" << t << " n=" << n_samples << " mean=" << emp_mean << " expected_mean=" << mean
        << " var=" << emp_var << " expected_var=" << var;
    Report r;
    if (var == 0.0) {
      const double dev = (x.array() - mean).abs().maxCoeff();
      r.add(Check{"moments", name + "_mean", dev <= 1e-12, dev, 1e-12, det.str()});
      r.add(Check{"moments", name + "_variance", emp_var <= 1e-24, emp_var, 0.0, det.str()});
      return r;
    }
    const double se = std::sqrt(var / static_cast<double>(n_samples));
    const double z = std::abs(emp_mean - mean) / se;
    const double var_err = std::abs(emp_var - var) / var;
    r.add(Check{"moments", name + "_mean_se", z <= 5.0, z, 5.0, det.str()});
    r.add(Check{"moments", name + "_variance_rel", var_err <= 0.02, var_err, 0.02, det.str()});
    return r;
  };

  Report r;
  fill_normal<double>(eps, rng);
  r.append(assess(forward_sample<double>(s, t, x0, xT, eps), "direct"));
  Vector<double> x = x0;
  for (int k = 1; k <= t; ++k) {
    fill_normal<double>(eps, rng);
    x = forward_transition_sample<double>(s, k, x, xT, eps);
  }
  r.append(assess(x, "composed"));
  return r;
}

/// generate() with a denoiser that always answers x_0 must land on x_0.
inline Report check_oracle_denoiser(int T, double m, int triples, Index dim, std::uint64_t seed, double tol = 1e-6) {
  const BridgeSchedule s = build_schedule(T, m);
  Rng rng(seed);
  detail::Worst worst[2];
  for (int i = 0; i < triples; ++i) {
    Vector<double> x0(dim), xT(dim);
    fill_normal<double>(x0, rng, 2.0);
    fill_normal<double>(xT, rng, 2.0);
    const std::uint64_t chain_seed = rng();
    auto oracle = [&](const Vector<double>&, int) { return x0; };
    for (int mode = 0; mode < 2; ++mode) {
      Rng chain(chain_seed);
      const auto out = generate<double>(s, oracle, xT, chain, mode == 0 ? NoiseMode::stochastic : NoiseMode::deterministic);
      worst[mode].see((out - x0).cwiseAbs().maxCoeff(), "triple " + std::to_string(i));
    }
  }
  Report r;
  const std::string label = detail::tm_label(T, m) + " triples=" + std::to_string(triples);
  r.add(detail::make("oracle", "generate_stochastic", worst[0], tol, label));
  r.add(detail::make("oracle", "generate_deterministic", worst[1], tol, label));
  return r;
}

struct GradCase {
  std::string name;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  bool conditional = false;
  bool stop_grad_target = false;
  bool tie_embeddings = true;
  bool dropout = false;
  EncoderMode encoder = EncoderMode::transformer;
  bool zero_loss = false;  // constant denoiser equal to every item embedding
};

inline std::vector<GradCase> default_grad_cases() {
  std::vector<GradCase> cases;
  cases.push_back({"diffusion_only", 1.0, 0.0});
  cases.push_back({"rec_only", 0.0, 1.0});
  cases.push_back({"full", 1.0, 1.0});
  cases.push_back({"conditional", 1.0, 1.0, true});
  cases.push_back({"untied", 1.0, 1.0, false, false, false});
  cases.push_back({"dropout", 1.0, 1.0, false, false, true, true});
  cases.push_back({"mean_pool", 1.0, 1.0, false, false, true, false, EncoderMode::mean_pool});
  GradCase zero{"zero_loss", 1.0, 0.0};
  zero.zero_loss = true;
  cases.push_back(zero);
  return cases;
}

/// Central differences of the full objective against the analytic gradient
/// on a tiny model (d=4, |V|=6, L=3, batch 2) in double precision.
inline Check check_gradient_case(const GradCase& gc, std::uint64_t seed, double step = 1e-5, double tol = 1e-3,
                                 double floor = 1e-6) {
  ModelShape shape;
  shape.n_items = 6;
  shape.dim = 4;
  shape.max_len = 3;
  shape.ffn_dim = 4;
  shape.time_dim = 4;
  shape.hidden = 8;
  shape.steps = 5;
  shape.dropout = gc.dropout ? 0.3 : 0.0;
  shape.encoder = gc.encoder;
  shape.conditional = gc.conditional;
  shape.tie_embeddings = gc.tie_embeddings;
  BasicModel<double> model(shape);
  model.init(seed);
  const BridgeSchedule s = build_schedule(5, 0.5);

  HistoryBatch histories(3);
  const ItemId h0[3] = {0, 2, 5};
  const ItemId h1[3] = {1, 3, 3};
  histories.push(h0);
  histories.push(h1);
  const std::vector<ItemId> targets{4, 6};
  Rng rng(mix_seed(seed, 7));
  StepDraws<double> draws = draw_step<double>(s, 2, shape.dim, rng, gc.dropout);
  draws.steps = {2, 4};

  if (gc.zero_loss) {
    auto& p = model.params();
    const RowVector<double> c = view(p, model.output_block()).row(1);
    for (Index i = 1; i <= shape.n_items; ++i) view(p, model.output_block()).row(i) = c;
    view(p, model.layout().find("denoiser.w2")).setZero();
    view(p, model.layout().find("denoiser.b2")).row(0) = c;
  }

  const ObjectiveOptions opt{gc.lambda1, gc.lambda2, gc.stop_grad_target};
  Vector<double> grad = Vector<double>::Zero(model.layout().total());
  compute_objective(model, s, histories, targets, draws, opt, &grad);

  detail::Worst worst;
  auto& params = model.params();
  double max_abs = 0.0;
  for (Index i = 0; i < params.size(); ++i) {
    const double keep = params[i];
    params[i] = keep + step;
    const double up = compute_objective(model, s, histories, targets, draws, opt).total;
    params[i] = keep - step;
    const double down = compute_objective(model, s, histories, targets, draws, opt).total;
    params[i] = keep;
    const double numeric = (up - down) / (2.0 * step);
    const double err = std::abs(numeric - grad[i]) / std::max({std::abs(numeric), std::abs(grad[i]), floor});
    std::string where;
    for (const auto& b : model.layout().blocks()) {
      if (i >= b.offset && i < b.offset + b.size()) where = b.name + "[" + std::to_string(i - b.offset) + "]";
    }
    worst.see(err, where);
    max_abs = std::max(max_abs, std::abs(grad[i]));
  }
  std::ostringstream det;
  det << "params=" << params.size() << " max_abs_grad=" << max_abs;
  Check c = detail::make("grad", gc.name, worst, tol, det.str());
  if (gc.zero_loss) {
    c.pass = c.pass && max_abs <= 1e-9;
    c.detail += " (expects all gradients ~ 0)";
  }
  return c;
}

inline Report check_gradients(std::uint64_t seed = 11) {
  Report r;
  for (const auto& gc : default_grad_cases()) r.add(check_gradient_case(gc, seed));
  return r;
}

inline const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names{"all", "schedule", "bayes", "moments", "grad", "oracle"};
  return names;
}

/// Runs one named suite (or all of them) with its default grid of cases.
inline Report run_suite(const std::string& suite, std::uint64_t seed = 0) {
  if (std::find(suite_names().begin(), suite_names().end(), suite) == suite_names().end()) {
    throw std::invalid_argument("unknown verify suite '" + suite + "'");
  }
  const bool all = suite == "all";
  Report r;
  if (all || suite == "schedule") {
    for (int T : {2, 5, 10, 100, 2000}) {
      for (double m : {1.0, 1e-1, 1e-2, 1e-4}) r.append(check_schedule_identities(T, m));
    }
  }
  if (all || suite == "bayes") {
    r.append(check_posterior_bayes_1d(10, 0.1, 2, 0.0, 7.0, 2.0));
    r.append(check_posterior_bayes_1d(10, 0.1, 5, 1.25, 1.25, 1.25));
    r.append(check_posterior_bayes_random(10, 0.1, 10, mix_seed(seed, 101)));
  }
  if (all || suite == "moments") {
    for (int t : {1, 5, 9, 10}) r.append(check_forward_moments(10, 0.1, t, 200000, mix_seed(seed, 200 + t)));
  }
  if (all || suite == "grad") r.append(check_gradients(mix_seed(seed, 300)));
  if (all || suite == "oracle") {
    r.append(check_oracle_denoiser(20, 1e-2, 100, 8, mix_seed(seed, 400)));
    r.append(check_oracle_denoiser(10, 1.0, 100, 8, mix_seed(seed, 401)));
  }
  return r;
}

}  // namespace bbdrec::verify
