// Runs the end-to-end acceptance checks and prints one line per criterion:
//   PASS|FAIL <n> <name>: <measurements>
// Exit status is non-zero if any criterion fails.

#include "bbdrec/bbdrec.hpp"

#include <chrono>
#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>

using namespace bbdrec;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(int n, const std::string& name, bool pass, const std::string& detail) {
  if (!pass) ++failures;
  std::cout << (pass ? "PASS " : "FAIL ") << n << ' ' << name << ": " << detail << std::endl;
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

const std::vector<int> kTs{2, 5, 10, 100, 2000};
const std::vector<double> kMs{1.0, 1e-1, 1e-2, 1e-4};

struct Trained {
  ModelCheckpoint ckpt;
  EvalReport test;
  double seconds = 0.0;
};

Trained train_variant(const std::string& variant, const DatasetSplits& splits) {
  TrainConfig c = load_config(std::string(BBDREC_SOURCE_DIR) + "/configs/synthetic.json");
  c.variant = variant;
  apply_variant(c);
  const auto t0 = Clock::now();
  Trained out;
  out.ckpt = train<double>(c, splits).best;
  out.seconds = since(t0);
  const Model model = restore_model(out.ckpt);
  const BridgeSchedule s = build_schedule(c.T, c.m);
  EvalOptions eo;
  eo.ks = {10, 20};
  out.test = evaluate(Recommender<double>(model, s, inference_options(c)), splits.test, splits.popularity, eo);
  std::cerr << "  trained " << variant << " in " << out.seconds << " s, best epoch " << out.ckpt.epoch
            << ", test HR@10=" << out.test.hr(10) << " NDCG@10=" << out.test.ndcg(10) << std::endl;
  return out;
}

}  // namespace

int main() {
  {
    const auto t0 = Clock::now();
    verify::Report r;
    for (int T : kTs) {
      for (double m : kMs) r.append(verify::check_schedule_identities(T, m));
    }
    const double secs = since(t0);
    double err = 0.0;
    bool ok = true;
    for (const auto& c : r.checks) {
      if (c.name.rfind("composition", 0) == 0) continue;
      ok = ok && c.pass;
      err = std::max(err, c.error);
    }
    report(1, "schedule_algebra", ok && err < 1e-9 && secs < 1.0,
           fmt("20 (T,m) pairs, max rel error %.2e, %.3f s", err, secs));

    double comp = 0.0;
    bool comp_ok = true;
    int n = 0;
    for (const auto& c : r.checks) {
      if (c.name.rfind("composition", 0) != 0) continue;
      ++n;
      comp_ok = comp_ok && c.pass;
      comp = std::max(comp, c.error);
    }
    report(2, "composition", n == 20 && comp_ok && comp < 1e-9, fmt("%.0f grids, max error %.2e", n, comp));
  }
  {
    const auto t0 = Clock::now();
    const auto r = verify::check_posterior_bayes_random(10, 0.1, 10, 2024);
    const double secs = since(t0);
    report(3, "bayes_posterior", r.ok() && secs < 10.0,
           fmt("10 tuples, max rel error %.2e, %.2f s", r.max_error(), secs));
  }
  {
    verify::Report r;
    for (auto [T, m] : {std::pair{10, 0.1}, std::pair{20, 1e-2}, std::pair{100, 1.0}}) {
      for (int t : {1, T / 2, T - 1}) r.append(verify::check_forward_moments(T, m, t, 200000, mix_seed(T, t)));
    }
    report(4, "forward_moments", r.ok(), fmt("%.0f checks at 2e5 samples, %.0f failed", r.checks.size(), r.failures()));
  }
  {
    verify::Report r = verify::check_oracle_denoiser(20, 1e-2, 100, 16, 5);
    r.append(verify::check_oracle_denoiser(10, 1.0, 100, 16, 6));
    report(5, "oracle_denoiser", r.ok(), fmt("max abs error %.2e", r.max_error()));
  }
  {
    const auto r = verify::check_gradients(11);
    report(6, "gradients", r.ok(),
           fmt("%.0f cases, max rel error %.2e", r.checks.size(), r.max_error()));
  }

  SynthParams p;
  p.n_items = 100;
  p.p_noise = 0.0;
  p.n_users = 2000;
  p.min_len = p.max_len = 11;
  const DatasetSplits splits = prepare_dataset(synth_markov(p), 10);

  const Trained full = train_variant("full", splits);
  report(7, "learnability",
         full.test.hr(10) >= 0.95 && full.test.ndcg(10) >= 0.80 && full.ckpt.epoch <= 50 && full.seconds < 600,
         fmt("test HR@10 %.4f NDCG@10 %.4f, best epoch %.0f, %.1f s", full.test.hr(10), full.test.ndcg(10),
             full.ckpt.epoch, full.seconds));

  {
    const Trained no_diff = train_variant("wo_ldiff", splits);
    const Trained mean_pool = train_variant("wo_enc", splits);
    const double random_hr = 10.0 / static_cast<double>(splits.n_items);
    const bool collapse = no_diff.test.hr(10) <= 2.0 * random_hr;
    const bool weaker = mean_pool.test.ndcg(10) < full.test.ndcg(10) && mean_pool.test.hr(10) <= full.test.hr(10);
    report(8, "ablation_ordering", collapse && weaker,
           fmt("wo_ldiff HR@10 %.4f (2x random %.2f); wo_enc NDCG@10 %.4f vs full %.4f", no_diff.test.hr(10),
               2.0 * random_hr, mean_pool.test.ndcg(10), full.test.ndcg(10)));
  }

  {
    SynthParams big = p;
    big.n_users = 10000;
    big.seed = 99;
    const DatasetSplits timing_splits = prepare_dataset(synth_markov(big), 10);
    std::vector<Sample> samples(timing_splits.test.begin(),
                                timing_splits.test.begin() + std::min<std::size_t>(10000, timing_splits.test.size()));
    const Model model = restore_model(full.ckpt);
    const BridgeSchedule s = build_schedule(full.ckpt.config.T, full.ckpt.config.m);
    const auto t = time_inference(Recommender<double>(model, s, inference_options(full.ckpt.config)), samples, 3);
    const double ratio = t.full_seconds / t.encoder_seconds;
    report(9, "inference_cost", timing_splits.item_names == splits.item_names && samples.size() == 10000 && ratio <= 5.0,
           fmt("%.0f samples, encoder %.3f s, full %.3f s, ratio %.2f", samples.size(), t.encoder_seconds,
               t.full_seconds, ratio));
  }

  report(10, "metric_units", ndcg_at(3, 10) == 0.5 && ndcg_at(1, 10) == 1.0 && ndcg_at(11, 10) == 0.0,
         fmt("NDCG@10 at ranks 3/1/11 = %g/%g/%g", ndcg_at(3, 10), ndcg_at(1, 10), ndcg_at(11, 10)));

  std::cout << (failures == 0 ? "ALL PASS" : std::to_string(failures) + " FAILED") << std::endl;
  return failures == 0 ? 0 : 1;
}
