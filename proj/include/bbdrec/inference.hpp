#pragma once

#include "bbdrec/bridge_diffusion.hpp"
#include "bbdrec/data.hpp"
#include "bbdrec/model.hpp"
#include "bbdrec/tensor.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <map>
#include <numeric>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bbdrec {

struct InferenceOptions {
  NoiseMode noise = NoiseMode::stochastic;
  bool direct_retrieval = false;  // rank with e_s itself, skipping the reverse chain
  std::uint64_t seed = 0;
  Index batch_size = 1024;
};

struct ScoredItem {
  ItemId item = 0;
  double score = 0.0;
};

/// Reverse-diffusion inference over a trained model: x_T = e_s, run the
/// bridge backwards to x_0 and score every item by inner product with it.
template <typename Scalar>
class Recommender {
 public:
  Recommender(const BasicModel<Scalar>& model, const BridgeSchedule& schedule, InferenceOptions opt = {})
      : model_(&model), schedule_(&schedule), opt_(opt) {
    if (model.denoiser().shape().max_step < schedule.T) {
      throw std::invalid_argument("recommender: schedule has more steps than the denoiser supports");
    }
  }

  const InferenceOptions& options() const { return opt_; }
  const BasicModel<Scalar>& model() const { return *model_; }

  /// Predicted target embeddings, one row per history. `keys[r]` selects the
  /// noise stream of row r, so a sample's prediction is independent of batching.
  Matrix<Scalar> predict(const HistoryBatch& batch, std::span<const std::uint64_t> keys) const {
    const Matrix<Scalar> es = model_->encode(batch);
    if (opt_.direct_retrieval) return es;
    std::vector<Rng> rngs;
    if (opt_.noise == NoiseMode::stochastic) {
      if (static_cast<Index>(keys.size()) != batch.size()) throw std::invalid_argument("predict: one key per row");
      rngs.reserve(keys.size());
      for (const auto key : keys) rngs.emplace_back(mix_seed(opt_.seed, key));
    }
    const auto& den = model_->denoiser();
    const auto& params = model_->params();
    auto step = [&](const Matrix<Scalar>& x, int t) { return den.forward_step(params, x, t, &es); };
    return generate_batch<Scalar>(*schedule_, step, es, rngs, opt_.noise);
  }

  Matrix<Scalar> encode_only(const HistoryBatch& batch) const { return model_->encode(batch); }

  /// Column j scores item j + 1.
  Matrix<Scalar> score(const Matrix<Scalar>& pred) const {
    const Index vocab = model_->shape().n_items;
    return pred * model_->output_table().bottomRows(vocab).transpose();
  }

  /// Top-k items for one history, score-descending, ties by ascending id.
  std::vector<ScoredItem> recommend(std::span<const ItemId> history, Index k, std::uint64_t key = 0) const {
    HistoryBatch batch(static_cast<Index>(history.size()));
    batch.push(history);
    const std::uint64_t keys[1] = {key};
    const Matrix<Scalar> scores = score(predict(batch, keys));
    return top_k(scores.row(0), k);
  }

  template <typename Row>
  static std::vector<ScoredItem> top_k(const Row& scores, Index k) {
    const Index vocab = scores.size();
    k = std::clamp<Index>(k, 0, vocab);
    std::vector<ItemId> ids(vocab);
    std::iota(ids.begin(), ids.end(), ItemId{1});
    auto better = [&](ItemId a, ItemId b) {
      const Scalar sa = scores[a - 1];
      const Scalar sb = scores[b - 1];
      return sa != sb ? sa > sb : a < b;
    };
    std::partial_sort(ids.begin(), ids.begin() + k, ids.end(), better);
    std::vector<ScoredItem> out;
    out.reserve(k);
    for (Index i = 0; i < k; ++i) out.push_back({ids[i], static_cast<double>(scores[ids[i] - 1])});
    return out;
  }

 private:
  const BasicModel<Scalar>* model_;
  const BridgeSchedule* schedule_;
  InferenceOptions opt_;
};

// --- metrics -------------------------------------------------------------

/// 1-based rank of `target` when items are sorted by score descending with
/// ties broken by ascending id. scores[j] belongs to item j + 1.
template <typename Row>
Index rank_of_target(const Row& scores, ItemId target) {
  const auto ts = scores[target - 1];
  Index rank = 1;
  for (Index j = 0; j < scores.size(); ++j) {
    const auto s = scores[j];
    if (s > ts || (s == ts && j < target - 1)) ++rank;
  }
  return rank;
}

inline double hit_at(Index rank, int k) { return rank <= k ? 1.0 : 0.0; }

inline double ndcg_at(Index rank, int k) {
  return rank <= k ? 1.0 / std::log2(static_cast<double>(rank) + 1.0) : 0.0;
}

struct SliceMetrics {
  std::string slice;
  Index count = 0;
  std::map<int, double> hr;
  std::map<int, double> ndcg;
};

struct EvalReport {
  std::vector<int> ks;
  std::vector<SliceMetrics> slices;
  Index n_samples = 0;
  double total_seconds = 0.0;
  double per_sample_seconds = 0.0;

  const SliceMetrics& slice(const std::string& name) const {
    for (const auto& s : slices) {
      if (s.slice == name) return s;
    }
    throw std::out_of_range("no slice '" + name + "' in report");
  }
  double hr(int k, const std::string& name = "overall") const { return slice(name).hr.at(k); }
  double ndcg(int k, const std::string& name = "overall") const { return slice(name).ndcg.at(k); }
};

struct EvalOptions {
  std::vector<int> ks{10, 20};
  double popular_fraction = 0.2;  // top share of items by training frequency
  Index short_history_max = 5;    // histories of 1..5 items are "short"
  bool slices = true;
};

/// Items in the top `fraction` by training-split frequency (ties by lower id).
inline std::vector<char> popular_items(const std::vector<std::int64_t>& popularity, double fraction) {
  const Index vocab = static_cast<Index>(popularity.size()) - 1;
  std::vector<ItemId> ids(vocab);
  std::iota(ids.begin(), ids.end(), ItemId{1});
  std::stable_sort(ids.begin(), ids.end(), [&](ItemId a, ItemId b) { return popularity[a] > popularity[b]; });
  const auto n_pop = static_cast<Index>(std::ceil(fraction * static_cast<double>(vocab)));
  std::vector<char> popular(vocab + 1, 0);
  for (Index i = 0; i < n_pop && i < vocab; ++i) popular[ids[i]] = 1;
  return popular;
}

// scorer(batch, keys) -> B x |V| score matrix.
template <typename Scalar>
using Scorer = std::function<Matrix<Scalar>(const HistoryBatch&, std::span<const std::uint64_t>)>;

/// HR@K / NDCG@K over full-vocabulary rankings, overall and per slice.
/// `keys` default to the sample's position in `samples`.
template <typename Scalar>
EvalReport evaluate(const Scorer<Scalar>& scorer, const std::vector<Sample>& samples,
                    const std::vector<std::int64_t>& popularity, const EvalOptions& opt = {},
                    Index batch_size = 1024) {
  if (samples.empty()) throw std::invalid_argument("evaluate: empty split");
  if (opt.ks.empty()) throw std::invalid_argument("evaluate: no cutoffs requested");
  for (int k : opt.ks) {
    if (k < 1) throw std::invalid_argument("evaluate: cutoffs must be >= 1");
  }
  std::vector<int> ks = opt.ks;
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());

  std::vector<std::string> names{"overall"};
  if (opt.slices) names.insert(names.end(), {"popular", "long_tail", "short_history", "long_history"});
  std::vector<SliceMetrics> acc(names.size());
  for (std::size_t i = 0; i < names.size(); ++i) {
    acc[i].slice = names[i];
    for (int k : ks) acc[i].hr[k] = acc[i].ndcg[k] = 0.0;
  }
  const std::vector<char> popular =
      opt.slices ? popular_items(popularity, opt.popular_fraction) : std::vector<char>{};

  const auto t0 = std::chrono::steady_clock::now();
  const Index len = static_cast<Index>(samples.front().history.size());
  for (std::size_t begin = 0; begin < samples.size(); begin += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(samples.size(), begin + static_cast<std::size_t>(batch_size));
    HistoryBatch batch(len);
    std::vector<std::uint64_t> keys;
    for (std::size_t i = begin; i < end; ++i) {
      batch.push(samples[i].history);
      keys.push_back(i);
    }
    const Matrix<Scalar> scores = scorer(batch, keys);
    for (std::size_t i = begin; i < end; ++i) {
      const Sample& s = samples[i];
      const Index rank = rank_of_target(scores.row(static_cast<Index>(i - begin)), s.target);
      auto add = [&](std::size_t slot) {
        ++acc[slot].count;
        for (int k : ks) {
          acc[slot].hr[k] += hit_at(rank, k);
          acc[slot].ndcg[k] += ndcg_at(rank, k);
        }
      };
      add(0);
      if (opt.slices) {
        add(popular[s.target] ? 1 : 2);
        add(s.history_length() <= opt.short_history_max ? 3 : 4);
      }
    }
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  EvalReport report;
  report.ks = ks;
  report.n_samples = static_cast<Index>(samples.size());
  report.total_seconds = seconds;
  report.per_sample_seconds = seconds / static_cast<double>(samples.size());
  for (auto& s : acc) {
    if (s.count > 0) {
      for (int k : ks) {
        s.hr[k] /= static_cast<double>(s.count);
        s.ndcg[k] /= static_cast<double>(s.count);
      }
    }
    report.slices.push_back(std::move(s));
  }
  return report;
}

template <typename Scalar>
EvalReport evaluate(const Recommender<Scalar>& rec, const std::vector<Sample>& samples,
                    const std::vector<std::int64_t>& popularity, const EvalOptions& opt = {}) {
  Scorer<Scalar> scorer = [&](const HistoryBatch& b, std::span<const std::uint64_t> keys) {
    return rec.score(rec.predict(b, keys));
  };
  return evaluate<Scalar>(scorer, samples, popularity, opt, rec.options().batch_size);
}

/// Stable text form, one metric per line: `<metric> <slice> <k> <value>`.
inline void write_report_text(const EvalReport& r, std::ostream& out) {
  const auto flags = out.flags();
  out << std::fixed << std::setprecision(6);
  for (const auto& s : r.slices) {
    for (int k : r.ks) out << "HR " << s.slice << ' ' << k << ' ' << s.hr.at(k) << '\n';
    for (int k : r.ks) out << "NDCG " << s.slice << ' ' << k << ' ' << s.ndcg.at(k) << '\n';
  }
  out.flags(flags);
}

/// Tab-separated table `metric slice k value count`; timings are left out so
/// the file is reproducible byte for byte.
inline void write_report_table(const EvalReport& r, std::ostream& out) {
  const auto flags = out.flags();
  out << "metric\tslice\tk\tvalue\tcount\n" << std::fixed << std::setprecision(8);
  for (const auto& s : r.slices) {
    for (int k : r.ks) out << "HR\t" << s.slice << '\t' << k << '\t' << s.hr.at(k) << '\t' << s.count << '\n';
    for (int k : r.ks) out << "NDCG\t" << s.slice << '\t' << k << '\t' << s.ndcg.at(k) << '\t' << s.count << '\n';
  }
  out.flags(flags);
}

struct InferenceTiming {
  double encoder_seconds = 0.0;  // encode + score + rank
  double full_seconds = 0.0;     // encode + reverse chain + score + rank
  int repeats = 0;
  std::vector<double> encoder_runs, full_runs;
};

/// Mean wall-clock time of a full pass over `samples`, with and without the
/// reverse chain.
template <typename Scalar>
InferenceTiming time_inference(const Recommender<Scalar>& rec, const std::vector<Sample>& samples, int repeats = 5) {
  if (samples.empty()) return {0.0, 0.0, repeats, {}, {}};
  if (repeats < 1) throw std::invalid_argument("time_inference: repeats must be >= 1");
  const Index len = static_cast<Index>(samples.front().history.size());
  const Index bs = rec.options().batch_size;
  volatile Index sink = 0;

  auto run = [&](bool diffusion) {
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t begin = 0; begin < samples.size(); begin += static_cast<std::size_t>(bs)) {
      const std::size_t end = std::min(samples.size(), begin + static_cast<std::size_t>(bs));
      HistoryBatch batch(len);
      std::vector<std::uint64_t> keys;
      for (std::size_t i = begin; i < end; ++i) {
        batch.push(samples[i].history);
        keys.push_back(i);
      }
      const Matrix<Scalar> pred = diffusion ? rec.predict(batch, keys) : rec.encode_only(batch);
      const Matrix<Scalar> scores = rec.score(pred);
      for (std::size_t i = begin; i < end; ++i) {
        sink = sink + rank_of_target(scores.row(static_cast<Index>(i - begin)), samples[i].target);
      }
    }
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  InferenceTiming timing;
  timing.repeats = repeats;
  for (int r = 0; r < repeats; ++r) {
    timing.encoder_runs.push_back(run(false));
    timing.full_runs.push_back(run(true));
  }
  timing.encoder_seconds = std::accumulate(timing.encoder_runs.begin(), timing.encoder_runs.end(), 0.0) / repeats;
  timing.full_seconds = std::accumulate(timing.full_runs.begin(), timing.full_runs.end(), 0.0) / repeats;
  return timing;
}

}  // namespace bbdrec
