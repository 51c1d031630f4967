#pragma once

#include "bbdrec/config.hpp"
#include "bbdrec/data.hpp"
#include "bbdrec/inference.hpp"
#include "bbdrec/model.hpp"
#include "bbdrec/objective.hpp"
#include "bbdrec/optimizer.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace bbdrec {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Everything needed to resume or serve a model.
template <typename Scalar>
struct BasicCheckpoint {
  TrainConfig config;
  ModelShape shape;
  std::vector<std::string> item_names;  // index = internal id
  Vector<Scalar> params;
  Vector<Scalar> adam_m, adam_v;
  std::uint64_t adam_steps = 0;
  int epoch = 0;                       // 1-based epoch the parameters come from
  std::vector<double> validation;      // selection metric per epoch, up to `epoch`
};

using ModelCheckpoint = BasicCheckpoint<double>;

template <typename Scalar>
struct TrainState {
  TrainConfig config;
  BridgeSchedule schedule;
  BasicModel<Scalar> model;
  AdamW<Scalar> optimizer;

  TrainState(const TrainConfig& c, Index n_items)
      : config(c),
        schedule(build_schedule(c.T, c.m)),
        model(model_shape(c, n_items)),
        optimizer(model.layout().total(), AdamWOptions{c.lr, c.weight_decay}) {
    model.init(mix_seed(c.seed, 1));
  }

  ObjectiveOptions objective() const { return {config.lambda1, config.lambda2, config.stop_grad_target}; }
};

/// One AdamW step on a batch. Draws t and eps per sample from `rng`.
template <typename Scalar>
LossParts train_step(TrainState<Scalar>& state, std::span<const Sample* const> batch, Rng& rng) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  const Index len = static_cast<Index>(batch.front()->history.size());
  HistoryBatch histories(len);
  std::vector<ItemId> targets;
  targets.reserve(batch.size());
  for (const Sample* s : batch) {
    histories.push(s->history);
    targets.push_back(s->target);
  }
  const auto draws = draw_step<Scalar>(state.schedule, histories.size(), state.model.shape().dim, rng,
                                       state.config.dropout > 0.0);
  Vector<Scalar> grad = Vector<Scalar>::Zero(state.model.layout().total());
  const LossParts parts = compute_objective(state.model, state.schedule, histories, targets, draws,
                                            state.objective(), &grad);
  if (!std::isfinite(parts.total) || !grad.allFinite()) {
    std::ostringstream msg;
    msg << "non-finite loss at optimizer step " << state.optimizer.steps() + 1 << ": diffusion=" << parts.diffusion
        << " rec=" << parts.rec << " total=" << parts.total << " (grad finite: " << grad.allFinite() << ")";
    throw TrainingError(msg.str());
  }
  state.optimizer.step(state.model.params(), grad);
  return parts;
}

template <typename Scalar>
LossParts train_step(TrainState<Scalar>& state, std::span<const Sample> batch, Rng& rng) {
  std::vector<const Sample*> ptrs;
  ptrs.reserve(batch.size());
  for (const auto& s : batch) ptrs.push_back(&s);
  return train_step<Scalar>(state, std::span<const Sample* const>(ptrs), rng);
}

/// Selection metric of a model on the validation split, higher is better.
template <typename Scalar>
using Validator = std::function<double(const BasicModel<Scalar>&, const BridgeSchedule&, int epoch)>;

inline InferenceOptions inference_options(const TrainConfig& c) {
  InferenceOptions o;
  o.noise = parse_noise_mode(c.inference_mode);
  o.direct_retrieval = c.direct_retrieval;
  o.seed = mix_seed(c.seed, 2);
  o.batch_size = c.eval_batch_size;
  return o;
}

template <typename Scalar>
Validator<Scalar> default_validator(const TrainConfig& c, const DatasetSplits& splits) {
  const SelectionMetric metric = parse_selection_metric(c.selection_metric);
  const InferenceOptions io = inference_options(c);
  return [&splits, metric, io](const BasicModel<Scalar>& model, const BridgeSchedule& s, int) {
    Recommender<Scalar> rec(model, s, io);
    EvalOptions eo;
    eo.ks = {metric.k};
    eo.slices = false;
    const EvalReport r = evaluate(rec, splits.valid, splits.popularity, eo);
    return metric.name == "HR" ? r.hr(metric.k) : r.ndcg(metric.k);
  };
}

struct EpochLog {
  int epoch = 0;
  double loss = 0.0, diffusion = 0.0, rec = 0.0;
  double validation = 0.0;
  int best_epoch = 0;
};

inline nlohmann::json to_json(const EpochLog& e, const std::string& metric) {
  return {{"epoch", e.epoch},     {"loss", e.loss},         {"l_diff", e.diffusion}, {"l_rec", e.rec},
          {"metric", metric},     {"valid", e.validation}, {"best_epoch", e.best_epoch}};
}

template <typename Scalar>
struct TrainResult {
  BasicCheckpoint<Scalar> best;
  std::vector<EpochLog> history;
  int epochs_run = 0;
  bool early_stopped = false;
};

template <typename Scalar>
BasicCheckpoint<Scalar> snapshot(const TrainState<Scalar>& state, const std::vector<std::string>& item_names,
                                 int epoch, std::vector<double> validation) {
  BasicCheckpoint<Scalar> c;
  c.config = state.config;
  c.shape = state.model.shape();
  c.item_names = item_names;
  c.params = state.model.params();
  c.adam_m = state.optimizer.first_moment();
  c.adam_v = state.optimizer.second_moment();
  c.adam_steps = state.optimizer.steps();
  c.epoch = epoch;
  c.validation = std::move(validation);
  return c;
}

/// Rebuilds a model from a checkpoint.
template <typename Scalar>
BasicModel<Scalar> restore_model(const BasicCheckpoint<Scalar>& c) {
  BasicModel<Scalar> model(c.shape);
  if (model.params().size() != c.params.size()) throw std::invalid_argument("checkpoint does not match its model shape");
  model.params() = c.params;
  return model;
}

/// Epoch loop with early stopping: training ends once the validation metric
/// has not improved for `patience` consecutive epochs, or at max_epochs. The
/// returned checkpoint holds the best-validation parameters.
template <typename Scalar>
TrainResult<Scalar> train(const TrainConfig& config, const DatasetSplits& splits, Validator<Scalar> validator = {},
                          std::ostream* log = nullptr) {
  if (splits.train.empty()) throw std::invalid_argument("train: empty training split");
  if (!validator && splits.valid.empty()) throw std::invalid_argument("train: empty validation split");
  if (const auto problems = validate(config); !problems.empty()) throw ConfigError(problems);
  if (!validator) validator = default_validator<Scalar>(config, splits);

  TrainState<Scalar> state(config, splits.n_items);
  Rng rng(mix_seed(config.seed, 3));
  std::vector<std::size_t> order(splits.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<const Sample*> batch;

  TrainResult<Scalar> result;
  std::vector<double> validation;
  double best = -std::numeric_limits<double>::infinity();
  int best_epoch = 0, stale = 0;
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss = 0.0, diff = 0.0, rec = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(config.batch_size));
      batch.clear();
      for (std::size_t i = begin; i < end; ++i) batch.push_back(&splits.train[order[i]]);
      const LossParts p = train_step<Scalar>(state, batch, rng);
      const double w = static_cast<double>(end - begin);
      loss += w * p.total;
      diff += w * p.diffusion;
      rec += w * p.rec;
    }
    const double n = static_cast<double>(order.size());
    const double metric = validator(state.model, state.schedule, epoch);
    validation.push_back(metric);
    if (metric > best || best_epoch == 0) {
      best = metric;
      best_epoch = epoch;
      stale = 0;
      result.best = snapshot(state, splits.item_names, epoch, validation);
    } else {
      ++stale;
    }
    EpochLog e{epoch, loss / n, diff / n, rec / n, metric, best_epoch};
    result.history.push_back(e);
    result.epochs_run = epoch;
    if (log) *log << to_json(e, config.selection_metric).dump() << '\n' << std::flush;
    if (stale >= config.patience) {
      result.early_stopped = true;
      break;
    }
  }
  return result;
}

}  // namespace bbdrec
