#include "test_util.hpp"

#include <sstream>

using namespace bbdrec;
using bbdrec::testing::small_cycle_splits;

namespace {

TrainConfig small_config() {
  TrainConfig c;
  c.T = 5;
  c.m = 0.1;
  c.d = 8;
  c.L = 10;
  c.batch_size = 32;
  c.max_epochs = 3;
  c.patience = 5;
  c.dropout = 0.0;
  c.lr = 1e-2;
  c.seed = 7;
  return c;
}

const DatasetSplits& splits() {
  static const DatasetSplits s = small_cycle_splits(200);
  return s;
}

}  // namespace

TEST(Config, MissingRequiredKeysAreNamed) {
  try {
    parse_config(nlohmann::json{{"m", 0.01}});
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("'T'"), std::string::npos);
  }
}

TEST(Config, AllProblemsAreReportedTogether) {
  try {
    parse_config(nlohmann::json{{"T", 1}, {"m", -1.0}, {"colour", "red"}, {"lr", "fast"}});
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    for (const char* needle : {"colour", "'lr'", "T must be", "m must be"}) {
      EXPECT_NE(msg.find(needle), std::string::npos) << needle;
    }
    EXPECT_GE(e.problems().size(), 4u);
  }
}

TEST(Config, RoundTripsThroughJson) {
  TrainConfig c = small_config();
  c.variant = "wo_enc";
  const TrainConfig back = parse_config(to_json(c), false);
  EXPECT_EQ(to_json(back), to_json(c));
  const TrainConfig preset = parse_config(to_json(c));
  EXPECT_EQ(preset.encoder_mode, "mean_pool");
}

TEST(Config, VariantPresets) {
  auto with = [](const char* v) {
    return parse_config(nlohmann::json{{"T", 10}, {"m", 0.1}, {"variant", v}});
  };
  EXPECT_TRUE(with("w_con").conditional);
  EXPECT_EQ(with("wo_bb").lambda1, 0.0);
  EXPECT_TRUE(with("wo_bb").direct_retrieval);
  EXPECT_EQ(with("wo_enc").encoder_mode, "mean_pool");
  EXPECT_EQ(with("wo_ldiff").lambda1, 0.0);
  EXPECT_EQ(with("wo_lrec").lambda2, 0.0);
  EXPECT_THROW(with("nope"), ConfigError);
  EXPECT_EQ(parse_selection_metric("HR@10").k, 10);
  EXPECT_THROW(parse_selection_metric("MRR@10"), std::invalid_argument);
  EXPECT_THROW(parse_selection_metric("NDCG@0"), std::invalid_argument);
}

TEST(TrainStep, ZeroLossWeightsOnlyApplyWeightDecay) {
  for (double wd : {0.0, 0.1}) {
    TrainConfig c = small_config();
    c.lambda1 = c.lambda2 = 0.0;
    c.weight_decay = wd;
    TrainState<double> state(c, splits().n_items);
    const Vector<double> before = state.model.params();
    Rng rng(1);
    const auto parts = train_step<double>(state, std::span<const Sample>(splits().train.data(), 16), rng);
    EXPECT_EQ(parts.total, 0.0);
    const Vector<double> expect = before * (1.0 - c.lr * wd);
    EXPECT_NEAR((state.model.params() - expect).cwiseAbs().maxCoeff(), 0.0, 1e-15);
  }
}

TEST(TrainStep, DeterministicForSeed) {
  auto run = [] {
    TrainState<double> state(small_config(), splits().n_items);
    Rng rng(3);
    std::vector<double> losses;
    for (int i = 0; i < 5; ++i) {
      losses.push_back(train_step<double>(state, std::span<const Sample>(splits().train.data(), 32), rng).total);
    }
    return std::make_pair(losses, Vector<double>(state.model.params()));
  };
  const auto a = run(), b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(TrainStep, TwoHundredStepsReduceTheLoss) {
  TrainState<double> state(small_config(), splits().n_items);
  const std::span<const Sample> batch(splits().train.data(), 64);
  Rng probe(100);
  const auto draws = draw_step<double>(state.schedule, 64, state.model.shape().dim, probe, false);
  auto loss = [&] {
    HistoryBatch h(10);
    std::vector<ItemId> y;
    for (const auto& s : batch) {
      h.push(s.history);
      y.push_back(s.target);
    }
    return compute_objective(state.model, state.schedule, h, y, draws, state.objective()).total;
  };
  const double before = loss();
  Rng rng(4);
  for (int i = 0; i < 200; ++i) train_step<double>(state, batch, rng);
  EXPECT_LT(loss(), before);
}

TEST(TrainStep, NonFiniteLossRaises) {
  TrainState<double> state(small_config(), splits().n_items);
  // row 0 of the item table is padding, so use a denoiser bias
  row_view(state.model.params(), state.model.layout().find("denoiser.b2"))[0] = std::nan("");
  Rng rng(1);
  EXPECT_THROW(train_step<double>(state, std::span<const Sample>(splits().train.data(), 8), rng), TrainingError);
  EXPECT_THROW(train_step<double>(state, std::span<const Sample>(), rng), std::invalid_argument);
}

TEST(Train, PatienceOneStopsAfterTwoEpochs) {
  TrainConfig c = small_config();
  c.patience = 1;
  c.max_epochs = 10;
  Validator<double> flat = [](const Model&, const BridgeSchedule&, int) { return 0.25; };
  const auto r = train<double>(c, splits(), flat);
  EXPECT_EQ(r.epochs_run, 2);
  EXPECT_TRUE(r.early_stopped);
  EXPECT_EQ(r.best.epoch, 1);
}

TEST(Train, KeepsBestEpochParameters) {
  TrainConfig c = small_config();
  c.patience = 2;
  c.max_epochs = 10;
  const std::vector<double> scores{0.1, 0.5, 0.3, 0.2, 0.9};
  std::vector<Vector<double>> seen;
  Validator<double> v = [&](const Model& m, const BridgeSchedule&, int epoch) {
    seen.push_back(m.params());
    return scores[epoch - 1];
  };
  std::ostringstream log;
  const auto r = train<double>(c, splits(), v, &log);
  EXPECT_EQ(r.epochs_run, 4);
  EXPECT_EQ(r.best.epoch, 2);
  EXPECT_EQ(r.best.params, seen[1]);
  EXPECT_EQ(r.best.validation, (std::vector<double>{0.1, 0.5}));
  std::istringstream lines(log.str());
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("epoch").get<int>(), ++n);
    for (const char* key : {"loss", "l_diff", "l_rec", "valid", "best_epoch", "metric"}) EXPECT_TRUE(j.contains(key));
  }
  EXPECT_EQ(n, 4);
}

TEST(Train, RejectsEmptyOrInvalidInput) {
  DatasetSplits empty = splits();
  empty.train.clear();
  EXPECT_THROW(train<double>(small_config(), empty), std::invalid_argument);
  TrainConfig bad = small_config();
  bad.T = 1;
  EXPECT_THROW(train<double>(bad, splits()), ConfigError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  TrainConfig c = small_config();
  c.max_epochs = 2;
  const auto r = train<double>(c, splits());
  std::stringstream buf;
  save_checkpoint(r.best, buf);
  const ModelCheckpoint back = load_checkpoint(buf);
  EXPECT_EQ(back.params, r.best.params);
  EXPECT_EQ(back.adam_m, r.best.adam_m);
  EXPECT_EQ(back.adam_v, r.best.adam_v);
  EXPECT_EQ(back.adam_steps, r.best.adam_steps);
  EXPECT_EQ(back.epoch, r.best.epoch);
  EXPECT_EQ(back.validation, r.best.validation);
  EXPECT_EQ(back.item_names, r.best.item_names);
  EXPECT_EQ(to_json(back.config), to_json(r.best.config));

  // same metric from the restored model
  const Model a = restore_model(r.best), b = restore_model(back);
  const auto sched = build_schedule(c.T, c.m);
  const auto v = default_validator<double>(c, splits());
  EXPECT_EQ(v(a, sched, 0), v(b, sched, 0));
  EXPECT_EQ(v(b, sched, 0), r.best.validation.back());
}

TEST(Checkpoint, RejectsCorruptFiles) {
  std::stringstream junk("not a checkpoint at all");
  EXPECT_THROW(load_checkpoint(junk), CheckpointError);
  TrainState<double> state(small_config(), splits().n_items);
  std::stringstream buf;
  save_checkpoint(snapshot(state, splits().item_names, 1, {0.0}), buf);
  std::string bytes = buf.str();
  bytes.resize(bytes.size() - 8);
  std::stringstream cut(bytes);
  EXPECT_THROW(load_checkpoint(cut), CheckpointError);
  EXPECT_THROW(load_checkpoint(std::string("/nonexistent/ckpt.bin")), CheckpointError);
}
